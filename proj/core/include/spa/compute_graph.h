// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "spa/onnx_model.h"

namespace spa {

using NodeId = int32_t;
inline constexpr NodeId kNoNode = -1;

enum class NodeKind { kOperator, kData, kParameter };

const char* to_string(NodeKind kind);

/// A node of the tripartite graph. Operators refer back to their OperatorSpec;
/// data and parameter nodes carry the value name and its inferred shape.
struct CGNode {
  NodeId id = kNoNode;
  NodeKind kind = NodeKind::kData;
  std::string name;
  Shape shape;     // empty for operators
  int op_index = -1;  // index into the model's node list, operators only
};

/// Directed edge. Value→operator edges carry the input slot; operator→value
/// edges the output slot.
struct CGEdge {
  NodeId from = kNoNode;
  NodeId to = kNoNode;
  int slot = 0;
};

/// One place a value is attached to an operator.
struct ValueUse {
  NodeId op = kNoNode;
  int slot = 0;
  bool is_output = false;
};

class ComputationalGraph {
 public:
  /// Operators get ids 0..n-1 in topological order; values follow in order of
  /// first appearance (graph inputs, then operator inputs/outputs).
  static ComputationalGraph build(const ModelIR& ir);

  std::span<const CGNode> nodes() const { return nodes_; }
  const CGNode& node(NodeId id) const;
  std::span<const CGEdge> edges() const { return edges_; }

  std::span<const NodeId> operators() const { return operators_; }
  const OperatorSpec& op_spec(NodeId op) const;
  /// Value node per input slot (kNoNode for absent optional inputs).
  std::span<const NodeId> op_inputs(NodeId op) const;
  std::span<const NodeId> op_outputs(NodeId op) const;

  /// Every attachment of a value to an operator, producer first.
  std::span<const ValueUse> uses(NodeId value) const;
  /// Operators producing or consuming `value`, deduplicated, topological order.
  std::vector<NodeId> neighbors(NodeId value) const;

  NodeId find_value(const std::string& name) const;
  NodeId value_id(const std::string& name) const;  // throws when unknown

  bool is_graph_input(NodeId value) const;
  bool is_graph_output(NodeId value) const;

  size_t num_operators() const { return operators_.size(); }
  size_t num_data() const { return num_data_; }
  size_t num_parameters() const { return num_params_; }
  int64_t opset_version() const { return opset_version_; }

  /// Graphviz rendering: operators as boxes, data as ellipses, parameters as
  /// filled notes.
  std::string to_dot() const;

 private:
  NodeId add_value(const std::string& name, NodeKind kind, const Shape& shape);

  std::vector<CGNode> nodes_;
  std::vector<CGEdge> edges_;
  std::vector<NodeId> operators_;
  std::vector<OperatorSpec> specs_;
  std::vector<std::vector<NodeId>> op_inputs_;
  std::vector<std::vector<NodeId>> op_outputs_;
  std::vector<std::vector<ValueUse>> uses_;
  std::map<std::string, NodeId> by_name_;
  std::vector<bool> graph_input_;
  std::vector<bool> graph_output_;
  size_t num_data_ = 0;
  size_t num_params_ = 0;
  int64_t opset_version_ = 13;
};

inline ComputationalGraph build_graph(const ModelIR& ir) { return ComputationalGraph::build(ir); }

}  // namespace spa
