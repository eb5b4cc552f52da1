// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "spa/compute_graph.h"

#include <algorithm>
#include <sstream>

#include "spa/error.h"

namespace spa {

const char* to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::kOperator:
      return "operator";
    case NodeKind::kData:
      return "data";
    case NodeKind::kParameter:
      return "parameter";
  }
  return "?";
}

NodeId ComputationalGraph::add_value(const std::string& name, NodeKind kind, const Shape& shape) {
  if (auto it = by_name_.find(name); it != by_name_.end()) return it->second;
  const auto id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(CGNode{id, kind, name, shape, -1});
  uses_.emplace_back();
  graph_input_.push_back(false);
  graph_output_.push_back(false);
  by_name_.emplace(name, id);
  (kind == NodeKind::kParameter ? num_params_ : num_data_)++;
  return id;
}

ComputationalGraph ComputationalGraph::build(const ModelIR& ir) {
  ComputationalGraph g;
  g.opset_version_ = ir.opset_version;
  const auto n_ops = ir.nodes.size();
  for (size_t i = 0; i < n_ops; ++i) {
    const auto& op = ir.nodes[i];
    g.nodes_.push_back(CGNode{static_cast<NodeId>(i), NodeKind::kOperator, op.name, {}, static_cast<int>(i)});
    g.operators_.push_back(static_cast<NodeId>(i));
    g.specs_.push_back(op);
    g.uses_.emplace_back();
    g.graph_input_.push_back(false);
    g.graph_output_.push_back(false);
  }
  auto kind_of = [&ir](const std::string& name) {
    return ir.is_initializer(name) ? NodeKind::kParameter : NodeKind::kData;
  };
  for (const auto& v : ir.graph_inputs) {
    const NodeId id = g.add_value(v.name, NodeKind::kData, ir.shape_of(v.name));
    g.graph_input_[static_cast<size_t>(id)] = true;
  }
  g.op_inputs_.resize(n_ops);
  g.op_outputs_.resize(n_ops);
  for (size_t i = 0; i < n_ops; ++i) {
    const auto& op = ir.nodes[i];
    const auto op_id = static_cast<NodeId>(i);
    for (size_t s = 0; s < op.inputs.size(); ++s) {
      if (op.inputs[s].empty()) {
        g.op_inputs_[i].push_back(kNoNode);
        continue;
      }
      const NodeId v = g.add_value(op.inputs[s], kind_of(op.inputs[s]), ir.shape_of(op.inputs[s]));
      g.op_inputs_[i].push_back(v);
      g.edges_.push_back(CGEdge{v, op_id, static_cast<int>(s)});
    }
    for (size_t s = 0; s < op.outputs.size(); ++s) {
      const NodeId v = g.add_value(op.outputs[s], NodeKind::kData, ir.shape_of(op.outputs[s]));
      g.op_outputs_[i].push_back(v);
      g.edges_.push_back(CGEdge{op_id, v, static_cast<int>(s)});
      g.uses_[static_cast<size_t>(v)].push_back(ValueUse{op_id, static_cast<int>(s), true});
    }
  }
  // consumers after producers so uses() lists the producer first
  for (size_t i = 0; i < n_ops; ++i)
    for (size_t s = 0; s < g.op_inputs_[i].size(); ++s) {
      const NodeId v = g.op_inputs_[i][s];
      if (v != kNoNode) g.uses_[static_cast<size_t>(v)].push_back(ValueUse{static_cast<NodeId>(i), static_cast<int>(s), false});
    }
  for (const auto& v : ir.graph_outputs) g.graph_output_[static_cast<size_t>(g.value_id(v.name))] = true;
  return g;
}

const CGNode& ComputationalGraph::node(NodeId id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
    throw Error("unknown graph node id " + std::to_string(id));
  }
  return nodes_[static_cast<size_t>(id)];
}

const OperatorSpec& ComputationalGraph::op_spec(NodeId op) const {
  if (node(op).kind != NodeKind::kOperator) throw Error("node " + std::to_string(op) + " is not an operator");
  return specs_[static_cast<size_t>(op)];
}

std::span<const NodeId> ComputationalGraph::op_inputs(NodeId op) const {
  op_spec(op);
  return op_inputs_[static_cast<size_t>(op)];
}

std::span<const NodeId> ComputationalGraph::op_outputs(NodeId op) const {
  op_spec(op);
  return op_outputs_[static_cast<size_t>(op)];
}

std::span<const ValueUse> ComputationalGraph::uses(NodeId value) const {
  if (node(value).kind == NodeKind::kOperator) throw Error("uses() requires a data or parameter node");
  return uses_[static_cast<size_t>(value)];
}

std::vector<NodeId> ComputationalGraph::neighbors(NodeId value) const {
  std::vector<NodeId> ops;
  for (const auto& u : uses(value)) ops.push_back(u.op);
  std::sort(ops.begin(), ops.end());
  ops.erase(std::unique(ops.begin(), ops.end()), ops.end());
  return ops;
}

NodeId ComputationalGraph::find_value(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? kNoNode : it->second;
}

NodeId ComputationalGraph::value_id(const std::string& name) const {
  const NodeId id = find_value(name);
  if (id == kNoNode) throw Error("no value named '" + name + "' in the graph");
  return id;
}

bool ComputationalGraph::is_graph_input(NodeId value) const {
  node(value);
  return graph_input_[static_cast<size_t>(value)];
}

bool ComputationalGraph::is_graph_output(NodeId value) const {
  node(value);
  return graph_output_[static_cast<size_t>(value)];
}

std::string ComputationalGraph::to_dot() const {
  auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
      if (c == '"' || c == '\\') out += '\\';
      out += c;
    }
    return out + "\"";
  };
  std::ostringstream os;
  os << "digraph computational_graph {\n  rankdir=TB;\n";
  for (const auto& n : nodes_) {
    os << "  n" << n.id << " [label=";
    switch (n.kind) {
      case NodeKind::kOperator:
        os << quote(specs_[static_cast<size_t>(n.id)].op_type + "\\n" + n.name)
           << ", shape=box, style=filled, fillcolor=lightblue";
        break;
      case NodeKind::kData:
        os << quote(n.name + "\\n" + shape_string(n.shape)) << ", shape=ellipse";
        if (graph_input_[static_cast<size_t>(n.id)] || graph_output_[static_cast<size_t>(n.id)])
          os << ", peripheries=2";
        break;
      case NodeKind::kParameter:
        os << quote(n.name + "\\n" + shape_string(n.shape))
           << ", shape=note, style=filled, fillcolor=lightyellow";
        break;
    }
    os << "];\n";
  }
  for (const auto& e : edges_) os << "  n" << e.from << " -> n" << e.to << " [label=\"" << e.slot << "\"];\n";
  os << "}\n";
  return os.str();
}

}  // namespace spa
