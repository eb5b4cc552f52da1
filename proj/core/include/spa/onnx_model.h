// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "spa/tensor.h"

namespace spa {

using AttributeValue =
    std::variant<int64_t, float, std::string, std::vector<int64_t>, std::vector<float>>;

/// One ONNX node in the normalized internal dialect.
struct OperatorSpec {
  std::string name;
  std::string op_type;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, AttributeValue> attributes;

  bool has_input(size_t slot) const { return slot < inputs.size() && !inputs[slot].empty(); }
  int64_t int_attr(const std::string& key, int64_t fallback) const;
  float float_attr(const std::string& key, float fallback) const;
  std::vector<int64_t> ints_attr(const std::string& key, std::vector<int64_t> fallback = {}) const;
  std::string string_attr(const std::string& key, std::string fallback = {}) const;

  friend bool operator==(const OperatorSpec&, const OperatorSpec&) = default;
};

/// A graph input or output. `symbolic[i]` holds the dim_param of axis i, or is
/// empty when the extent is static. Symbolic extents are analysed as 1.
struct ValueInfo {
  std::string name;
  Shape shape;
  std::vector<std::string> symbolic;

  friend bool operator==(const ValueInfo&, const ValueInfo&) = default;
};

/// Integer tensors are not parameters; they are carried through untouched.
struct IntTensor {
  Shape shape;
  std::vector<int64_t> values;

  friend bool operator==(const IntTensor&, const IntTensor&) = default;
};

struct ModelIR {
  std::string graph_name = "graph";
  std::string producer_name = "spaprune";
  int64_t ir_version = 8;
  int64_t opset_version = 13;

  std::vector<ValueInfo> graph_inputs;
  std::vector<ValueInfo> graph_outputs;
  std::vector<OperatorSpec> nodes;  // topologically ordered
  std::map<std::string, Tensor> initializers;
  std::map<std::string, IntTensor> int_initializers;

  /// Filled by infer_shapes for every graph input, initializer and node output.
  std::map<std::string, Shape> value_shapes;

  bool is_initializer(const std::string& name) const { return initializers.contains(name); }
  const Shape& shape_of(const std::string& name) const;
  const OperatorSpec* producer_of(const std::string& value) const;
};

/// Operators v1 understands, in documentation order.
std::span<const std::string_view> supported_operators();
bool is_supported_operator(std::string_view op_type);

ModelIR load_model(std::string_view bytes);
ModelIR load_model_file(const std::filesystem::path& path);
std::string save_model(const ModelIR& ir);
void save_model_file(const ModelIR& ir, const std::filesystem::path& path);

/// Recomputes value_shapes from the graph inputs and initializers. Returns the
/// updated model; throws ShapeError naming the offending node.
ModelIR infer_shapes(ModelIR ir);

/// Throws ModelError unless every node input is defined before use and every
/// graph output is produced.
void check_connectivity(const ModelIR& ir);

/// Same nodes, attributes, inputs/outputs and bit-identical initializers.
/// When `why` is given it receives a description of the first difference.
bool structurally_equal(const ModelIR& a, const ModelIR& b, std::string* why = nullptr);

}  // namespace spa
