// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

// Static shape rules for the supported operator set.

#include <algorithm>

#include "spa/error.h"
#include "spa/onnx_model.h"
#include "ops_util.h"

namespace spa {

namespace {

[[noreturn]] void fail(const OperatorSpec& op, const std::string& msg) {
  throw ShapeError(op.op_type + " node '" + op.name + "': " + msg);
}

const Shape& input_shape(const ModelIR& ir, const OperatorSpec& op, size_t slot) {
  if (!op.has_input(slot)) fail(op, "missing input " + std::to_string(slot));
  const std::string& name = op.inputs[slot];
  if (ir.int_initializers.contains(name)) fail(op, "integer tensor '" + name + "' is not a valid operand");
  auto it = ir.value_shapes.find(name);
  if (it == ir.value_shapes.end()) fail(op, "input '" + name + "' has no shape");
  return it->second;
}

void require_rank(const OperatorSpec& op, const Shape& s, size_t rank, const char* what) {
  if (s.size() != rank) {
    fail(op, std::string(what) + " must have rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

Shape conv_shape(const ModelIR& ir, const OperatorSpec& op) {
  const Shape& x = input_shape(ir, op, 0);
  const Shape& w = input_shape(ir, op, 1);
  require_rank(op, x, 4, "input");
  require_rank(op, w, 4, "weight");
  const ConvParams p = conv_params(op, w);
  if (p.group < 1) fail(op, "group must be positive");
  if (x[1] != w[1] * p.group) {
    fail(op, "input has " + std::to_string(x[1]) + " channels but weight expects " +
                 std::to_string(w[1]) + " x group " + std::to_string(p.group));
  }
  if (w[0] % p.group != 0) fail(op, "output channels not divisible by group");
  if (op.has_input(2)) {
    const Shape& b = input_shape(ir, op, 2);
    if (b.size() != 1 || b[0] != w[0]) fail(op, "bias shape " + shape_string(b) + " does not match " + std::to_string(w[0]) + " filters");
  }
  Shape out = {x[0], w[0], 0, 0};
  for (int i = 0; i < 2; ++i) {
    const int64_t span = p.dilations[i] * (w[2 + i] - 1) + 1;
    const int64_t padded = x[2 + i] + p.pads[i] + p.pads[i + 2];
    if (padded < span) fail(op, "kernel larger than padded input");
    out[2 + i] = (padded - span) / p.strides[i] + 1;
  }
  return out;
}

Shape pool_shape(const ModelIR& ir, const OperatorSpec& op) {
  const Shape& x = input_shape(ir, op, 0);
  require_rank(op, x, 4, "input");
  if (op.outputs.size() > 1) fail(op, "pooling indices output is not supported");
  const PoolParams p = pool_params(op);
  Shape out = {x[0], x[1], 0, 0};
  for (int i = 0; i < 2; ++i) {
    const int64_t span = p.dilations[i] * (p.kernel[i] - 1) + 1;
    const int64_t padded = x[2 + i] + p.pads[i] + p.pads[i + 2];
    if (padded < span) fail(op, "kernel larger than padded input");
    out[2 + i] = pooled_extent(x[2 + i], p.kernel[i], p.strides[i], p.pads[i], p.pads[i + 2],
                               p.dilations[i], p.ceil_mode);
  }
  return out;
}

Shape gemm_shape(const ModelIR& ir, const OperatorSpec& op) {
  const Shape& a = input_shape(ir, op, 0);
  const Shape& b = input_shape(ir, op, 1);
  require_rank(op, a, 2, "A");
  require_rank(op, b, 2, "B");
  const bool trans_b = op.int_attr("transB", 0) != 0;
  const int64_t k = trans_b ? b[1] : b[0];
  const int64_t n = trans_b ? b[0] : b[1];
  if (a[1] != k) fail(op, "inner dimensions differ: " + shape_string(a) + " x " + shape_string(b));
  Shape out = {a[0], n};
  if (op.has_input(2)) {
    const Shape& c = input_shape(ir, op, 2);
    if (c.size() > 2) fail(op, "bias rank exceeds 2");
    for (size_t i = 0; i < c.size(); ++i) {
      const int64_t target = out[out.size() - c.size() + i];
      if (c[i] != 1 && c[i] != target) fail(op, "bias " + shape_string(c) + " not broadcastable to " + shape_string(out));
    }
  }
  return out;
}

Shape matmul_shape(const ModelIR& ir, const OperatorSpec& op) {
  const Shape& a = input_shape(ir, op, 0);
  const Shape& b = input_shape(ir, op, 1);
  if (a.size() < 2) fail(op, "A must have rank >= 2");
  require_rank(op, b, 2, "B");
  if (a.back() != b[0]) fail(op, "inner dimensions differ: " + shape_string(a) + " x " + shape_string(b));
  Shape out = a;
  out.back() = b[1];
  return out;
}

Shape batchnorm_shape(const ModelIR& ir, const OperatorSpec& op) {
  const Shape& x = input_shape(ir, op, 0);
  if (x.size() < 2) fail(op, "input must have rank >= 2");
  for (size_t slot = 1; slot <= 4; ++slot) {
    const Shape& p = input_shape(ir, op, slot);
    if (p.size() != 1 || p[0] != x[1]) {
      fail(op, "parameter '" + op.inputs[slot] + "' has shape " + shape_string(p) + " but input has " +
                   std::to_string(x[1]) + " channels");
    }
  }
  return x;
}

Shape add_shape(const ModelIR& ir, const OperatorSpec& op) {
  if (op.inputs.size() != 2) fail(op, "expects two inputs");
  const Shape& a = input_shape(ir, op, 0);
  const Shape& b = input_shape(ir, op, 1);
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    const int64_t da = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const int64_t db = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      fail(op, "operands " + shape_string(a) + " and " + shape_string(b) + " are not broadcastable");
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

Shape concat_shape(const ModelIR& ir, const OperatorSpec& op) {
  if (op.inputs.empty()) fail(op, "no inputs");
  Shape out = input_shape(ir, op, 0);
  const int64_t axis = normalize_axis(op.int_attr("axis", 1), static_cast<int64_t>(out.size()), op);
  for (size_t s = 1; s < op.inputs.size(); ++s) {
    const Shape& x = input_shape(ir, op, s);
    if (x.size() != out.size()) fail(op, "inputs differ in rank");
    for (size_t i = 0; i < x.size(); ++i) {
      if (static_cast<int64_t>(i) == axis) continue;
      if (x[i] != out[i]) fail(op, "inputs " + shape_string(out) + " and " + shape_string(x) + " differ off the concat axis");
    }
    out[static_cast<size_t>(axis)] += x[static_cast<size_t>(axis)];
  }
  return out;
}

Shape flatten_shape(const ModelIR& ir, const OperatorSpec& op) {
  const Shape& x = input_shape(ir, op, 0);
  const int64_t rank = static_cast<int64_t>(x.size());
  int64_t axis = op.int_attr("axis", 1);
  if (axis < 0) axis += rank;
  if (axis < 0 || axis > rank) fail(op, "axis out of range");
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < rank; ++i) (i < axis ? outer : inner) *= x[static_cast<size_t>(i)];
  return {outer, inner};
}

Shape softmax_shape(const ModelIR& ir, const OperatorSpec& op) {
  const Shape& x = input_shape(ir, op, 0);
  const int64_t rank = static_cast<int64_t>(x.size());
  const int64_t axis = normalize_axis(op.int_attr("axis", ir.opset_version >= 13 ? -1 : 1), rank, op);
  if (ir.opset_version < 13 && axis != rank - 1) {
    // pre-13 Softmax flattens trailing axes; only the coinciding case is modeled
    throw UnsupportedOperatorError("Softmax", "node '" + op.name + "' uses opset<13 coercion over several axes");
  }
  return x;
}

Shape infer_node(const ModelIR& ir, const OperatorSpec& op) {
  const std::string& t = op.op_type;
  if (t == "Conv") return conv_shape(ir, op);
  if (t == "Gemm") return gemm_shape(ir, op);
  if (t == "MatMul") return matmul_shape(ir, op);
  if (t == "BatchNormalization") return batchnorm_shape(ir, op);
  if (t == "Add") return add_shape(ir, op);
  if (t == "Relu" || t == "Sigmoid" || t == "Identity") return input_shape(ir, op, 0);
  if (t == "Softmax") return softmax_shape(ir, op);
  if (t == "MaxPool" || t == "AveragePool") return pool_shape(ir, op);
  if (t == "GlobalAveragePool") {
    Shape x = input_shape(ir, op, 0);
    if (x.size() < 3) fail(op, "input must have spatial axes");
    std::fill(x.begin() + 2, x.end(), 1);
    return x;
  }
  if (t == "Flatten") return flatten_shape(ir, op);
  if (t == "Concat") return concat_shape(ir, op);
  throw UnsupportedOperatorError(t, "node '" + op.name + "'");
}

}  // namespace

ModelIR infer_shapes(ModelIR ir) {
  ir.value_shapes.clear();
  for (const auto& v : ir.graph_inputs) {
    for (size_t i = 0; i < v.shape.size(); ++i) {
      if (i < v.symbolic.size() && !v.symbolic[i].empty() && i != 0) {
        throw ShapeError("graph input '" + v.name + "' has a symbolic non-batch extent '" +
                         v.symbolic[i] + "'");
      }
    }
    ir.value_shapes[v.name] = v.shape;
  }
  for (const auto& [name, t] : ir.initializers) ir.value_shapes[name] = t.shape();
  for (const auto& [name, t] : ir.int_initializers) ir.value_shapes[name] = t.shape;
  for (const auto& op : ir.nodes) {
    if (op.outputs.empty()) throw ShapeError(op.op_type + " node '" + op.name + "' has no outputs");
    Shape s = infer_node(ir, op);
    for (int64_t d : s)
      if (d <= 0) throw ShapeError(op.op_type + " node '" + op.name + "' produces empty shape " + shape_string(s));
    ir.value_shapes[op.outputs[0]] = std::move(s);
  }
  for (const auto& o : ir.graph_outputs) {
    if (!ir.value_shapes.contains(o.name)) throw ShapeError("graph output '" + o.name + "' is never produced");
  }
  return ir;
}

}  // namespace spa
