// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ops_util.h"

#include "spa/error.h"

namespace spa {

namespace {

void check_auto_pad(const OperatorSpec& op) {
  const std::string mode = op.string_attr("auto_pad", "NOTSET");
  if (mode != "NOTSET" && mode != "VALID") {
    throw UnsupportedOperatorError(op.op_type, "node '" + op.name + "' uses auto_pad=" + mode);
  }
}

template <size_t N>
std::array<int64_t, N> fixed_ints(const OperatorSpec& op, const char* key, std::array<int64_t, N> fallback) {
  const auto v = op.ints_attr(key);
  if (v.empty()) return fallback;
  if (v.size() != N) {
    throw ShapeError(op.op_type + " node '" + op.name + "': attribute '" + key + "' must have " +
                     std::to_string(N) + " entries");
  }
  std::array<int64_t, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

}  // namespace

ConvParams conv_params(const OperatorSpec& op, const Shape& weight_shape) {
  check_auto_pad(op);
  ConvParams p;
  p.group = op.int_attr("group", 1);
  p.pads = fixed_ints<4>(op, "pads", {0, 0, 0, 0});
  p.strides = fixed_ints<2>(op, "strides", {1, 1});
  p.dilations = fixed_ints<2>(op, "dilations", {1, 1});
  const auto kernel = op.ints_attr("kernel_shape");
  if (!kernel.empty() && weight_shape.size() == 4 &&
      (kernel.size() != 2 || kernel[0] != weight_shape[2] || kernel[1] != weight_shape[3])) {
    throw ShapeError("Conv node '" + op.name + "': kernel_shape disagrees with the weight");
  }
  for (int64_t s : p.strides)
    if (s < 1) throw ShapeError("Conv node '" + op.name + "': strides must be positive");
  return p;
}

PoolParams pool_params(const OperatorSpec& op) {
  check_auto_pad(op);
  PoolParams p;
  const auto kernel = op.ints_attr("kernel_shape");
  if (kernel.size() != 2) {
    throw ShapeError(op.op_type + " node '" + op.name + "': kernel_shape must have 2 entries");
  }
  p.kernel = {kernel[0], kernel[1]};
  p.pads = fixed_ints<4>(op, "pads", {0, 0, 0, 0});
  p.strides = fixed_ints<2>(op, "strides", {1, 1});
  p.dilations = fixed_ints<2>(op, "dilations", {1, 1});
  p.ceil_mode = op.int_attr("ceil_mode", 0) != 0;
  p.count_include_pad = op.int_attr("count_include_pad", 0) != 0;
  for (int64_t s : p.strides)
    if (s < 1) throw ShapeError(op.op_type + " node '" + op.name + "': strides must be positive");
  return p;
}

int64_t pooled_extent(int64_t in, int64_t kernel, int64_t stride, int64_t pad_begin,
                      int64_t pad_end, int64_t dilation, bool ceil_mode) {
  const int64_t span = dilation * (kernel - 1) + 1;
  const int64_t room = in + pad_begin + pad_end - span;
  int64_t out = (ceil_mode ? (room + stride - 1) / stride : room / stride) + 1;
  // the last window must start inside the input or its leading padding
  if (ceil_mode && (out - 1) * stride >= in + pad_begin) --out;
  return out;
}

int64_t normalize_axis(int64_t axis, int64_t rank, const OperatorSpec& op) {
  const int64_t a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(op.op_type + " node '" + op.name + "': axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  }
  return a;
}

}  // namespace spa
