// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

#include "spa/onnx_model.h"

namespace spa {

struct ConvParams {
  int64_t group = 1;
  std::array<int64_t, 4> pads{};  // top, left, bottom, right
  std::array<int64_t, 2> strides{1, 1};
  std::array<int64_t, 2> dilations{1, 1};
};

struct PoolParams {
  std::array<int64_t, 2> kernel{1, 1};
  std::array<int64_t, 4> pads{};
  std::array<int64_t, 2> strides{1, 1};
  std::array<int64_t, 2> dilations{1, 1};
  bool ceil_mode = false;
  bool count_include_pad = false;
};

ConvParams conv_params(const OperatorSpec& op, const Shape& weight_shape);
PoolParams pool_params(const OperatorSpec& op);
int64_t pooled_extent(int64_t in, int64_t kernel, int64_t stride, int64_t pad_begin,
                      int64_t pad_end, int64_t dilation, bool ceil_mode);
int64_t normalize_axis(int64_t axis, int64_t rank, const OperatorSpec& op);

}  // namespace spa
