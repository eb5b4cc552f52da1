// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "spa/onnx_model.h"

namespace spa {

using TensorMap = std::map<std::string, Tensor>;

/// Called before node `index` executes, with pointers to its inputs (nullptr
/// for absent optional ones). Initializer pointers alias the model, so a hook
/// holding a mutable reference to it may rewrite them in place; the node sees
/// the new values.
using NodeHook = std::function<void(size_t index, std::span<const Tensor* const> inputs)>;

struct ForwardOptions {
  NodeHook before_node;
  /// Intermediate values to return alongside the graph outputs.
  std::vector<std::string> keep;
};

/// Reference evaluation in node order. BatchNormalization uses its stored
/// statistics. The batch extent of the inputs may differ from the model's
/// when the model declares it symbolic.
TensorMap run_forward(const ModelIR& ir, const TensorMap& inputs, const ForwardOptions& opts = {});

/// Single-input, single-output convenience wrapper.
Tensor run_forward(const ModelIR& ir, const Tensor& input);

/// Layers whose input Gram matrix drives weight reconstruction: dense Conv
/// (group 1), Gemm and MatMul with an initializer weight.
bool is_hessian_layer(const ModelIR& ir, const OperatorSpec& op);

/// Layer input as features × positions. Conv rows are c·kH·kW + kh·kW + kw and
/// columns n·Ho·Wo + oh·Wo + ow; Gemm/MatMul rows are input features and
/// columns the flattened leading positions.
Tensor layer_input_matrix(const ModelIR& ir, const OperatorSpec& op, const Tensor& x);

/// Unfolds an N×C×H×W input for a Conv with weight shape `w_shape`.
Tensor im2col(const Tensor& x, const OperatorSpec& conv, const Shape& w_shape);

struct LayerCapture {
  std::string layer;
  Tensor x;  // features × positions, all batches side by side
};

using CaptureSink = std::function<void(size_t node, const Tensor& x_matrix)>;

/// Runs every batch and hands each Hessian layer's input matrix to `sink`.
void stream_layer_inputs(const ModelIR& ir, std::span<const Tensor> batches, const CaptureSink& sink);

/// Collected captures keyed by node name.
std::map<std::string, LayerCapture> capture_layer_inputs(const ModelIR& ir, std::span<const Tensor> batches);

/// Replaces every BatchNormalization's running mean/variance by the population
/// statistics of its input over all batches, shallow layers first, then runs
/// a second sweep so deeper statistics see the updated upstream layers.
/// Variances are floored at `var_floor`.
ModelIR recalibrate_bn(const ModelIR& ir, std::span<const Tensor> batches, double var_floor = 1e-5);

}  // namespace spa
