// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "model_builder.h"
#include "spa/interpreter.h"

namespace spa::testing {

// Two bias-free Gemms in the Y = X·W layout: X1 (3,4) → W1 (4,4) → X2 → W2 (4,4) → X3.
ModelIR two_gemm();

// Gemm + Relu stack on a 16-feature input; widths 32, 24, then 10 logits.
ModelIR mlp(uint64_t seed = 1);
ModelIR matmul_mlp(uint64_t seed = 2);

// Plain conv chain: `depth` 3×3 convs of `width` channels, GAP, classifier.
ModelIR conv_chain(int depth, uint64_t seed = 3, int64_t width = 8, int64_t spatial = 8);

ModelIR conv_bn_relu(uint64_t seed = 4);
ModelIR vgg_like(uint64_t seed = 5);
ModelIR resnet_basic(uint64_t seed = 6);
ModelIR bottleneck_projection(uint64_t seed = 7);
ModelIR densenet_concat(uint64_t seed = 8);
ModelIR grouped_conv(uint64_t seed = 9);
ModelIR depthwise_separable(uint64_t seed = 10);
ModelIR multi_branch(uint64_t seed = 11);
ModelIR conv_flatten_gemm(uint64_t seed = 12);

// Channel widths of ResNet-50 (stages of 3, 4, 6, 3 bottlenecks) on a small
// spatial input.
ModelIR resnet50_shaped(uint64_t seed = 13, int64_t spatial = 32);

// A model using an operator outside the supported set.
ModelIR unsupported_op();

struct Fixture {
  std::string name;
  std::function<ModelIR()> make;
};

// Architectures exercised by the equivalence, grouping and aggregation suites.
std::vector<Fixture> equivalence_fixtures();

// Seeded uniform inputs for a single-input model, batch `n`.
Tensor random_input(const ModelIR& ir, int64_t n, uint64_t seed, double lo = -1.0, double hi = 1.0);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace spa::testing
