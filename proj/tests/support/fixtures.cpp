// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "fixtures.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace spa::testing {

namespace {

std::string cbr(ModelBuilder& b, const std::string& x, int64_t out, int64_t k, ConvOpts o = {}) {
  return b.relu(b.batchnorm(b.conv(x, out, k, o)));
}

std::string classifier(ModelBuilder& b, const std::string& x, int64_t classes = 10) {
  return b.gemm(b.flatten(b.global_average_pool(x)), classes);
}

}  // namespace

ModelIR two_gemm() {
  ModelBuilder b(0, "two_gemm");
  const auto x1 = b.input("X1", {3, 4}, false);
  const auto x2 = b.gemm(x1, 4, /*trans_b=*/false, /*bias=*/false);
  const auto x3 = b.gemm(x2, 4, false, false);
  return b.finish({x3});
}

ModelIR mlp(uint64_t seed) {
  ModelBuilder b(seed, "mlp");
  auto x = b.input("input", {1, 16});
  x = b.relu(b.gemm(x, 32));
  x = b.relu(b.gemm(x, 24));
  return b.finish({b.gemm(x, 10)});
}

ModelIR matmul_mlp(uint64_t seed) {
  ModelBuilder b(seed, "matmul_mlp");
  auto x = b.input("input", {1, 12});
  auto layer = [&b](const std::string& in, int64_t n) {
    const auto y = b.matmul(in, n);
    return b.add(y, b.param("bias", random_tensor(b.rng(), {n}, -0.1, 0.1)));
  };
  x = b.relu(layer(x, 16));
  x = b.relu(layer(x, 8));
  return b.finish({b.softmax(layer(x, 4), 1)});
}

ModelIR conv_chain(int depth, uint64_t seed, int64_t width, int64_t spatial) {
  ModelBuilder b(seed, "conv_chain");
  auto x = b.input("input", {1, 3, spatial, spatial});
  for (int i = 0; i < depth; ++i) x = b.relu(b.conv(x, width, 3));
  return b.finish({classifier(b, x)});
}

ModelIR conv_bn_relu(uint64_t seed) {
  ModelBuilder b(seed, "conv_bn_relu");
  auto x = b.input("input", {1, 3, 8, 8});
  x = cbr(b, x, 8, 3);
  x = cbr(b, x, 12, 3);
  x = cbr(b, x, 8, 3);
  return b.finish({classifier(b, x)});
}

ModelIR vgg_like(uint64_t seed) {
  ModelBuilder b(seed, "vgg_like");
  auto x = b.input("input", {1, 3, 16, 16});
  x = cbr(b, x, 8, 3);
  x = cbr(b, x, 8, 3);
  x = b.pool("MaxPool", x, 2, 2);
  x = cbr(b, x, 16, 3);
  x = cbr(b, x, 16, 3);
  x = b.pool("MaxPool", x, 2, 2);
  x = b.relu(b.gemm(b.flatten(x), 32));
  return b.finish({b.gemm(x, 10)});
}

ModelIR resnet_basic(uint64_t seed) {
  ModelBuilder b(seed, "resnet_basic");
  auto x = b.input("input", {1, 3, 8, 8});
  x = cbr(b, x, 8, 3);
  for (int i = 0; i < 2; ++i) {
    const auto y = b.batchnorm(b.conv(cbr(b, x, 8, 3), 8, 3));
    x = b.relu(b.add(y, x));
  }
  // downsampling block with a projection skip
  const auto y = b.batchnorm(b.conv(cbr(b, x, 16, 3, {.stride = 2}), 16, 3));
  const auto skip = b.batchnorm(b.conv(x, 16, 1, {.stride = 2}));
  x = b.relu(b.add(y, skip));
  return b.finish({classifier(b, x)});
}

ModelIR bottleneck_projection(uint64_t seed) {
  ModelBuilder b(seed, "bottleneck_projection");
  auto x = b.input("input", {1, 3, 8, 8});
  x = cbr(b, x, 16, 3);
  auto bottleneck = [&b](const std::string& in, int64_t mid, int64_t out, bool project) {
    auto y = cbr(b, in, mid, 1);
    y = cbr(b, y, mid, 3);
    y = b.batchnorm(b.conv(y, out, 1));
    const auto skip = project ? b.batchnorm(b.conv(in, out, 1)) : in;
    return b.relu(b.add(y, skip));
  };
  x = bottleneck(x, 8, 32, true);
  x = bottleneck(x, 8, 32, false);
  return b.finish({classifier(b, x)});
}

ModelIR densenet_concat(uint64_t seed) {
  ModelBuilder b(seed, "densenet_concat");
  auto x = b.input("input", {1, 3, 8, 8});
  const auto x0 = b.conv(x, 8, 3);
  const auto l1 = b.conv(b.relu(b.batchnorm(x0)), 4, 3);
  const auto c1 = b.concat({x0, l1});
  const auto l2 = b.conv(b.relu(b.batchnorm(c1)), 4, 3);
  const auto c2 = b.concat({x0, l1, l2});
  auto t = b.conv(b.relu(b.batchnorm(c2)), 8, 1);
  t = b.pool("AveragePool", t, 2, 2);
  return b.finish({classifier(b, t)});
}

ModelIR grouped_conv(uint64_t seed) {
  ModelBuilder b(seed, "grouped_conv");
  auto x = b.input("input", {1, 4, 8, 8});
  x = b.relu(b.conv(x, 8, 3));
  x = b.relu(b.conv(x, 8, 3, {.group = 2}));
  x = b.relu(b.conv(x, 12, 3, {.group = 4}));
  x = b.relu(b.conv(x, 8, 1));
  return b.finish({classifier(b, x)});
}

ModelIR depthwise_separable(uint64_t seed) {
  ModelBuilder b(seed, "depthwise_separable");
  auto x = b.input("input", {1, 3, 8, 8});
  x = cbr(b, x, 8, 3);
  x = cbr(b, x, 8, 3, {.group = 8});
  x = cbr(b, x, 16, 1);
  x = b.unary("Sigmoid", b.batchnorm(b.conv(x, 16, 3, {.stride = 2, .group = 16})));
  x = cbr(b, x, 8, 1);
  // channel multiplier 2
  x = b.relu(b.conv(x, 16, 3, {.group = 8}));
  x = b.relu(b.conv(x, 8, 1));
  return b.finish({classifier(b, x)});
}

ModelIR multi_branch(uint64_t seed) {
  ModelBuilder b(seed, "multi_branch");
  auto x = b.input("input", {1, 3, 8, 8});
  const auto stem = b.relu(b.conv(x, 8, 3));
  const auto b1 = b.relu(b.conv(stem, 6, 1));
  const auto b2 = b.relu(b.conv(b.relu(b.conv(stem, 4, 1)), 6, 3));
  const auto b3 = b.conv(b.pool("MaxPool", stem, 3, 1, 1), 4, 1);
  const auto mix = b.relu(b.conv(b.concat({b1, b2, b3}), 8, 1));
  const auto y = b.relu(b.add(mix, stem));
  return b.finish({classifier(b, y)});
}

ModelIR conv_flatten_gemm(uint64_t seed) {
  ModelBuilder b(seed, "conv_flatten_gemm");
  auto x = b.input("input", {1, 3, 6, 6});
  x = b.pool("MaxPool", b.relu(b.conv(x, 6, 3)), 2, 2);
  x = b.relu(b.gemm(b.flatten(x), 16, /*trans_b=*/false));
  return b.finish({b.gemm(x, 10)});
}

ModelIR resnet50_shaped(uint64_t seed, int64_t spatial) {
  ModelBuilder b(seed, "resnet50_shaped");
  auto x = b.input("input", {1, 3, spatial, spatial});
  x = cbr(b, x, 64, 7, {.stride = 2, .bias = false});
  x = b.pool("MaxPool", x, 3, 2, 1);
  struct Stage {
    int64_t mid, out;
    int blocks;
    int64_t stride;
  };
  for (const Stage s : {Stage{64, 256, 3, 1}, Stage{128, 512, 4, 2}, Stage{256, 1024, 6, 2}, Stage{512, 2048, 3, 2}}) {
    for (int i = 0; i < s.blocks; ++i) {
      const int64_t stride = i == 0 ? s.stride : 1;
      auto y = cbr(b, x, s.mid, 1, {.bias = false});
      y = cbr(b, y, s.mid, 3, {.stride = stride, .bias = false});
      y = b.batchnorm(b.conv(y, s.out, 1, {.bias = false}));
      const auto skip = i == 0 ? b.batchnorm(b.conv(x, s.out, 1, {.stride = stride, .bias = false})) : x;
      x = b.relu(b.add(y, skip));
    }
  }
  return b.finish({classifier(b, x, 1000)});
}

ModelIR unsupported_op() {
  ModelBuilder b(14, "unsupported_op");
  auto x = b.input("input", {1, 4});
  x = b.gemm(x, 4);
  x = b.node("Erf", {x}, b.shape(x));
  return b.finish({b.gemm(x, 2)}, /*infer=*/false);
}

std::vector<Fixture> equivalence_fixtures() {
  return {
      {"conv_chain", [] { return conv_chain(4); }},
      {"mlp", [] { return mlp(); }},
      {"matmul_mlp", [] { return matmul_mlp(); }},
      {"conv_bn_relu", [] { return conv_bn_relu(); }},
      {"vgg_like", [] { return vgg_like(); }},
      {"resnet_basic", [] { return resnet_basic(); }},
      {"bottleneck_projection", [] { return bottleneck_projection(); }},
      {"densenet_concat", [] { return densenet_concat(); }},
      {"grouped_conv", [] { return grouped_conv(); }},
      {"depthwise_separable", [] { return depthwise_separable(); }},
      {"multi_branch", [] { return multi_branch(); }},
      {"conv_flatten_gemm", [] { return conv_flatten_gemm(); }},
  };
}

Tensor random_input(const ModelIR& ir, int64_t n, uint64_t seed, double lo, double hi) {
  Shape s = ir.graph_inputs.at(0).shape;
  s[0] = n;
  Rng rng(seed);
  return random_tensor(rng, s, lo, hi);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  return worst;
}

}  // namespace spa::testing
