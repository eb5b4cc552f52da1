// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>
#include <tuple>

#include "fixtures.h"
#include "spa/compute_graph.h"
#include "spa/error.h"
#include "spa/mask_propagation.h"

namespace spa {
namespace {

using namespace spa::testing;

using Triple = std::tuple<std::string, int, int64_t>;

std::set<Triple> triples(const ComputationalGraph& cg, const MaskSet& s) {
  std::set<Triple> out;
  for (const auto& m : s.masks())
    for (int64_t i : m.indices) out.emplace(cg.node(m.node).name, m.axis, i);
  return out;
}

Mask on(const ComputationalGraph& cg, const std::string& value, int axis, std::vector<int64_t> idx) {
  return Mask{cg.value_id(value), axis, std::move(idx)};
}

std::vector<NodeId> parameters(const ComputationalGraph& cg) {
  std::vector<NodeId> out;
  for (const auto& n : cg.nodes())
    if (n.kind == NodeKind::kParameter) out.push_back(n.id);
  return out;
}

NodeId only_op(const ComputationalGraph& cg, const std::string& type) {
  NodeId found = kNoNode;
  for (NodeId op : cg.operators()) {
    if (cg.op_spec(op).op_type != type) continue;
    EXPECT_EQ(found, kNoNode) << "more than one " << type;
    found = op;
  }
  return found;
}

TEST(CreateMask, ConvWeightAxisZero) {
  ModelBuilder b(1);
  auto x = b.input("input", {1, 3, 8, 8});
  const auto cg = ComputationalGraph::build(b.finish({b.relu(b.conv(x, 16, 3))}));
  const Mask m = create_mask(cg, cg.value_id("conv_w_0"), 5);
  EXPECT_EQ(m.axis, 0);
  EXPECT_EQ(m.indices, std::vector<int64_t>{5});
}

TEST(CreateMask, TransposedGemmWeight) {
  ModelBuilder b(1);
  auto x = b.input("input", {1, 128});
  const auto cg = ComputationalGraph::build(b.finish({b.relu(b.gemm(x, 64))}));
  ASSERT_EQ(cg.node(cg.value_id("gemm_w_0")).shape, (Shape{64, 128}));
  const Mask m = create_mask(cg, cg.value_id("gemm_w_0"), 0);
  EXPECT_EQ(m.axis, 0);
  EXPECT_EQ(m.indices, std::vector<int64_t>{0});
}

TEST(CreateMask, RejectsOutOfRangeAndUnprunable) {
  const auto cg = ComputationalGraph::build(conv_bn_relu());
  EXPECT_THROW(create_mask(cg, cg.value_id("conv_w_0"), 99), Error);
  EXPECT_THROW(create_mask(cg, cg.value_id("bn_mean_0"), 0), Error);
  EXPECT_FALSE(prunable_axis(cg, cg.value_id("bn_var_0")).has_value());
}

// Gemm with a full (M, N) bias so every table row has a target.
struct GemmCase {
  ModelIR ir;
  ComputationalGraph cg;
  NodeId op;
};

GemmCase full_bias_gemm() {
  ModelBuilder b(2);
  const auto x = b.input("X", {3, 4}, false);
  const auto w = b.param("w", random_tensor(b.rng(), {4, 5}));
  const auto c = b.param("c", random_tensor(b.rng(), {3, 5}));
  const auto y = b.node("Gemm", {x, w, c}, {3, 5});
  ModelIR ir = b.finish({b.relu(y)});
  auto cg = ComputationalGraph::build(ir);
  const NodeId op = only_op(cg, "Gemm");
  return {std::move(ir), std::move(cg), op};
}

TEST(GemmRules, EveryTableRow) {
  const auto g = full_bias_gemm();
  const auto& cg = g.cg;
  const std::string y = cg.op_spec(g.op).outputs[0];
  auto run = [&](const std::string& v, int axis) { return triples(cg, propagate_through_op(cg, g.op, on(cg, v, axis, {2}))); };
  using S = std::set<Triple>;
  EXPECT_EQ(run("X", 0), (S{{"c_0", 0, 2}, {y, 0, 2}}));
  EXPECT_EQ(run("X", 1), (S{{"w_0", 0, 2}}));
  EXPECT_EQ(run("w_0", 0), (S{{"X", 1, 2}}));
  EXPECT_EQ(run("w_0", 1), (S{{"c_0", 1, 2}, {y, 1, 2}}));
  EXPECT_EQ(run("c_0", 0), (S{{"X", 0, 2}, {y, 0, 2}}));
  EXPECT_EQ(run("c_0", 1), (S{{"w_0", 1, 2}, {y, 1, 2}}));
  // the batch axis of Y couples to X only, never to the weight
  EXPECT_EQ(run(y, 0), (S{{"X", 0, 2}}));
  EXPECT_EQ(run(y, 1), (S{{"w_0", 1, 2}, {"c_0", 1, 2}}));
}

TEST(GemmRules, TransposedWeightOutputFeature) {
  const ModelIR ir = mlp();
  const auto cg = ComputationalGraph::build(ir);
  const NodeId op = cg.operators().front();
  const auto got = triples(cg, propagate_through_op(cg, op, on(cg, "gemm_w_0", 0, {0})));
  const std::string y = cg.op_spec(op).outputs[0];
  EXPECT_EQ(got, (std::set<Triple>{{"gemm_b_0", 0, 0}, {y, 1, 0}}));
}

TEST(AddRule, ChannelReachesOtherInputAndOutput) {
  ModelBuilder b(3);
  auto x = b.input("input", {1, 4, 5, 5});
  const auto a = b.conv(x, 6, 3);
  const auto c = b.conv(x, 6, 1);
  const auto y = b.add(a, c);
  const auto cg = ComputationalGraph::build(b.finish({b.relu(y)}));
  const NodeId add = only_op(cg, "Add");
  EXPECT_EQ(triples(cg, propagate_through_op(cg, add, on(cg, a, 1, {3}))),
            (std::set<Triple>{{c, 1, 3}, {y, 1, 3}}));
}

TEST(ConvRules, GroupedInputChannelTakesModulo) {
  ModelBuilder b(4);
  auto x = b.input("input", {1, 8, 5, 5});
  const auto y = b.conv(x, 8, 3, {.group = 2});
  const auto cg = ComputationalGraph::build(b.finish({b.relu(y)}));
  const NodeId conv = only_op(cg, "Conv");
  EXPECT_EQ(triples(cg, propagate_through_op(cg, conv, on(cg, x, 1, {1}))), (std::set<Triple>{{"conv_w_0", 1, 1}}));
  EXPECT_EQ(triples(cg, propagate_through_op(cg, conv, on(cg, x, 1, {5}))), (std::set<Triple>{{"conv_w_0", 1, 1}}));
  // weight input slot 1 is read by input channels 1 and 5
  EXPECT_EQ(triples(cg, propagate_through_op(cg, conv, on(cg, "conv_w_0", 1, {1}))),
            (std::set<Triple>{{x, 1, 1}, {x, 1, 5}}));
}

TEST(ConvRules, GroupedOutputChannelPullsPeersInOtherGroups) {
  ModelBuilder b(4);
  auto x = b.input("input", {1, 8, 5, 5});
  const auto y = b.conv(x, 8, 3, {.group = 2});
  const auto cg = ComputationalGraph::build(b.finish({b.relu(y)}));
  const auto got = triples(cg, propagate_through_op(cg, only_op(cg, "Conv"), on(cg, "conv_w_0", 0, {1})));
  EXPECT_TRUE(got.contains({"conv_w_0", 0, 5}));
  EXPECT_TRUE(got.contains({"conv_b_0", 0, 1}));
  EXPECT_TRUE(got.contains({y, 1, 1}));
}

TEST(ConvRules, DepthwiseIsOneToOne) {
  ModelBuilder b(5);
  auto x = b.input("input", {1, 8, 5, 5});
  const auto y = b.conv(x, 8, 3, {.group = 8});
  const auto cg = ComputationalGraph::build(b.finish({b.relu(y)}));
  const NodeId conv = only_op(cg, "Conv");
  EXPECT_EQ(MaskPropagator(cg).variant(conv), "depthwise");
  const auto from_input = triples(cg, coupled_channels(cg, on(cg, x, 1, {1})));
  EXPECT_TRUE(from_input.contains({"conv_w_0", 0, 1}));
  EXPECT_TRUE(from_input.contains({y, 1, 1}));
  for (const auto& [name, axis, idx] : from_input) EXPECT_EQ(idx, 1) << name;
}

TEST(CoupledChannels, TwoConnectedGemms) {
  const auto cg = ComputationalGraph::build(two_gemm());
  const Mask seed = create_mask(cg, cg.value_id("gemm_w_0"), 0);
  EXPECT_EQ(seed.axis, 1);
  const auto& ops = cg.operators();
  const std::string x2 = cg.op_spec(ops[0]).outputs[0];
  EXPECT_EQ(triples(cg, coupled_channels(cg, seed)),
            (std::set<Triple>{{"gemm_w_0", 1, 0}, {x2, 1, 0}, {"gemm_w_1", 0, 0}}));
}

TEST(CoupledChannels, ConvBnReluReachesNextConvInput) {
  const ModelIR ir = conv_bn_relu();
  const auto cg = ComputationalGraph::build(ir);
  const auto got = triples(cg, coupled_channels(cg, create_mask(cg, cg.value_id("conv_w_0"), 3)));
  for (const char* p : {"bn_scale_0", "bn_bias_0", "bn_mean_0", "bn_var_0", "conv_b_0"})
    EXPECT_TRUE(got.contains({p, 0, 3})) << p;
  EXPECT_TRUE(got.contains({"conv_w_1", 1, 3}));
  EXPECT_TRUE(got.contains({ir.nodes[0].outputs[0], 1, 3}));
  EXPECT_TRUE(got.contains({ir.nodes[2].outputs[0], 1, 3}));
  for (const auto& [name, axis, idx] : got) EXPECT_EQ(idx, 3);
  EXPECT_FALSE(got.contains({"conv_w_1", 0, 3}));
}

TEST(CoupledChannels, ResidualCouplesSkipSource) {
  const ModelIR ir = resnet_basic();
  const auto cg = ComputationalGraph::build(ir);
  // second conv of the first block writes into the residual Add
  const auto got = triples(cg, coupled_channels(cg, create_mask(cg, cg.value_id("conv_w_2"), 2)));
  EXPECT_TRUE(got.contains({"conv_w_0", 0, 2}));  // stem, via the skip
  EXPECT_TRUE(got.contains({"conv_w_4", 0, 2}));  // second block's output conv
  EXPECT_TRUE(got.contains({"conv_w_1", 1, 2}));
  EXPECT_TRUE(got.contains({"conv_w_3", 1, 2}));
  EXPECT_FALSE(got.contains({"conv_w_1", 0, 2}));
}

TEST(CoupledChannels, FlattenExpandsToBlock) {
  const ModelIR ir = conv_flatten_gemm();
  const auto cg = ComputationalGraph::build(ir);
  const auto got = coupled_channels(cg, create_mask(cg, cg.value_id("conv_w_0"), 1));
  const auto* w = got.find(cg.value_id("gemm_w_0"), 0);  // transB=0: (K, N)
  ASSERT_NE(w, nullptr);
  // 6 channels on a 3×3 map after pooling: channel 1 is features 9..17
  EXPECT_EQ(*w, (std::vector<int64_t>{9, 10, 11, 12, 13, 14, 15, 16, 17}));
}

TEST(CoupledChannels, ConcatShiftsOffsets) {
  const ModelIR ir = densenet_concat();
  const auto cg = ComputationalGraph::build(ir);
  // l1 is the second conv and lands after x0's 8 channels in both concats
  const auto got = triples(cg, coupled_channels(cg, create_mask(cg, cg.value_id("conv_w_1"), 1)));
  EXPECT_TRUE(got.contains({"conv_w_2", 1, 9}));
  EXPECT_TRUE(got.contains({"conv_w_3", 1, 9}));
}

TEST(CoupledChannels, MissingRuleIsAnError) {
  ModelBuilder b(6);
  auto x = b.input("input", {1, 4});
  x = b.gemm(x, 4);
  x = b.node("Erf", {x}, b.shape(x));
  const ModelIR ir = b.finish({b.gemm(x, 2)}, false);
  const auto cg = ComputationalGraph::build(ir);
  try {
    coupled_channels(cg, create_mask(cg, cg.value_id("gemm_w_0"), 0));
    FAIL();
  } catch (const UnsupportedOperatorError& e) {
    EXPECT_EQ(e.op_type(), "Erf");
  }
}

TEST(Properties, OrderIndependentOverTwentySeeds) {
  for (const auto& f : equivalence_fixtures()) {
    const ModelIR ir = f.make();
    const auto cg = ComputationalGraph::build(ir);
    const MaskPropagator prop(cg);
    for (NodeId p : parameters(cg)) {
      const auto axis = prunable_axis(cg, p);
      if (!axis) continue;
      const Mask seed = create_mask(cg, p, 0);
      const MaskSet ref = prop.coupled_channels(seed);
      for (uint64_t s = 0; s < 20; ++s) EXPECT_EQ(prop.coupled_channels(seed, {.shuffle_seed = s}), ref) << f.name;
    }
  }
}

TEST(Properties, Symmetric) {
  Rng rng(77);
  for (const auto& f : equivalence_fixtures()) {
    const ModelIR ir = f.make();
    const auto cg = ComputationalGraph::build(ir);
    const MaskPropagator prop(cg);
    for (NodeId p : parameters(cg)) {
      const auto axis = prunable_axis(cg, p);
      if (!axis) continue;
      const int64_t a = rng.below(cg.node(p).shape[static_cast<size_t>(*axis)]);
      const MaskSet forward = prop.coupled_channels(create_mask(cg, p, a));
      // pick one reached entry and propagate back from it
      const auto masks = forward.masks();
      const Mask& pick = masks[static_cast<size_t>(rng.below(static_cast<int64_t>(masks.size())))];
      const int64_t bidx = pick.indices[static_cast<size_t>(rng.below(static_cast<int64_t>(pick.indices.size())))];
      const MaskSet back = prop.coupled_channels(Mask{pick.node, pick.axis, {bidx}});
      EXPECT_TRUE(back.contains(p, *axis, a)) << f.name << " " << cg.node(p).name;
    }
  }
}

TEST(Properties, FixpointIsClosed) {
  const ModelIR ir = multi_branch();
  const auto cg = ComputationalGraph::build(ir);
  const MaskSet s = coupled_channels(cg, create_mask(cg, cg.value_id("conv_w_0"), 4));
  for (const auto& m : s.masks()) {
    for (NodeId op : cg.neighbors(m.node)) {
      const MaskSet step = propagate_through_op(cg, op, m);
      for (const auto& n : step.masks())
        for (int64_t i : n.indices) EXPECT_TRUE(s.contains(n.node, n.axis, i));
    }
  }
}

TEST(MaskSet, MergeIsUnion) {
  MaskSet s;
  const std::vector<int64_t> a{3, 1}, b{1, 2};
  EXPECT_EQ(s.merge(0, 1, a), (std::vector<int64_t>{1, 3}));
  EXPECT_EQ(s.merge(0, 1, b), (std::vector<int64_t>{2}));
  EXPECT_EQ(*s.find(0, 1), (std::vector<int64_t>{1, 2, 3}));
  EXPECT_EQ(s.index_count(), 3u);
  EXPECT_TRUE(s.erase(0, 1, 2));
  EXPECT_FALSE(s.contains(0, 1, 2));
}

TEST(RuleTable, MarkdownListsEveryOperator) {
  const std::string md = rule_table_markdown();
  for (const char* op : {"Conv", "Gemm", "MatMul", "BatchNormalization", "Add", "Concat", "Flatten", "Softmax"})
    EXPECT_NE(md.find(op), std::string::npos) << op;
}

}  // namespace
}  // namespace spa
