// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "fixtures.h"
#include "spa/compute_graph.h"
#include "spa/error.h"

namespace spa {
namespace {

using namespace spa::testing;

TEST(BuildGraph, ConvBnReluCounts) {
  ModelBuilder b(1);
  auto x = b.input("input", {1, 3, 8, 8});
  x = b.relu(b.batchnorm(b.conv(x, 4, 3)));
  const auto cg = ComputationalGraph::build(b.finish({x}));
  EXPECT_EQ(cg.num_operators(), 3u);
  EXPECT_EQ(cg.num_parameters(), 6u);
  EXPECT_EQ(cg.num_data(), 4u);
}

TEST(BuildGraph, SingleIdentity) {
  ModelBuilder b(1);
  auto x = b.input("input", {1, 3});
  const auto cg = ComputationalGraph::build(b.finish({b.unary("Identity", x)}));
  EXPECT_EQ(cg.num_operators(), 1u);
  EXPECT_EQ(cg.num_data(), 2u);
  EXPECT_EQ(cg.num_parameters(), 0u);
}

TEST(BuildGraph, EdgeCountMatchesLinks) {
  const ModelIR ir = mlp();
  const auto cg = ComputationalGraph::build(ir);
  size_t links = 0;
  for (const auto& op : ir.nodes) links += op.inputs.size() + op.outputs.size();
  // hand count: three Gemms with X, W, B and Y, two Relus with X and Y
  EXPECT_EQ(links, 3u * 4u + 2u * 2u);
  EXPECT_EQ(cg.edges().size(), links);
}

TEST(BuildGraph, BipartiteAndCountsOnEveryFixture) {
  for (const auto& f : equivalence_fixtures()) {
    const ModelIR ir = f.make();
    const auto cg = ComputationalGraph::build(ir);
    EXPECT_EQ(cg.num_parameters(), ir.initializers.size()) << f.name;
    EXPECT_EQ(cg.num_operators(), ir.nodes.size()) << f.name;
    for (const auto& e : cg.edges()) {
      const bool from_op = cg.node(e.from).kind == NodeKind::kOperator;
      const bool to_op = cg.node(e.to).kind == NodeKind::kOperator;
      EXPECT_NE(from_op, to_op) << f.name;
    }
  }
}

TEST(Neighbors, FanOutIntoAddAndConv) {
  const ModelIR ir = resnet_basic();
  const auto cg = ComputationalGraph::build(ir);
  // the stem Relu output feeds the first block's Conv and its residual Add
  const NodeId stem = cg.value_id(ir.nodes[2].outputs[0]);
  std::vector<std::string> types;
  for (NodeId op : cg.neighbors(stem)) types.push_back(cg.op_spec(op).op_type);
  EXPECT_EQ(types, (std::vector<std::string>{"Relu", "Conv", "Add"}));
}

TEST(Neighbors, GraphInputHasOnlyConsumers) {
  const ModelIR ir = conv_bn_relu();
  const auto cg = ComputationalGraph::build(ir);
  const auto n = cg.neighbors(cg.value_id("input"));
  ASSERT_EQ(n.size(), 1u);
  EXPECT_EQ(cg.op_spec(n[0]).op_type, "Conv");
  EXPECT_TRUE(cg.is_graph_input(cg.value_id("input")));
}

TEST(Neighbors, BnScaleHasOneOperator) {
  const ModelIR ir = conv_bn_relu();
  const auto cg = ComputationalGraph::build(ir);
  const auto n = cg.neighbors(cg.value_id("bn_scale_0"));
  ASSERT_EQ(n.size(), 1u);
  EXPECT_EQ(cg.op_spec(n[0]).op_type, "BatchNormalization");
}

TEST(Neighbors, DeterministicAcrossBuilds) {
  const ModelIR ir = multi_branch();
  const auto a = ComputationalGraph::build(ir);
  const auto b = ComputationalGraph::build(ir);
  for (size_t v = 0; v < a.nodes().size(); ++v) {
    if (a.nodes()[v].kind == NodeKind::kOperator) continue;
    EXPECT_EQ(a.neighbors(static_cast<NodeId>(v)), b.neighbors(static_cast<NodeId>(v)));
  }
}

TEST(Neighbors, UnknownValueThrows) {
  const auto cg = ComputationalGraph::build(mlp());
  EXPECT_THROW(cg.value_id("missing"), Error);
  EXPECT_EQ(cg.find_value("missing"), kNoNode);
}

TEST(Dot, MentionsEveryKind) {
  const std::string dot = ComputationalGraph::build(conv_bn_relu()).to_dot();
  EXPECT_NE(dot.find("digraph"), std::string::npos);
  EXPECT_NE(dot.find("conv_w_0"), std::string::npos);
  EXPECT_NE(dot.find("BatchNormalization"), std::string::npos);
}

}  // namespace
}  // namespace spa
