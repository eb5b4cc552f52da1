// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "spa/compute_graph.h"
#include "spa/grouping.h"
#include "spa/onnx_model.h"

namespace spa {

/// Per-element, non-negative scores keyed by initializer name.
using ScoreTable = std::map<std::string, Tensor>;

ScoreTable score_l1(const ModelIR& ir);

/// Reads {"format":"spa-scores-v1","granularity":"element"|"channel","scores":{…}}.
/// Initializers without an entry score 0. Channel scores are broadcast along
/// the output-channel axis.
ScoreTable parse_scores(const nlohmann::json& doc, const ModelIR& ir);
ScoreTable import_scores(const std::filesystem::path& path, const ModelIR& ir);
nlohmann::json export_scores(const ScoreTable& st);

enum class Aggregation { kMean, kMax, kProduct, kSum };
enum class Normalization { kSum, kMax, kMedian };

Aggregation parse_aggregation(std::string_view s);
Normalization parse_normalization(std::string_view s);
const char* to_string(Aggregation a);
const char* to_string(Normalization n);

struct MemberScore {
  size_t group = 0;
  size_t member = 0;
  double score = 0.0;
};

struct GroupScores {
  /// Normalized score per group and member.
  std::vector<std::vector<double>> scores;
  /// False for groups with no scored parameter element; such groups are
  /// never selected.
  std::vector<bool> scored;
  /// Every scored member, ascending by score, ties by (group, member).
  std::vector<MemberScore> ranked;
  std::vector<std::string> warnings;
};

/// Restricts which (parameter, axis) entries contribute to a member's score.
using EntryFilter = std::function<bool(NodeId param, int axis)>;

/// Raw member statistic: AGG over every parameter element addressed by the
/// member. For kProduct the value is the natural log of the product.
double aggregate_member(const ComputationalGraph& cg, const CoupledChannelSet& member, const ScoreTable& st,
                        Aggregation agg, const EntryFilter& filter = {}, int64_t* element_count = nullptr);

GroupScores aggregate(const ComputationalGraph& cg, const GroupSet& gs, const ScoreTable& st, Aggregation agg,
                      Normalization norm, const EntryFilter& filter = {});

// ---------------------------------------------------------------------------

struct ModelCost {
  int64_t flops = 0;
  int64_t params = 0;
};

using ShapeLookup = std::function<const Shape&(const std::string&)>;

/// Floating point operations of one node given the shapes of its values.
int64_t op_flops(const OperatorSpec& op, const ShapeLookup& shape);
ModelCost count_cost(const ModelIR& ir);

/// {"flops_before","flops_after","rf","params_before","params_after","rp"}.
nlohmann::json metrics_json(const ModelCost& before, const ModelCost& after);

// ---------------------------------------------------------------------------

struct PruneSet {
  std::vector<std::pair<size_t, size_t>> members;  // (group, member), selection order
  MaskSet masks;
  int64_t projected_flops = 0;
  int64_t projected_params = 0;

  bool empty() const { return members.empty(); }
};

/// Members each group must keep: max(1, ceil(4% of its members)).
size_t min_keep(size_t member_count);

/// Greedy ascending-score selection until projected RF ≥ target_rf.
/// Throws TargetUnreachableError with the best RF the min-keep rule allows.
PruneSet select_for_target(const ModelIR& ir, const ComputationalGraph& cg, const GroupSet& gs,
                           const GroupScores& scores, double target_rf);

/// Lowest-scored fraction `ratio` of all scored members, min-keep respected.
PruneSet select_by_ratio(const ModelIR& ir, const ComputationalGraph& cg, const GroupSet& gs,
                         const GroupScores& scores, double ratio);

/// PruneSet from an explicit member list (for tests and tools).
PruneSet make_prune_set(const ModelIR& ir, const ComputationalGraph& cg, const GroupSet& gs,
                        std::vector<std::pair<size_t, size_t>> members);

}  // namespace spa
