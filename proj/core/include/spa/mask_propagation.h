// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spa/compute_graph.h"

namespace spa {

/// Channel indices selected on one axis of one data or parameter node.
struct Mask {
  NodeId node = kNoNode;
  int axis = 0;
  std::vector<int64_t> indices;  // sorted, unique, non-empty

  friend bool operator==(const Mask&, const Mask&) = default;
};

/// At most one index set per (node, axis); merging is set union.
class MaskSet {
 public:
  using Key = std::pair<NodeId, int>;

  /// Adds `indices` (any order) and returns the ones that were not present.
  std::vector<int64_t> merge(NodeId node, int axis, std::span<const int64_t> indices);
  void merge(const Mask& m) { merge(m.node, m.axis, m.indices); }
  void merge(const MaskSet& other);

  bool contains(NodeId node, int axis, int64_t index) const;
  const std::vector<int64_t>* find(NodeId node, int axis) const;
  bool erase(NodeId node, int axis, int64_t index);

  /// Masks ordered by (node, axis).
  std::vector<Mask> masks() const;
  const std::map<Key, std::vector<int64_t>>& entries() const { return entries_; }
  size_t index_count() const;
  bool empty() const { return entries_.empty(); }

  friend bool operator==(const MaskSet&, const MaskSet&) = default;

 private:
  std::map<Key, std::vector<int64_t>> entries_;
};

// ---------------------------------------------------------------------------
// Rule table. Every operator exposes named ports (its inputs and outputs) whose
// axes carry symbols; a rule says which (port, symbol) pairs a mask on one
// (port, symbol) induces and how indices are transformed on the way. A port
// ending in '*' stands for every variadic input; an axis symbol ending in '*'
// matches any axis of that family and maps to the same symbol on the target.

enum class IndexMap {
  kIdentity,  // i → {i}
  kModulo,    // i → {i mod p}
  kResidues,  // i → {(i mod p) + k·p : k < extent/p}
  kBlock,     // i → {i·p, …, i·p + p − 1}
  kDivide,    // i → {i / p}
  kShift,     // i → {i + offset(source port)}
  kUnshift,   // i → {i − offset(target port)} when in range
};

/// Operator-dependent constant an IndexMap is parameterised by.
enum class MapParam {
  kNone,
  kGroupInputs,   // Conv input channels per group (Cg)
  kGroupOutputs,  // Conv output channels per group (Mg)
  kInnerSize,     // Flatten: elements per flattened channel
};

const char* to_string(IndexMap m);
const char* to_string(MapParam p);

struct RuleTarget {
  std::string_view port;
  std::string_view axis;
  IndexMap map = IndexMap::kIdentity;
  MapParam param = MapParam::kNone;
};

struct PropagationRule {
  std::string_view op_type;
  std::string_view variant;  // e.g. Conv "dense" / "grouped" / "depthwise"; empty if n/a
  std::string_view port;
  std::string_view axis;
  std::vector<RuleTarget> targets;
};

std::span<const PropagationRule> rule_table();

/// Port and axis-symbol layout of each operator, for documentation.
struct PortLayout {
  std::string_view op_type;
  std::string_view layout;
};
std::span<const PortLayout> port_layouts();

/// Markdown rendering of the rule table (the generated operator reference).
std::string rule_table_markdown();

// ---------------------------------------------------------------------------

/// The axis of a parameter that grouping seeds on: Conv weight axis 0, Gemm
/// weight output axis (per transB), MatMul weight axis 1. Empty otherwise.
std::optional<int> prunable_axis(const ComputationalGraph& cg, NodeId param);

/// Mask containing exactly {channel} on the parameter's prunable axis.
Mask create_mask(const ComputationalGraph& cg, NodeId param, int64_t channel);

struct PropagationOptions {
  /// Pop the worklist in a seeded random order instead of LIFO. The result is
  /// the same fixpoint; used to test that claim.
  std::optional<uint64_t> shuffle_seed;
  /// Incremented by one for every (value, operator) edge traversed.
  uint64_t* edge_visits = nullptr;
};

/// Rules resolved against one graph. Building it binds every operator once;
/// afterwards propagation is table lookups.
class MaskPropagator {
 public:
  explicit MaskPropagator(const ComputationalGraph& cg);

  const ComputationalGraph& graph() const { return *cg_; }

  /// Masks induced by `incoming` on the operator's connected values. Entries
  /// may include the incoming value itself (grouped Conv siblings).
  MaskSet propagate_through_op(NodeId op, const Mask& incoming) const;

  /// Least fixpoint containing `m`, closed under every adjacent operator's rule.
  MaskSet coupled_channels(const Mask& m, const PropagationOptions& opts = {}) const;

  /// Operator variant the rule lookup used ("dense", "grouped", …).
  const std::string& variant(NodeId op) const;

 private:
  struct Induced {
    NodeId value;
    int axis;
    IndexMap map;
    int64_t param;
    int64_t src_offset;
    int64_t dst_offset;
    int64_t dst_extent;
  };
  struct Slot {
    std::string port;
    std::string symbol;
    bool has_rule = false;
    std::vector<Induced> targets;
  };
  struct Bound {
    std::string variant;
    // (value, axis) → resolved slots; a value attached twice merges both
    std::map<std::pair<NodeId, int>, std::vector<Slot>> slots;
  };

  void apply(const Induced& t, std::span<const int64_t> indices, MaskSet& out) const;

  const ComputationalGraph* cg_;
  std::vector<Bound> bound_;
};

MaskSet propagate_through_op(const ComputationalGraph& cg, NodeId op, const Mask& incoming);
MaskSet coupled_channels(const ComputationalGraph& cg, const Mask& m, const PropagationOptions& opts = {});

}  // namespace spa
