// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spa/compute_graph.h"
#include "spa/mask_propagation.h"

namespace spa {

struct PatternSlot {
  NodeId node = kNoNode;
  int axis = 0;

  friend auto operator<=>(const PatternSlot&, const PatternSlot&) = default;
};

/// Channels that must be deleted together. `masks[k]` lives on the group's
/// pattern slot k.
struct CoupledChannelSet {
  std::vector<Mask> masks;

  MaskSet to_mask_set() const;
  size_t index_count() const;
  friend bool operator==(const CoupledChannelSet&, const CoupledChannelSet&) = default;
};

struct Group {
  size_t id = 0;
  NodeId seed = kNoNode;  // parameter node the group was discovered from
  int seed_axis = 0;
  std::vector<PatternSlot> pattern;  // sorted
  std::vector<CoupledChannelSet> members;
  bool substituted = false;  // members derived from one probe rather than one propagation each

  /// Index into `pattern` of (node, axis), or -1.
  int slot_of(NodeId node, int axis) const;
};

struct GroupSet {
  std::vector<Group> groups;
  std::map<NodeId, size_t> seed_map;        // operator → group that analysed it
  std::vector<NodeId> protected_params;     // seeds whose coupling reaches a graph input/output

  size_t member_count() const;
  /// Union of the chosen members' masks; `selection` holds (group, member).
  MaskSet masks_for(const std::vector<std::pair<size_t, size_t>>& selection) const;
};

struct GroupingOptions {
  /// Instantiate members by index substitution when the probes show an affine
  /// pattern. Disabled, every member gets its own propagation.
  bool substitute = true;
  uint64_t* edge_visits = nullptr;
};

GroupSet group_channels(const ComputationalGraph& cg, const GroupingOptions& opts = {});

struct GroupViolation {
  std::string kind;  // disjointness, coverage, pattern, protected, minimality
  std::string detail;
};

struct VerifyOptions {
  /// Re-propagate at most this many members per group (0 = none); members are
  /// taken evenly across the group.
  size_t fixpoint_checks_per_group = SIZE_MAX;
};

std::vector<GroupViolation> verify_group_set(const ComputationalGraph& cg, const GroupSet& gs,
                                             const VerifyOptions& opts = {});

/// {"format":"spa-groups-v1", "groups":[…], "protected":[…]}.
nlohmann::json group_report(const ComputationalGraph& cg, const GroupSet& gs);

}  // namespace spa
