// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "spa/grouping.h"

#include <algorithm>
#include <set>
#include <tuple>

#include "spa/error.h"

namespace spa {

MaskSet CoupledChannelSet::to_mask_set() const {
  MaskSet s;
  for (const auto& m : masks) s.merge(m);
  return s;
}

size_t CoupledChannelSet::index_count() const {
  size_t n = 0;
  for (const auto& m : masks) n += m.indices.size();
  return n;
}

int Group::slot_of(NodeId node, int axis) const {
  auto it = std::lower_bound(pattern.begin(), pattern.end(), PatternSlot{node, axis});
  if (it == pattern.end() || it->node != node || it->axis != axis) return -1;
  return static_cast<int>(it - pattern.begin());
}

size_t GroupSet::member_count() const {
  size_t n = 0;
  for (const auto& g : groups) n += g.members.size();
  return n;
}

MaskSet GroupSet::masks_for(const std::vector<std::pair<size_t, size_t>>& selection) const {
  MaskSet out;
  for (const auto& [g, m] : selection) {
    if (g >= groups.size() || m >= groups[g].members.size()) {
      throw InputError("selection (" + std::to_string(g) + ", " + std::to_string(m) + ") is not a group member");
    }
    for (const auto& mask : groups[g].members[m].masks) out.merge(mask);
  }
  return out;
}

namespace {

struct SeedInfo {
  NodeId param;
  int axis;
};

std::optional<SeedInfo> seed_of(const ComputationalGraph& cg, NodeId op) {
  const auto& t = cg.op_spec(op).op_type;
  if (t != "Conv" && t != "Gemm" && t != "MatMul") return std::nullopt;
  const auto ins = cg.op_inputs(op);
  if (ins.size() < 2 || ins[1] == kNoNode) return std::nullopt;
  const auto axis = prunable_axis(cg, ins[1]);
  if (!axis) return std::nullopt;
  return SeedInfo{ins[1], *axis};
}

bool touches_io(const ComputationalGraph& cg, const MaskSet& s) {
  for (const auto& [key, idx] : s.entries())
    if (cg.is_graph_input(key.first) || cg.is_graph_output(key.first)) return true;
  return false;
}

std::vector<PatternSlot> pattern_of(const MaskSet& s) {
  std::vector<PatternSlot> p;
  for (const auto& [key, idx] : s.entries()) p.push_back({key.first, key.second});
  return p;
}

CoupledChannelSet member_of(const MaskSet& s) {
  CoupledChannelSet c;
  for (const auto& [key, idx] : s.entries()) c.masks.push_back(Mask{key.first, key.second, idx});
  return c;
}

class Grouper {
 public:
  Grouper(const ComputationalGraph& cg, const GroupingOptions& opts)
      : cg_(cg), prop_(cg), opts_(opts), analyzed_(cg.num_operators(), false) {}

  GroupSet run() {
    for (NodeId op : cg_.operators()) {
      if (analyzed_[static_cast<size_t>(op)]) continue;
      const auto seed = seed_of(cg_, op);
      if (!seed) continue;
      try {
        visit(op, *seed);
      } catch (const PropagationError& e) {
        throw PropagationError("while grouping from '" + cg_.op_spec(op).name + "': " + e.what());
      }
    }
    std::sort(gs_.protected_params.begin(), gs_.protected_params.end());
    gs_.protected_params.erase(std::unique(gs_.protected_params.begin(), gs_.protected_params.end()),
                               gs_.protected_params.end());
    return std::move(gs_);
  }

 private:
  MaskSet probe(const SeedInfo& s, int64_t c) {
    PropagationOptions po;
    po.edge_visits = opts_.edge_visits;
    return prop_.coupled_channels(create_mask(cg_, s.param, c), po);
  }

  // Ops whose seed parameter appears on its seed axis are done.
  void mark(const std::vector<PatternSlot>& pattern, std::optional<size_t> gid) {
    for (const auto& slot : pattern) {
      if (cg_.node(slot.node).kind != NodeKind::kParameter) continue;
      for (const auto& u : cg_.uses(slot.node)) {
        if (u.is_output || u.slot != 1) continue;
        const auto s = seed_of(cg_, u.op);
        if (!s || s->param != slot.node || s->axis != slot.axis) continue;
        analyzed_[static_cast<size_t>(u.op)] = true;
        if (gid) gs_.seed_map[u.op] = *gid;
      }
    }
  }

  void protect(const std::vector<PatternSlot>& pattern) {
    for (const auto& slot : pattern) {
      const auto ax = prunable_axis(cg_, slot.node);
      if (ax && *ax == slot.axis) gs_.protected_params.push_back(slot.node);
    }
    mark(pattern, std::nullopt);
  }

  // Members by substitution: member(c) = probe(0) + c·stride per slot, when
  // three probes agree on that affine form.
  std::optional<std::vector<CoupledChannelSet>> substitute(const SeedInfo& s, int64_t extent, const MaskSet& p0) {
    if (extent == 1) return std::vector<CoupledChannelSet>{member_of(p0)};
    const MaskSet p1 = probe(s, 1);
    const auto& e0 = p0.entries();
    const auto& e1 = p1.entries();
    if (e0.size() != e1.size()) return std::nullopt;
    std::vector<int64_t> stride;
    for (auto a = e0.begin(), b = e1.begin(); a != e0.end(); ++a, ++b) {
      if (a->first != b->first || a->second.size() != b->second.size()) return std::nullopt;
      const int64_t d = b->second[0] - a->second[0];
      for (size_t j = 0; j < a->second.size(); ++j)
        if (b->second[j] - a->second[j] != d) return std::nullopt;
      stride.push_back(d);
    }
    const CoupledChannelSet base = member_of(p0);
    const size_t seed_slot = static_cast<size_t>(
        std::distance(e0.begin(), e0.find({s.param, s.axis})));
    auto predict = [&](int64_t c) -> std::optional<CoupledChannelSet> {
      CoupledChannelSet m = base;
      for (size_t k = 0; k < m.masks.size(); ++k) {
        const int64_t ext = cg_.node(m.masks[k].node).shape[static_cast<size_t>(m.masks[k].axis)];
        for (auto& i : m.masks[k].indices) {
          i += c * stride[k];
          if (i < 0 || i >= ext) return std::nullopt;
        }
      }
      return m;
    };
    if (extent >= 3) {
      const MaskSet pl = probe(s, extent - 1);
      const auto* seed_idx = pl.find(s.param, s.axis);
      const auto expect = predict((*seed_idx)[0]);
      if (!expect || expect->to_mask_set() != pl) return std::nullopt;
    }
    std::vector<CoupledChannelSet> members;
    std::vector<bool> covered(static_cast<size_t>(extent), false);
    for (int64_t c = 0; c < extent; ++c) {
      if (covered[static_cast<size_t>(c)]) continue;
      auto m = predict(c);
      if (!m) return std::nullopt;
      for (int64_t i : m->masks[seed_slot].indices) {
        if (covered[static_cast<size_t>(i)]) return std::nullopt;  // members would overlap
        covered[static_cast<size_t>(i)] = true;
      }
      members.push_back(std::move(*m));
    }
    return members;
  }

  void visit(NodeId op, const SeedInfo& s) {
    const int64_t extent = cg_.node(s.param).shape[static_cast<size_t>(s.axis)];
    const MaskSet p0 = probe(s, 0);
    if (touches_io(cg_, p0)) {
      protect(pattern_of(p0));
      analyzed_[static_cast<size_t>(op)] = true;
      return;
    }
    if (opts_.substitute) {
      if (auto members = substitute(s, extent, p0)) {
        Group g;
        g.id = gs_.groups.size();
        g.seed = s.param;
        g.seed_axis = s.axis;
        g.pattern = pattern_of(p0);
        g.members = std::move(*members);
        g.substituted = extent > 1;
        mark(g.pattern, g.id);
        gs_.groups.push_back(std::move(g));
        analyzed_[static_cast<size_t>(op)] = true;
        return;
      }
    }
    // One propagation per member; members with different slot patterns go
    // to different groups.
    std::vector<bool> covered(static_cast<size_t>(extent), false);
    std::vector<MaskSet> found;
    bool reaches_io = false;
    for (int64_t c = 0; c < extent; ++c) {
      if (covered[static_cast<size_t>(c)]) continue;
      MaskSet p = c == 0 ? p0 : probe(s, c);
      reaches_io = reaches_io || touches_io(cg_, p);
      for (int64_t i : *p.find(s.param, s.axis)) covered[static_cast<size_t>(i)] = true;
      found.push_back(std::move(p));
    }
    if (reaches_io) {
      for (const auto& p : found) protect(pattern_of(p));
      analyzed_[static_cast<size_t>(op)] = true;
      return;
    }
    std::map<std::vector<PatternSlot>, size_t> by_pattern;
    for (auto& p : found) {
      auto pattern = pattern_of(p);
      auto [it, fresh] = by_pattern.try_emplace(pattern, gs_.groups.size());
      if (fresh) {
        Group g;
        g.id = gs_.groups.size();
        g.seed = s.param;
        g.seed_axis = s.axis;
        g.pattern = pattern;
        gs_.groups.push_back(std::move(g));
      }
      gs_.groups[it->second].members.push_back(member_of(p));
    }
    for (const auto& [pattern, gid] : by_pattern) mark(pattern, gid);
    analyzed_[static_cast<size_t>(op)] = true;
  }

  const ComputationalGraph& cg_;
  MaskPropagator prop_;
  GroupingOptions opts_;
  std::vector<bool> analyzed_;
  GroupSet gs_;
};

}  // namespace

GroupSet group_channels(const ComputationalGraph& cg, const GroupingOptions& opts) {
  return Grouper(cg, opts).run();
}

std::vector<GroupViolation> verify_group_set(const ComputationalGraph& cg, const GroupSet& gs,
                                             const VerifyOptions& opts) {
  std::vector<GroupViolation> out;
  auto where = [&cg](NodeId n, int axis, int64_t i) {
    return "'" + cg.node(n).name + "' axis " + std::to_string(axis) + " index " + std::to_string(i);
  };
  std::map<std::tuple<NodeId, int, int64_t>, std::pair<size_t, size_t>> owner;
  for (const auto& g : gs.groups) {
    for (size_t m = 0; m < g.members.size(); ++m) {
      const auto& member = g.members[m];
      const std::string tag = "group " + std::to_string(g.id) + " member " + std::to_string(m);
      if (member.masks.size() != g.pattern.size()) {
        out.push_back({"pattern", tag + " touches " + std::to_string(member.masks.size()) + " slots, pattern has " +
                                      std::to_string(g.pattern.size())});
      } else {
        for (size_t k = 0; k < g.pattern.size(); ++k) {
          if (member.masks[k].node != g.pattern[k].node || member.masks[k].axis != g.pattern[k].axis) {
            out.push_back({"pattern", tag + " slot " + std::to_string(k) + " differs from the group pattern"});
          }
        }
      }
      for (const auto& mask : member.masks) {
        if (cg.is_graph_input(mask.node) || cg.is_graph_output(mask.node)) {
          out.push_back({"protected", tag + " touches graph input/output '" + cg.node(mask.node).name + "'"});
        }
        for (int64_t i : mask.indices) {
          auto [it, fresh] = owner.try_emplace({mask.node, mask.axis, i}, g.id, m);
          if (!fresh && it->second != std::pair{g.id, m}) {
            out.push_back({"disjointness", where(mask.node, mask.axis, i) + " is in " + tag + " and in group " +
                                               std::to_string(it->second.first) + " member " +
                                               std::to_string(it->second.second)});
          }
        }
      }
    }
  }
  const std::set<NodeId> shielded(gs.protected_params.begin(), gs.protected_params.end());
  for (const auto& n : cg.nodes()) {
    if (n.kind != NodeKind::kParameter) continue;
    const auto axis = prunable_axis(cg, n.id);
    if (!axis) continue;
    const bool is_protected = shielded.contains(n.id);
    for (int64_t c = 0; c < n.shape[static_cast<size_t>(*axis)]; ++c) {
      const bool present = owner.contains({n.id, *axis, c});
      if (present == is_protected) {
        out.push_back({"coverage", where(n.id, *axis, c) + (is_protected ? " is protected but grouped" : " is in no member")});
      }
    }
  }
  if (opts.fixpoint_checks_per_group > 0) {
    const MaskPropagator prop(cg);
    for (const auto& g : gs.groups) {
      const size_t n = g.members.size();
      const size_t checks = std::min(n, opts.fixpoint_checks_per_group);
      for (size_t k = 0; k < checks; ++k) {
        const size_t m = checks == n ? k : k * (n - 1) / std::max<size_t>(1, checks - 1);
        const auto& member = g.members[m];
        const int s = g.slot_of(g.seed, g.seed_axis);
        if (s < 0 || static_cast<size_t>(s) >= member.masks.size() || member.masks[static_cast<size_t>(s)].indices.empty()) {
          out.push_back({"minimality", "group " + std::to_string(g.id) + " member " + std::to_string(m) + " lacks its seed channel"});
          continue;
        }
        const Mask seed_mask{g.seed, g.seed_axis, {member.masks[static_cast<size_t>(s)].indices.front()}};
        const MaskSet fresh = prop.coupled_channels(seed_mask);
        if (fresh != member.to_mask_set()) {
          out.push_back({"minimality", "group " + std::to_string(g.id) + " member " + std::to_string(m) + " has " +
                                           std::to_string(member.index_count()) + " entries, a fresh propagation gives " +
                                           std::to_string(fresh.index_count())});
        }
      }
    }
  }
  return out;
}

nlohmann::json group_report(const ComputationalGraph& cg, const GroupSet& gs) {
  using nlohmann::json;
  auto ref = [&cg](NodeId n, int axis) {
    const CGNode& node = cg.node(n);
    json j;
    j[node.kind == NodeKind::kParameter ? "initializer" : "value"] = node.name;
    j["axis"] = axis;
    return j;
  };
  json groups = json::array();
  for (const auto& g : gs.groups) {
    json pattern = json::array();
    for (const auto& p : g.pattern) pattern.push_back(ref(p.node, p.axis));
    json members = json::array();
    for (const auto& m : g.members) {
      json entries = json::array();
      for (const auto& mask : m.masks) {
        entries.push_back({{"node", cg.node(mask.node).name}, {"axis", mask.axis}, {"indices", mask.indices}});
      }
      members.push_back(std::move(entries));
    }
    groups.push_back({{"id", g.id},
                      {"seed", ref(g.seed, g.seed_axis)},
                      {"pattern", std::move(pattern)},
                      {"member_count", g.members.size()},
                      {"members", std::move(members)}});
  }
  json prot = json::array();
  for (NodeId p : gs.protected_params) prot.push_back(cg.node(p).name);
  return {{"format", "spa-groups-v1"}, {"groups", std::move(groups)}, {"protected", std::move(prot)}};
}

}  // namespace spa
