// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

// FLOP/parameter counting and target-driven member selection.

#include <algorithm>
#include <cmath>

#include "spa/error.h"
#include "spa/importance.h"

namespace spa {

int64_t op_flops(const OperatorSpec& op, const ShapeLookup& shape) {
  const std::string& t = op.op_type;
  const Shape& y = shape(op.outputs[0]);
  if (t == "Conv") {
    const Shape& w = shape(op.inputs[1]);
    return 2 * element_count(w) * y[0] * y[2] * y[3];
  }
  if (t == "Gemm") {
    const Shape& a = shape(op.inputs[0]);
    return 2 * a[0] * a[1] * y[1];
  }
  if (t == "MatMul") {
    const Shape& a = shape(op.inputs[0]);
    return 2 * element_count(y) * a.back();
  }
  if (t == "MaxPool" || t == "AveragePool") {
    const auto k = op.ints_attr("kernel_shape");
    return element_count(y) * element_count(k);
  }
  if (t == "GlobalAveragePool") return element_count(shape(op.inputs[0]));
  if (t == "BatchNormalization" || t == "Relu" || t == "Sigmoid" || t == "Add" || t == "Softmax") {
    return element_count(y);
  }
  return 0;  // Flatten, Concat, Identity move data only
}

ModelCost count_cost(const ModelIR& ir) {
  ModelCost c;
  const ShapeLookup lookup = [&ir](const std::string& n) -> const Shape& { return ir.shape_of(n); };
  for (const auto& op : ir.nodes) c.flops += op_flops(op, lookup);
  for (const auto& [name, t] : ir.initializers) c.params += t.size();
  return c;
}

nlohmann::json metrics_json(const ModelCost& before, const ModelCost& after) {
  auto ratio = [](int64_t a, int64_t b) { return b > 0 ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  return {{"flops_before", before.flops}, {"flops_after", after.flops}, {"rf", ratio(before.flops, after.flops)},
          {"params_before", before.params}, {"params_after", after.params}, {"rp", ratio(before.params, after.params)}};
}

size_t min_keep(size_t member_count) {
  const auto pct = static_cast<size_t>(std::ceil(0.04 * static_cast<double>(member_count)));
  return std::max<size_t>(1, pct);
}

namespace {

// Tracks shapes and cost while members are removed one at a time.
class Projection {
 public:
  Projection(const ModelIR& ir, const ComputationalGraph& cg, const GroupSet& gs)
      : ir_(ir), cg_(cg), gs_(gs), shapes_(ir.value_shapes) {
    lookup_ = [this](const std::string& n) -> const Shape& {
      auto it = shapes_.find(n);
      if (it == shapes_.end()) throw ShapeError("value '" + n + "' has no shape");
      return it->second;
    };
    for (const auto& op : ir.nodes) {
      flops_.push_back(op_flops(op, lookup_));
      total_flops_ += flops_.back();
    }
    for (const auto& [name, t] : ir.initializers) params_ += t.size();
    base_flops_ = total_flops_;
    kept_.reserve(gs.groups.size());
    for (const auto& g : gs.groups) kept_.push_back(g.members.size());
  }

  bool removable(size_t g) const { return kept_[g] > min_keep(gs_.groups[g].members.size()); }

  void remove(size_t g, size_t m) {
    --kept_[g];
    std::vector<NodeId> touched;
    for (const auto& mask : gs_.groups[g].members[m].masks) {
      const CGNode& n = cg_.node(mask.node);
      Shape& s = shapes_.at(n.name);
      const int64_t before = element_count(s);
      s[static_cast<size_t>(mask.axis)] -= static_cast<int64_t>(mask.indices.size());
      if (n.kind == NodeKind::kParameter) params_ -= before - element_count(s);
      for (NodeId op : cg_.neighbors(mask.node)) touched.push_back(op);
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (NodeId op : touched) {
      const auto i = static_cast<size_t>(op);
      const int64_t f = op_flops(ir_.nodes[i], lookup_);
      total_flops_ += f - flops_[i];
      flops_[i] = f;
    }
  }

  double rf() const {
    return total_flops_ > 0 ? static_cast<double>(base_flops_) / static_cast<double>(total_flops_) : 0.0;
  }
  int64_t flops() const { return total_flops_; }
  int64_t params() const { return params_; }
  int64_t base_flops() const { return base_flops_; }

 private:
  const ModelIR& ir_;
  const ComputationalGraph& cg_;
  const GroupSet& gs_;
  std::map<std::string, Shape> shapes_;
  ShapeLookup lookup_;
  std::vector<int64_t> flops_;
  std::vector<size_t> kept_;
  int64_t total_flops_ = 0;
  int64_t base_flops_ = 0;
  int64_t params_ = 0;
};

PruneSet finish(const GroupSet& gs, std::vector<std::pair<size_t, size_t>> members, const Projection& p) {
  PruneSet ps;
  ps.masks = gs.masks_for(members);
  ps.members = std::move(members);
  ps.projected_flops = p.flops();
  ps.projected_params = p.params();
  return ps;
}

}  // namespace

PruneSet select_for_target(const ModelIR& ir, const ComputationalGraph& cg, const GroupSet& gs,
                           const GroupScores& scores, double target_rf) {
  if (!(target_rf >= 1.0) || !std::isfinite(target_rf)) {
    throw InputError("target reduction factor must be a finite number >= 1");
  }
  Projection p(ir, cg, gs);
  std::vector<std::pair<size_t, size_t>> chosen;
  if (p.base_flops() == 0 && target_rf > 1.0) throw TargetUnreachableError(target_rf, 1.0);
  if (p.rf() >= target_rf) return finish(gs, chosen, p);
  for (const auto& ms : scores.ranked) {
    if (!p.removable(ms.group)) continue;
    p.remove(ms.group, ms.member);
    chosen.emplace_back(ms.group, ms.member);
    if (p.rf() >= target_rf) return finish(gs, std::move(chosen), p);
  }
  throw TargetUnreachableError(target_rf, chosen.empty() ? 1.0 : p.rf());
}

PruneSet select_by_ratio(const ModelIR& ir, const ComputationalGraph& cg, const GroupSet& gs,
                         const GroupScores& scores, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw InputError("pruning ratio must lie in [0, 1)");
  Projection p(ir, cg, gs);
  const auto want = static_cast<size_t>(std::floor(ratio * static_cast<double>(scores.ranked.size())));
  std::vector<std::pair<size_t, size_t>> chosen;
  for (const auto& ms : scores.ranked) {
    if (chosen.size() >= want) break;
    if (!p.removable(ms.group)) continue;
    p.remove(ms.group, ms.member);
    chosen.emplace_back(ms.group, ms.member);
  }
  return finish(gs, std::move(chosen), p);
}

PruneSet make_prune_set(const ModelIR& ir, const ComputationalGraph& cg, const GroupSet& gs,
                        std::vector<std::pair<size_t, size_t>> members) {
  std::sort(members.begin(), members.end());
  members.erase(std::unique(members.begin(), members.end()), members.end());
  Projection p(ir, cg, gs);
  for (const auto& [g, m] : members) {
    if (g >= gs.groups.size() || m >= gs.groups[g].members.size()) {
      throw InputError("(" + std::to_string(g) + ", " + std::to_string(m) + ") is not a group member");
    }
    p.remove(g, m);
  }
  return finish(gs, std::move(members), p);
}

}  // namespace spa
