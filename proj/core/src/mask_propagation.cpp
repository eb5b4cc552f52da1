// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "spa/mask_propagation.h"

#include <algorithm>
#include <iterator>
#include <random>

#include "rule_binding.h"
#include "spa/error.h"

namespace spa {

// ---------------------------------------------------------------------------
// MaskSet

std::vector<int64_t> MaskSet::merge(NodeId node, int axis, std::span<const int64_t> indices) {
  std::vector<int64_t> in(indices.begin(), indices.end());
  std::sort(in.begin(), in.end());
  in.erase(std::unique(in.begin(), in.end()), in.end());
  if (in.empty()) return {};
  auto& cur = entries_[{node, axis}];
  std::vector<int64_t> added;
  std::set_difference(in.begin(), in.end(), cur.begin(), cur.end(), std::back_inserter(added));
  if (!added.empty()) {
    std::vector<int64_t> merged;
    merged.reserve(cur.size() + added.size());
    std::merge(cur.begin(), cur.end(), added.begin(), added.end(), std::back_inserter(merged));
    cur = std::move(merged);
  }
  return added;
}

void MaskSet::merge(const MaskSet& other) {
  for (const auto& [key, idx] : other.entries_) merge(key.first, key.second, idx);
}

const std::vector<int64_t>* MaskSet::find(NodeId node, int axis) const {
  auto it = entries_.find({node, axis});
  return it == entries_.end() ? nullptr : &it->second;
}

bool MaskSet::contains(NodeId node, int axis, int64_t index) const {
  const auto* v = find(node, axis);
  return v && std::binary_search(v->begin(), v->end(), index);
}

bool MaskSet::erase(NodeId node, int axis, int64_t index) {
  auto it = entries_.find({node, axis});
  if (it == entries_.end()) return false;
  auto pos = std::lower_bound(it->second.begin(), it->second.end(), index);
  if (pos == it->second.end() || *pos != index) return false;
  it->second.erase(pos);
  if (it->second.empty()) entries_.erase(it);
  return true;
}

std::vector<Mask> MaskSet::masks() const {
  std::vector<Mask> out;
  out.reserve(entries_.size());
  for (const auto& [key, idx] : entries_) out.push_back(Mask{key.first, key.second, idx});
  return out;
}

size_t MaskSet::index_count() const {
  size_t n = 0;
  for (const auto& [key, idx] : entries_) n += idx.size();
  return n;
}

// ---------------------------------------------------------------------------
// Seeds

std::optional<int> prunable_axis(const ComputationalGraph& cg, NodeId param) {
  if (cg.node(param).kind != NodeKind::kParameter) return std::nullopt;
  for (const auto& u : cg.uses(param)) {
    if (u.is_output || u.slot != 1) continue;
    const auto& op = cg.op_spec(u.op);
    if (op.op_type == "Conv") return 0;
    if (op.op_type == "Gemm") return op.int_attr("transB", 0) != 0 ? 0 : 1;
    if (op.op_type == "MatMul" && cg.node(param).shape.size() == 2) return 1;
  }
  return std::nullopt;
}

Mask create_mask(const ComputationalGraph& cg, NodeId param, int64_t channel) {
  const CGNode& n = cg.node(param);
  const auto axis = prunable_axis(cg, param);
  if (!axis) {
    throw PropagationError("'" + n.name + "' has no prunable output axis; it can only be reached through propagation");
  }
  const int64_t extent = n.shape[static_cast<size_t>(*axis)];
  if (channel < 0 || channel >= extent) {
    throw DimensionError("channel " + std::to_string(channel) + " out of range for '" + n.name + "' axis " +
                         std::to_string(*axis) + " of extent " + std::to_string(extent));
  }
  return Mask{param, *axis, {channel}};
}

// ---------------------------------------------------------------------------
// Propagator

MaskPropagator::MaskPropagator(const ComputationalGraph& cg) : cg_(&cg) {
  bound_.resize(cg.num_operators());
  for (NodeId op : cg.operators()) {
    const detail::OpBinding b = detail::bind_operator(cg, op);
    const auto rules = detail::rules_for(cg.op_spec(op).op_type, b.variant);
    Bound& out = bound_[static_cast<size_t>(op)];
    out.variant = b.variant;
    auto param_value = [&b](MapParam p) -> int64_t {
      switch (p) {
        case MapParam::kGroupInputs: return b.group_inputs;
        case MapParam::kGroupOutputs: return b.group_outputs;
        case MapParam::kInnerSize: return b.inner;
        case MapParam::kNone: break;
      }
      return 1;
    };
    for (const auto& port : b.ports) {
      for (size_t a = 0; a < port.symbols.size(); ++a) {
        Slot slot{port.port, port.symbols[a], false, {}};
        const PropagationRule* rule = nullptr;
        if (!slot.symbol.empty()) {
          for (const auto* r : rules) {
            if (detail::pattern_matches(r->port, port.port) && detail::pattern_matches(r->axis, slot.symbol)) {
              rule = r;
              break;
            }
          }
        }
        if (rule) {
          slot.has_rule = true;
          for (const auto& t : rule->targets) {
            const std::string sym = t.axis.back() == '*' ? slot.symbol : std::string(t.axis);
            for (const auto& q : b.ports) {
              if (!detail::pattern_matches(t.port, q.port)) continue;
              auto it = std::find(q.symbols.begin(), q.symbols.end(), sym);
              if (it == q.symbols.end()) continue;  // absent or broadcast: nothing to couple
              const int qa = static_cast<int>(it - q.symbols.begin());
              if (q.value == port.value && qa == static_cast<int>(a) && t.map == IndexMap::kIdentity) continue;
              slot.targets.push_back(Induced{q.value, qa, t.map, param_value(t.param), port.offset, q.offset,
                                             cg.node(q.value).shape[static_cast<size_t>(qa)]});
            }
          }
        }
        out.slots[{port.value, static_cast<int>(a)}].push_back(std::move(slot));
      }
    }
  }
}

const std::string& MaskPropagator::variant(NodeId op) const {
  cg_->op_spec(op);
  return bound_[static_cast<size_t>(op)].variant;
}

void MaskPropagator::apply(const Induced& t, std::span<const int64_t> indices, MaskSet& out) const {
  std::vector<int64_t> r;
  const int64_t p = t.param;
  for (int64_t i : indices) {
    switch (t.map) {
      case IndexMap::kIdentity:
        r.push_back(i);
        break;
      case IndexMap::kModulo:
        r.push_back(i % p);
        break;
      case IndexMap::kResidues:
        for (int64_t j = i % p; j < t.dst_extent; j += p) r.push_back(j);
        break;
      case IndexMap::kBlock:
        for (int64_t j = i * p; j < (i + 1) * p; ++j) r.push_back(j);
        break;
      case IndexMap::kDivide:
        r.push_back(i / p);
        break;
      case IndexMap::kShift:
        r.push_back(i + t.src_offset);
        break;
      case IndexMap::kUnshift:
        if (i >= t.dst_offset && i - t.dst_offset < t.dst_extent) r.push_back(i - t.dst_offset);
        break;
    }
  }
  out.merge(t.value, t.axis, r);
}

MaskSet MaskPropagator::propagate_through_op(NodeId op, const Mask& incoming) const {
  const OperatorSpec& spec = cg_->op_spec(op);
  const Bound& b = bound_[static_cast<size_t>(op)];
  auto it = b.slots.find({incoming.node, incoming.axis});
  if (it == b.slots.end()) {
    throw PropagationError(spec.op_type + " node '" + spec.name + "' has no axis " + std::to_string(incoming.axis) +
                           " on value '" + cg_->node(incoming.node).name + "'");
  }
  MaskSet out;
  for (const Slot& s : it->second) {
    if (!s.has_rule) {
      throw PropagationError("no propagation rule for " + spec.op_type +
                             (b.variant.empty() ? "" : " (" + b.variant + ")") + " port " + s.port + " axis " +
                             std::to_string(incoming.axis) + (s.symbol.empty() ? "" : " (" + s.symbol + ")") +
                             " at node '" + spec.name + "'");
    }
    for (const Induced& t : s.targets) apply(t, incoming.indices, out);
  }
  return out;
}

MaskSet MaskPropagator::coupled_channels(const Mask& m, const PropagationOptions& opts) const {
  const CGNode& src = cg_->node(m.node);
  if (src.kind == NodeKind::kOperator) throw PropagationError("masks live on data or parameter nodes");
  if (m.axis < 0 || static_cast<size_t>(m.axis) >= src.shape.size()) {
    throw DimensionError("mask axis " + std::to_string(m.axis) + " invalid for '" + src.name + "' of shape " +
                         shape_string(src.shape));
  }
  for (int64_t i : m.indices) {
    if (i < 0 || i >= src.shape[static_cast<size_t>(m.axis)]) {
      throw DimensionError("mask index " + std::to_string(i) + " out of range on '" + src.name + "'");
    }
  }
  MaskSet result;
  std::vector<Mask> work;
  if (auto added = result.merge(m.node, m.axis, m.indices); !added.empty()) work.push_back({m.node, m.axis, added});
  std::mt19937_64 rng(opts.shuffle_seed.value_or(0));
  while (!work.empty()) {
    size_t pick = work.size() - 1;
    if (opts.shuffle_seed) pick = std::uniform_int_distribution<size_t>(0, work.size() - 1)(rng);
    Mask item = std::move(work[pick]);
    work[pick] = std::move(work.back());
    work.pop_back();
    for (NodeId op : cg_->neighbors(item.node)) {
      if (opts.edge_visits) ++*opts.edge_visits;
      const MaskSet induced = propagate_through_op(op, item);
      for (const auto& [key, idx] : induced.entries()) {
        auto added = result.merge(key.first, key.second, idx);
        if (!added.empty()) work.push_back({key.first, key.second, std::move(added)});
      }
    }
  }
  return result;
}

MaskSet propagate_through_op(const ComputationalGraph& cg, NodeId op, const Mask& incoming) {
  return MaskPropagator(cg).propagate_through_op(op, incoming);
}

MaskSet coupled_channels(const ComputationalGraph& cg, const Mask& m, const PropagationOptions& opts) {
  return MaskPropagator(cg).coupled_channels(m, opts);
}

}  // namespace spa
