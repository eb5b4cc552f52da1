// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "spa/surgeon.h"

#include <algorithm>
#include <tuple>

#include "spa/error.h"

namespace spa {

std::vector<Deletion> deletions_of(const ComputationalGraph& cg, const MaskSet& masks) {
  std::vector<Deletion> out;
  for (const auto& [key, idx] : masks.entries()) {
    const CGNode& n = cg.node(key.first);
    if (n.kind == NodeKind::kParameter) out.push_back({n.name, key.second, idx});
  }
  std::sort(out.begin(), out.end(), [](const Deletion& a, const Deletion& b) {
    return std::tie(a.initializer, a.axis) < std::tie(b.initializer, b.axis);
  });
  return out;
}

namespace {

Tensor delete_all(Tensor t, const std::vector<const Deletion*>& dels) {
  for (const Deletion* d : dels) t = delete_slices(t, d->axis, d->indices);
  return t;
}

std::map<std::string, std::vector<const Deletion*>> by_initializer(const std::vector<Deletion>& dels) {
  std::map<std::string, std::vector<const Deletion*>> m;
  for (const auto& d : dels) m[d.initializer].push_back(&d);
  return m;
}

}  // namespace

ModelIR apply_masks(const ModelIR& ir, const ComputationalGraph& cg, const MaskSet& masks) {
  if (masks.empty()) return ir;
  ModelIR out = ir;
  std::map<std::string, Shape> expected = ir.value_shapes;
  for (const auto& [key, idx] : masks.entries()) {
    const CGNode& n = cg.node(key.first);
    auto it = expected.find(n.name);
    if (it == expected.end() || key.second < 0 || static_cast<size_t>(key.second) >= it->second.size()) {
      throw ConsistencyError("mask on '" + n.name + "' axis " + std::to_string(key.second) + " does not fit the model");
    }
    int64_t& ext = it->second[static_cast<size_t>(key.second)];
    if (idx.back() >= ext) throw ConsistencyError("mask index out of range on '" + n.name + "'");
    ext -= static_cast<int64_t>(idx.size());
    if (ext <= 0) throw ConsistencyError("pruning would remove every channel of '" + n.name + "' axis " + std::to_string(key.second));
  }
  const auto dels = deletions_of(cg, masks);
  for (const auto& [name, list] : by_initializer(dels)) {
    Tensor& t = out.initializers.at(name);
    t = delete_all(std::move(t), list);
  }
  for (auto& op : out.nodes) {
    if (op.op_type != "Conv") continue;
    const int64_t group = op.int_attr("group", 1);
    if (group == 1) continue;
    const Shape& w_before = ir.shape_of(op.inputs[1]);
    const Shape& w_after = expected.at(op.inputs[1]);
    if (w_before[1] == 1) {
      // depthwise: one group per surviving input channel
      const int64_t new_group = expected.at(op.inputs[0])[1];
      if (new_group != group) op.attributes["group"] = new_group;
    } else if (w_after[1] != w_before[1] || w_after[0] != w_before[0]) {
      if (w_after[0] % group != 0) {
        throw ConsistencyError("pruning leaves Conv '" + op.name + "' with output channels not divisible by its " +
                               std::to_string(group) + " groups");
      }
    }
  }
  for (auto& v : out.graph_inputs) v.shape = expected.at(v.name);
  try {
    out = infer_shapes(std::move(out));
  } catch (const ShapeError& e) {
    throw ConsistencyError(std::string("pruned model fails shape inference: ") + e.what());
  }
  for (const auto& [name, shape] : expected) {
    const Shape& got = out.shape_of(name);
    if (got != shape) {
      throw ConsistencyError("value '" + name + "' has shape " + shape_string(got) + " after pruning, the masks imply " +
                             shape_string(shape));
    }
  }
  return out;
}

ModelIR apply_prune(const ModelIR& ir, const ComputationalGraph& cg, const PruneSet& ps) {
  return apply_masks(ir, cg, ps.masks);
}

ModelIR zero_mask(const ModelIR& ir, const std::vector<Deletion>& dels) {
  ModelIR out = ir;
  for (const auto& d : dels) {
    auto it = out.initializers.find(d.initializer);
    if (it == out.initializers.end()) throw InputError("no initializer named '" + d.initializer + "'");
    if (d.axis < 0 || d.axis >= it->second.rank()) {
      throw InputError("axis " + std::to_string(d.axis) + " invalid for '" + d.initializer + "'");
    }
    zero_slices(it->second, d.axis, d.indices);
  }
  return out;
}

ModelIR zero_mask(const ModelIR& ir, const ComputationalGraph& cg, const MaskSet& masks) {
  return zero_mask(ir, deletions_of(cg, masks));
}

ModelIR zero_mask(const ModelIR& ir, const ComputationalGraph& cg, const PruneSet& ps) {
  return zero_mask(ir, cg, ps.masks);
}

Tensor expand_slices(const Tensor& pruned, const Shape& original, const std::vector<Deletion>& dels) {
  const size_t rank = original.size();
  std::vector<std::vector<int64_t>> remap(rank);  // original index → pruned index or -1
  Shape expect = original;
  for (size_t a = 0; a < rank; ++a) {
    remap[a].assign(static_cast<size_t>(original[a]), 0);
    for (const auto& d : dels) {
      if (d.axis != static_cast<int>(a)) continue;
      for (int64_t i : d.indices) {
        if (i < 0 || i >= original[a]) throw InputError("deleted index out of range for '" + d.initializer + "'");
        remap[a][static_cast<size_t>(i)] = -1;
      }
    }
    int64_t next = 0;
    for (auto& r : remap[a]) r = r < 0 ? -1 : next++;
    expect[a] = next;
  }
  if (expect != pruned.shape()) {
    throw InputError("tensor of shape " + shape_string(pruned.shape()) + " cannot come from " +
                     shape_string(original) + " with the recorded deletions");
  }
  Tensor out(original);
  std::vector<int64_t> coord(rank, 0);
  for (int64_t flat = 0; flat < out.size(); ++flat) {
    int64_t src = 0;
    bool kept = true;
    for (size_t a = 0; a < rank && kept; ++a) {
      const int64_t r = remap[a][static_cast<size_t>(coord[a])];
      kept = r >= 0;
      src = src * expect[a] + r;
    }
    if (kept) out[flat] = pruned[src];
    for (size_t a = rank; a-- > 0;) {
      if (++coord[a] < original[a]) break;
      coord[a] = 0;
    }
  }
  return out;
}

Sidecar make_sidecar(const ModelIR& original, const ModelIR& pruned, std::vector<Deletion> dels) {
  Sidecar s;
  s.deletions = std::move(dels);
  const auto by_name = by_initializer(s.deletions);
  for (const auto& [name, t] : pruned.initializers) {
    auto it = original.initializers.find(name);
    if (it == original.initializers.end()) continue;
    auto d = by_name.find(name);
    const std::vector<const Deletion*> none;
    const auto& list = d == by_name.end() ? none : d->second;
    if (delete_all(it->second, list) == t) continue;
    std::vector<Deletion> own;
    for (const Deletion* p : list) own.push_back(*p);
    s.updates.emplace(name, expand_slices(t, it->second.shape(), own));
  }
  return s;
}

nlohmann::json sidecar_json(const Sidecar& s) {
  nlohmann::json dels = nlohmann::json::array();
  for (const auto& d : s.deletions) dels.push_back({{"initializer", d.initializer}, {"axis", d.axis}, {"indices", d.indices}});
  nlohmann::json updates = nlohmann::json::object();
  for (const auto& [name, t] : s.updates) updates[name] = {{"shape", t.shape()}, {"data", t.values()}};
  return {{"format", "spa-prune-sidecar-v1"}, {"deletions", std::move(dels)}, {"updates", std::move(updates)}};
}

Sidecar parse_sidecar(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "spa-prune-sidecar-v1") throw InputError("sidecar must declare \"format\": \"spa-prune-sidecar-v1\"");
    Sidecar s;
    for (const auto& d : j.at("deletions")) {
      Deletion del{d.at("initializer").get<std::string>(), d.at("axis").get<int>(), d.at("indices").get<std::vector<int64_t>>()};
      std::sort(del.indices.begin(), del.indices.end());
      del.indices.erase(std::unique(del.indices.begin(), del.indices.end()), del.indices.end());
      s.deletions.push_back(std::move(del));
    }
    if (j.contains("updates")) {
      for (const auto& [name, v] : j.at("updates").items()) {
        Shape shape = v.at("shape").get<Shape>();
        auto data = v.at("data").get<std::vector<float>>();
        if (element_count(shape) != static_cast<int64_t>(data.size())) throw InputError("sidecar update '" + name + "' is malformed");
        s.updates.emplace(name, Tensor(std::move(shape), std::move(data)));
      }
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed sidecar: ") + e.what());
  }
}

ModelIR reference_twin(const ModelIR& original, const Sidecar& s) {
  ModelIR twin = original;
  for (const auto& [name, t] : s.updates) {
    auto it = twin.initializers.find(name);
    if (it == twin.initializers.end() || it->second.shape() != t.shape()) {
      throw InputError("sidecar update '" + name + "' does not match the original model");
    }
    it->second = t;
  }
  return zero_mask(twin, s.deletions);
}

}  // namespace spa
