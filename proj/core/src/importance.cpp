// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "spa/importance.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "spa/error.h"

namespace spa {

ScoreTable score_l1(const ModelIR& ir) {
  ScoreTable st;
  for (const auto& [name, t] : ir.initializers) {
    Tensor s(t.shape());
    for (int64_t i = 0; i < t.size(); ++i) s[i] = std::fabs(t[i]);
    st.emplace(name, std::move(s));
  }
  return st;
}

namespace {

int output_axis(const ModelIR& ir, const std::string& param, size_t rank) {
  for (const auto& op : ir.nodes) {
    if (op.inputs.size() < 2 || op.inputs[1] != param) continue;
    if (op.op_type == "Gemm") return op.int_attr("transB", 0) != 0 ? 0 : 1;
    if (op.op_type == "MatMul" && rank == 2) return 1;
  }
  return 0;
}

void flatten_nested(const nlohmann::json& j, size_t depth, Shape& shape, std::vector<float>& out,
                    const std::string& name) {
  if (j.is_number()) {
    if (depth != shape.size()) throw InputError("scores for '" + name + "' are ragged");
    out.push_back(j.get<float>());
    return;
  }
  if (!j.is_array()) throw InputError("scores for '" + name + "' must be numbers or nested arrays");
  if (depth == shape.size()) {
    if (!out.empty()) throw InputError("scores for '" + name + "' are ragged");
    shape.push_back(static_cast<int64_t>(j.size()));
  } else if (shape[depth] != static_cast<int64_t>(j.size())) {
    throw InputError("scores for '" + name + "' are ragged");
  }
  for (const auto& e : j) flatten_nested(e, depth + 1, shape, out, name);
}

Tensor read_entry(const nlohmann::json& v, const std::string& name) {
  Shape shape;
  std::vector<float> data;
  if (v.is_object()) {
    if (!v.contains("shape") || !v.contains("data")) throw InputError("scores for '" + name + "' need 'shape' and 'data'");
    shape = v.at("shape").get<Shape>();
    data = v.at("data").get<std::vector<float>>();
    if (element_count(shape) != static_cast<int64_t>(data.size())) {
      throw InputError("scores for '" + name + "': shape " + shape_string(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
  } else {
    flatten_nested(v, 0, shape, data, name);
  }
  for (float f : data) {
    if (!std::isfinite(f) || f < 0.0f) throw InputError("scores for '" + name + "' must be finite and non-negative");
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

ScoreTable parse_scores(const nlohmann::json& doc, const ModelIR& ir) {
  if (!doc.is_object() || doc.value("format", "") != "spa-scores-v1") {
    throw InputError("score file must declare \"format\": \"spa-scores-v1\"");
  }
  const std::string gran = doc.value("granularity", "element");
  if (gran != "element" && gran != "channel") throw InputError("unknown score granularity '" + gran + "'");
  if (!doc.contains("scores") || !doc.at("scores").is_object()) throw InputError("score file has no 'scores' object");
  std::vector<std::string> unmatched;
  for (const auto& [name, v] : doc.at("scores").items())
    if (!ir.initializers.contains(name)) unmatched.push_back(name);
  if (!unmatched.empty()) {
    std::string list;
    for (const auto& n : unmatched) list += (list.empty() ? "" : ", ") + n;
    throw InputError("score file names unknown parameters: " + list);
  }
  ScoreTable st;
  for (const auto& [name, param] : ir.initializers) {
    auto it = doc.at("scores").find(name);
    if (it == doc.at("scores").end()) {
      st.emplace(name, Tensor(param.shape()));
      continue;
    }
    Tensor s = read_entry(*it, name);
    if (gran == "element") {
      if (s.shape() != param.shape()) {
        throw InputError("scores for '" + name + "' have shape " + shape_string(s.shape()) + ", parameter is " +
                         shape_string(param.shape()));
      }
      st.emplace(name, std::move(s));
      continue;
    }
    const int axis = output_axis(ir, name, param.shape().size());
    const Shape& ps = param.shape();
    if (s.rank() != 1 || ps.empty() || s.dim(0) != ps[static_cast<size_t>(axis)]) {
      throw InputError("channel scores for '" + name + "' need " +
                       std::to_string(ps.empty() ? 0 : ps[static_cast<size_t>(axis)]) + " values");
    }
    Tensor full(ps);
    int64_t outer = 1, inner = 1;
    for (size_t i = 0; i < ps.size(); ++i) {
      if (static_cast<int>(i) < axis) outer *= ps[i];
      if (static_cast<int>(i) > axis) inner *= ps[i];
    }
    const int64_t ext = ps[static_cast<size_t>(axis)];
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t c = 0; c < ext; ++c)
        for (int64_t k = 0; k < inner; ++k) full[(o * ext + c) * inner + k] = s[c];
    st.emplace(name, std::move(full));
  }
  return st;
}

ScoreTable import_scores(const std::filesystem::path& path, const ModelIR& ir) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open score file '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("score file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_scores(doc, ir);
}

nlohmann::json export_scores(const ScoreTable& st) {
  nlohmann::json scores = nlohmann::json::object();
  for (const auto& [name, t] : st) scores[name] = {{"shape", t.shape()}, {"data", t.values()}};
  return {{"format", "spa-scores-v1"}, {"granularity", "element"}, {"scores", std::move(scores)}};
}

Aggregation parse_aggregation(std::string_view s) {
  if (s == "mean") return Aggregation::kMean;
  if (s == "max") return Aggregation::kMax;
  if (s == "product" || s == "prod") return Aggregation::kProduct;
  if (s == "sum") return Aggregation::kSum;
  throw InputError("unknown aggregation '" + std::string(s) + "' (mean, max, product, sum)");
}

Normalization parse_normalization(std::string_view s) {
  if (s == "sum") return Normalization::kSum;
  if (s == "max") return Normalization::kMax;
  if (s == "median") return Normalization::kMedian;
  throw InputError("unknown normalization '" + std::string(s) + "' (sum, max, median)");
}

const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::kMean: return "mean";
    case Aggregation::kMax: return "max";
    case Aggregation::kProduct: return "product";
    case Aggregation::kSum: return "sum";
  }
  return "?";
}

const char* to_string(Normalization n) {
  switch (n) {
    case Normalization::kSum: return "sum";
    case Normalization::kMax: return "max";
    case Normalization::kMedian: return "median";
  }
  return "?";
}

namespace {

struct Accumulator {
  double sum = 0.0;
  double max = 0.0;
  double log_sum = 0.0;
  int64_t count = 0;

  void add(double v) {
    sum += v;
    max = count == 0 ? v : std::max(max, v);
    log_sum += v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
    ++count;
  }
};

}  // namespace

double aggregate_member(const ComputationalGraph& cg, const CoupledChannelSet& member, const ScoreTable& st,
                        Aggregation agg, const EntryFilter& filter, int64_t* element_count) {
  // masks of one parameter grouped together so an element is counted once
  std::map<NodeId, std::vector<const Mask*>> by_param;
  for (const auto& m : member.masks) {
    if (cg.node(m.node).kind != NodeKind::kParameter) continue;
    if (filter && !filter(m.node, m.axis)) continue;
    by_param[m.node].push_back(&m);
  }
  Accumulator acc;
  for (const auto& [param, masks] : by_param) {
    const CGNode& n = cg.node(param);
    auto it = st.find(n.name);
    if (it == st.end()) throw InputError("no scores for parameter '" + n.name + "'");
    const Tensor& s = it->second;
    const Shape& shape = s.shape();
    if (masks.size() == 1) {
      const auto axis = static_cast<size_t>(masks[0]->axis);
      int64_t outer = 1, inner = 1;
      for (size_t i = 0; i < shape.size(); ++i) {
        if (i < axis) outer *= shape[i];
        if (i > axis) inner *= shape[i];
      }
      const int64_t ext = shape[axis];
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t c : masks[0]->indices)
          for (int64_t k = 0; k < inner; ++k) acc.add(s[(o * ext + c) * inner + k]);
      continue;
    }
    std::vector<std::vector<bool>> hit(shape.size());
    for (size_t a = 0; a < shape.size(); ++a) hit[a].assign(static_cast<size_t>(shape[a]), false);
    for (const Mask* m : masks)
      for (int64_t c : m->indices) hit[static_cast<size_t>(m->axis)][static_cast<size_t>(c)] = true;
    std::vector<int64_t> coord(shape.size(), 0);
    for (int64_t flat = 0; flat < s.size(); ++flat) {
      bool in = false;
      for (size_t a = 0; a < shape.size() && !in; ++a) in = hit[a][static_cast<size_t>(coord[a])];
      if (in) acc.add(s[flat]);
      for (size_t a = shape.size(); a-- > 0;) {
        if (++coord[a] < shape[a]) break;
        coord[a] = 0;
      }
    }
  }
  if (element_count) *element_count = acc.count;
  if (acc.count == 0) return agg == Aggregation::kProduct ? -std::numeric_limits<double>::infinity() : 0.0;
  switch (agg) {
    case Aggregation::kMean: return acc.sum / static_cast<double>(acc.count);
    case Aggregation::kMax: return acc.max;
    case Aggregation::kSum: return acc.sum;
    case Aggregation::kProduct: return acc.log_sum;
  }
  return 0.0;
}

namespace {

double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Group statistic in the same domain as `raw` (log domain when `logs`).
double statistic(std::vector<double> raw, Normalization norm, bool logs) {
  switch (norm) {
    case Normalization::kSum: {
      double acc = logs ? -std::numeric_limits<double>::infinity() : 0.0;
      for (double r : raw) acc = logs ? log_add(acc, r) : acc + r;
      return acc;
    }
    case Normalization::kMax:
      return *std::max_element(raw.begin(), raw.end());
    case Normalization::kMedian: {
      std::sort(raw.begin(), raw.end());
      const size_t n = raw.size();
      if (n % 2 == 1) return raw[n / 2];
      const double a = raw[n / 2 - 1], b = raw[n / 2];
      return logs ? log_add(a, b) - std::log(2.0) : 0.5 * (a + b);
    }
  }
  return 0.0;
}

}  // namespace

GroupScores aggregate(const ComputationalGraph& cg, const GroupSet& gs, const ScoreTable& st, Aggregation agg,
                      Normalization norm, const EntryFilter& filter) {
  GroupScores out;
  const bool logs = agg == Aggregation::kProduct;
  for (const auto& g : gs.groups) {
    std::vector<double> raw;
    bool any = false;
    for (const auto& m : g.members) {
      int64_t count = 0;
      raw.push_back(aggregate_member(cg, m, st, agg, filter, &count));
      any = any || count > 0;
    }
    std::vector<double> s(raw.size(), 0.0);
    out.scored.push_back(any && !raw.empty());
    if (!out.scored.back()) {
      out.scores.push_back(std::move(s));
      continue;
    }
    const double stat = statistic(raw, norm, logs);
    const bool zero = logs ? stat == -std::numeric_limits<double>::infinity() : stat <= 0.0;
    if (zero) {
      out.warnings.push_back("group " + std::to_string(g.id) + " has an all-zero " + to_string(norm) +
                             " statistic; its members score 0");
    } else {
      for (size_t j = 0; j < raw.size(); ++j) s[j] = logs ? std::exp(raw[j] - stat) : raw[j] / stat;
    }
    for (size_t j = 0; j < s.size(); ++j) out.ranked.push_back({g.id, j, s[j]});
    out.scores.push_back(std::move(s));
  }
  std::stable_sort(out.ranked.begin(), out.ranked.end(), [](const MemberScore& a, const MemberScore& b) {
    if (a.score != b.score) return a.score < b.score;
    return std::pair{a.group, a.member} < std::pair{b.group, b.member};
  });
  return out;
}

}  // namespace spa
