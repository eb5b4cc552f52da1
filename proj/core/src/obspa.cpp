// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "spa/obspa.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "spa/error.h"

namespace spa {

namespace {

double mean_diagonal(const Matrix& g) {
  double s = 0.0;
  for (int64_t i = 0; i < g.rows(); ++i) s += g(i, i);
  return g.rows() > 0 ? s / static_cast<double>(g.rows()) : 0.0;
}

double inverse_residual(const Matrix& h, const Matrix& h_inv) {
  const Matrix p = matmul(h_inv, h);
  double worst = 0.0;
  for (int64_t i = 0; i < p.rows(); ++i)
    for (int64_t j = 0; j < p.cols(); ++j) worst = std::max(worst, std::abs(p(i, j) - (i == j ? 1.0 : 0.0)));
  return worst;
}

constexpr int kMaxRetries = 8;
constexpr double kResidualTol = 1e-4;

}  // namespace

HessianState build_hessian(const std::string& layer, Matrix gram, double lambda_rel) {
  if (gram.rows() == 0 || gram.rows() != gram.cols()) throw SolverError(layer, "empty or non-square Gram matrix");
  if (!(lambda_rel >= 0.0) || !std::isfinite(lambda_rel)) throw InputError("lambda_rel must be finite and >= 0");
  check_finite(gram.data(), "Gram matrix of layer '" + layer + "'");
  const double md = mean_diagonal(gram);
  const double scale = md > 0.0 ? md : 1.0;
  HessianState st{layer, std::move(gram), {}, {}, lambda_rel * std::max(md, 0.0)};
  std::string last;
  for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
    st.h = st.gram;
    for (int64_t i = 0; i < st.h.rows(); ++i) st.h(i, i) += st.lambda;
    try {
      st.h_inv = spd_inverse(st.h);
      const double r = inverse_residual(st.h, st.h_inv);
      if (r <= kResidualTol) return st;
      last = "inverse residual " + std::to_string(r);
    } catch (const NumericError& e) {
      last = e.what();
    }
    st.lambda = st.lambda > 0.0 ? 2.0 * st.lambda : 1e-6 * scale;
  }
  throw SolverError(layer, "Hessian inversion failed after " + std::to_string(kMaxRetries) + " dampening increases (" +
                               last + ")");
}

HessianState build_hessian(const LayerCapture& capture, double lambda_rel) {
  if (capture.x.rank() != 2 || capture.x.size() == 0) throw SolverError(capture.layer, "empty capture");
  Matrix g(capture.x.dim(0), capture.x.dim(0));
  gram_accumulate(g, capture.x);
  return build_hessian(capture.layer, std::move(g), lambda_rel);
}

Matrix obs_element_scores(const Matrix& theta, const HessianState& h) {
  if (theta.cols() != h.h_inv.rows()) {
    throw DimensionError("weight has " + std::to_string(theta.cols()) + " columns, Hessian is " +
                         std::to_string(h.h_inv.rows()) + " wide");
  }
  Matrix s(theta.rows(), theta.cols());
  for (int64_t j = 0; j < theta.cols(); ++j) {
    const double d = h.h_inv(j, j);
    if (!(d > 0.0)) throw SolverError(h.layer, "non-positive inverse Hessian diagonal at column " + std::to_string(j));
    for (int64_t r = 0; r < theta.rows(); ++r) s(r, j) = theta(r, j) * theta(r, j) / d;
  }
  return s;
}

std::vector<double> score_layer_obs(const Matrix& theta, const HessianState& h, int64_t block) {
  if (block < 1 || theta.cols() % block != 0) throw DimensionError("column block does not divide the weight width");
  const Matrix s = obs_element_scores(theta, h);
  std::vector<double> out(static_cast<size_t>(theta.cols() / block), 0.0);
  for (int64_t r = 0; r < s.rows(); ++r)
    for (int64_t j = 0; j < s.cols(); ++j) out[static_cast<size_t>(j / block)] += s(r, j);
  return out;
}

std::vector<int64_t> ColumnGroupMask::columns() const {
  std::vector<int64_t> cols;
  cols.reserve(channels.size() * static_cast<size_t>(block));
  for (int64_t c : channels)
    for (int64_t k = 0; k < block; ++k) cols.push_back(c * block + k);
  return cols;
}

const char* to_string(ColumnOrder o) { return o == ColumnOrder::kNatural ? "natural" : "masked-first"; }

ColumnOrder parse_column_order(std::string_view s) {
  if (s == "masked-first") return ColumnOrder::kMaskedFirst;
  if (s == "natural") return ColumnOrder::kNatural;
  throw InputError("unknown column order '" + std::string(s) + "' (masked-first|natural)");
}

void prune_and_update(Matrix& theta, Matrix h_inv, std::span<const int64_t> masked_columns, ColumnOrder order) {
  const int64_t d = theta.cols(), rows = theta.rows();
  if (h_inv.rows() != d || h_inv.cols() != d) throw DimensionError("inverse Hessian does not match the weight width");
  std::vector<bool> masked(static_cast<size_t>(d), false);
  for (int64_t q : masked_columns) {
    if (q < 0 || q >= d) throw DimensionError("masked column " + std::to_string(q) + " out of range");
    masked[static_cast<size_t>(q)] = true;
  }
  // Removes variable q from the free set: H⁻¹ ← H⁻¹ − H⁻¹[:,q]·H⁻¹[q,:]/H⁻¹_qq
  // over the index range [from, d).
  auto eliminate = [&](int64_t q, int64_t from) {
    const double dq = h_inv(q, q);
    std::vector<double> pivot(static_cast<size_t>(d - from));
    for (int64_t c = from; c < d; ++c) pivot[static_cast<size_t>(c - from)] = h_inv(q, c);
    for (int64_t r = from; r < d; ++r) {
      const double f = h_inv(r, q) / dq;
      if (f == 0.0) continue;
      for (int64_t c = from; c < d; ++c) h_inv(r, c) -= f * pivot[static_cast<size_t>(c - from)];
    }
  };
  auto remove = [&](int64_t q, int64_t from) {
    const double dq = h_inv(q, q);
    if (!(dq > 0.0) || !std::isfinite(dq)) {
      throw NumericError("inverse Hessian lost positive definiteness at column " + std::to_string(q));
    }
    for (int64_t r = 0; r < rows; ++r) {
      const double err = theta(r, q) / dq;
      if (err == 0.0) continue;
      for (int64_t c = from; c < d; ++c) theta(r, c) -= err * h_inv(q, c);
      theta(r, q) = 0.0;
    }
  };
  if (order == ColumnOrder::kMaskedFirst) {
    std::vector<int64_t> cols(masked_columns.begin(), masked_columns.end());
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    for (int64_t q : cols) {
      remove(q, 0);
      eliminate(q, 0);
    }
  } else {
    for (int64_t i = 0; i < d; ++i) {
      if (masked[static_cast<size_t>(i)]) remove(i, i);
      if (i + 1 < d) eliminate(i, i);
    }
  }
  for (int64_t q = 0; q < d; ++q)
    if (masked[static_cast<size_t>(q)])
      for (int64_t r = 0; r < rows; ++r) theta(r, q) = 0.0;
  check_finite(theta.data(), "updated weight");
}

double relative_error(const Matrix& theta, const Matrix& theta_hat, const Matrix& gram, std::span<const int64_t> rows) {
  const int64_t d = theta.cols();
  if (theta_hat.rows() != theta.rows() || theta_hat.cols() != d || gram.rows() != d) {
    throw DimensionError("relative_error operands disagree in shape");
  }
  std::vector<int64_t> all;
  if (rows.empty()) {
    for (int64_t r = 0; r < theta.rows(); ++r) all.push_back(r);
    rows = all;
  }
  auto quad = [&](const std::vector<double>& v) {
    double s = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      if (v[static_cast<size_t>(i)] == 0.0) continue;
      double gi = 0.0;
      for (int64_t j = 0; j < d; ++j) gi += gram(i, j) * v[static_cast<size_t>(j)];
      s += v[static_cast<size_t>(i)] * gi;
    }
    return s;
  };
  double num = 0.0, den = 0.0;
  std::vector<double> delta(static_cast<size_t>(d)), base(static_cast<size_t>(d));
  for (int64_t r : rows) {
    for (int64_t j = 0; j < d; ++j) {
      base[static_cast<size_t>(j)] = theta(r, j);
      delta[static_cast<size_t>(j)] = theta(r, j) - theta_hat(r, j);
    }
    num += quad(delta);
    den += quad(base);
  }
  if (den <= 0.0) return num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return std::max(num, 0.0) / den;
}

// ---------------------------------------------------------------------------

namespace {

bool transposed_layout(const ModelIR& /*ir*/, const OperatorSpec& op) {
  if (op.op_type == "Conv") return false;
  if (op.op_type == "Gemm") return op.int_attr("transB", 0) == 0;
  if (op.op_type == "MatMul") return true;
  throw UnsupportedOperatorError(op.op_type, "no weight matrix for node '" + op.name + "'");
}

}  // namespace

int weight_input_axis(const ModelIR& ir, const OperatorSpec& op) { return transposed_layout(ir, op) ? 0 : 1; }

int weight_output_axis(const ModelIR& ir, const OperatorSpec& op) { return transposed_layout(ir, op) ? 1 : 0; }

int64_t column_block(const ModelIR& ir, const OperatorSpec& op) {
  if (op.op_type != "Conv") return 1;
  const Shape& w = ir.shape_of(op.inputs[1]);
  return w[2] * w[3];
}

Matrix weight_matrix(const ModelIR& ir, const OperatorSpec& op) {
  const Tensor& w = ir.initializers.at(op.inputs[1]);
  const int64_t rows = w.dim(0), cols = w.size() / rows;
  if (transposed_layout(ir, op)) return Matrix::from_tensor(transpose(w));
  return Matrix::from_tensor(w.reshaped({rows, cols}));
}

void store_weight_matrix(ModelIR& ir, const OperatorSpec& op, const Matrix& theta) {
  Tensor& w = ir.initializers.at(op.inputs[1]);
  Tensor t = theta.to_tensor();
  if (transposed_layout(ir, op)) t = transpose(t);
  if (t.size() != w.size()) throw DimensionError("weight matrix does not fit '" + op.inputs[1] + "'");
  w = t.reshaped(w.shape());
}

// ---------------------------------------------------------------------------

namespace {

std::map<size_t, Matrix> collect_grams(const ModelIR& ir, std::span<const Tensor> batches) {
  std::map<size_t, Matrix> grams;
  stream_layer_inputs(ir, batches, [&](size_t node, const Tensor& x) {
    auto [it, fresh] = grams.try_emplace(node);
    if (fresh) it->second = Matrix(x.dim(0), x.dim(0));
    gram_accumulate(it->second, x);
  });
  return grams;
}

const Deletion* find_deletion(const std::vector<Deletion>& dels, const std::string& name, int axis) {
  for (const auto& d : dels)
    if (d.initializer == name && d.axis == axis) return &d;
  return nullptr;
}

Tensor scores_in_layout(const ModelIR& ir, const OperatorSpec& op, const Matrix& s) {
  Tensor t = s.to_tensor();
  if (transposed_layout(ir, op)) t = transpose(t);
  return t.reshaped(ir.shape_of(op.inputs[1]));
}

}  // namespace

ObspaResult run_obspa(const ModelIR& ir, const ComputationalGraph& cg, const GroupSet& gs,
                      std::span<const Tensor> batches, const ObspaOptions& opts) {
  if (batches.empty()) throw InputError("weight reconstruction needs calibration data");
  ObspaResult res;
  res.before = count_cost(ir);

  std::vector<size_t> layers;
  std::map<std::string, size_t> weight_owner;
  for (size_t i = 0; i < ir.nodes.size(); ++i) {
    if (!is_hessian_layer(ir, ir.nodes[i])) continue;
    if (!weight_owner.emplace(ir.nodes[i].inputs[1], i).second) {
      throw ModelError("initializer '" + ir.nodes[i].inputs[1] + "' feeds several layers; reconstruction needs one owner");
    }
    layers.push_back(i);
  }

  std::map<size_t, HessianState> hess;
  {
    auto grams = collect_grams(ir, batches);
    for (size_t i : layers) {
      auto it = grams.find(i);
      if (it == grams.end()) throw SolverError(ir.nodes[i].name, "layer received no calibration input");
      hess.emplace(i, build_hessian(ir.nodes[i].name, std::move(it->second), opts.lambda_rel));
    }
  }

  ScoreTable st;
  std::map<NodeId, int> scored_axis;
  for (size_t i : layers) {
    const OperatorSpec& op = ir.nodes[i];
    const Matrix s = obs_element_scores(weight_matrix(ir, op), hess.at(i));
    st.emplace(op.inputs[1], scores_in_layout(ir, op, s));
    scored_axis.emplace(cg.value_id(op.inputs[1]), weight_input_axis(ir, op));
  }
  const EntryFilter filter = [&scored_axis](NodeId param, int axis) {
    auto it = scored_axis.find(param);
    return it != scored_axis.end() && it->second == axis;
  };
  const GroupScores scores = aggregate(cg, gs, st, opts.agg, opts.norm, filter);
  res.warnings = scores.warnings;

  res.prune_set = select_for_target(ir, cg, gs, scores, opts.target_rf);
  if (res.prune_set.empty()) {
    res.model = ir;
    res.after = res.before;
    return res;
  }
  res.deletions = deletions_of(cg, res.prune_set.masks);

  ModelIR working = ir;
  for (size_t i : layers) {
    const OperatorSpec& op = ir.nodes[i];
    const std::string& wname = op.inputs[1];
    const Deletion* cols_del = find_deletion(res.deletions, wname, weight_input_axis(ir, op));
    const Deletion* rows_del = find_deletion(res.deletions, wname, weight_output_axis(ir, op));
    if (!cols_del && !rows_del) continue;

    LayerReport rep;
    rep.layer = op.name;
    try {
      const HessianState& h = hess.at(i);
      rep.lambda = h.lambda;
      const Matrix theta = weight_matrix(working, op);
      const int64_t block = column_block(ir, op);
      ColumnGroupMask cgm;
      cgm.block = block;
      if (cols_del) cgm.channels = cols_del->indices;
      const auto cols = cgm.columns();
      std::vector<int64_t> kept_rows;
      for (int64_t r = 0; r < theta.rows(); ++r)
        if (!rows_del || !std::binary_search(rows_del->indices.begin(), rows_del->indices.end(), r)) kept_rows.push_back(r);

      Matrix zeroed = theta;
      for (int64_t c : cols)
        for (int64_t r = 0; r < zeroed.rows(); ++r) zeroed(r, c) = 0.0;
      Matrix updated = theta;
      if (!cols.empty()) prune_and_update(updated, h.h_inv, cols, opts.order);

      rep.blocks_pruned = static_cast<int64_t>(cgm.channels.size());
      rep.columns_pruned = static_cast<int64_t>(cols.size());
      rep.rows_pruned = rows_del ? static_cast<int64_t>(rows_del->indices.size()) : 0;
      rep.error_without_update = relative_error(theta, zeroed, h.gram, kept_rows);
      rep.error_with_update = relative_error(theta, updated, h.gram, kept_rows);
      store_weight_matrix(working, op, updated);
    } catch (const SolverError&) {
      throw;
    } catch (const NumericError& e) {
      throw SolverError(op.name, e.what());
    }
    res.layers.push_back(std::move(rep));
  }

  res.model = apply_masks(working, cg, res.prune_set.masks);
  if (opts.bn_recal) {
    bool has_bn = false;
    for (const auto& op : res.model.nodes) has_bn = has_bn || op.op_type == "BatchNormalization";
    if (has_bn) {
      // batches keep their original input shape; inputs are never pruned
      res.model = recalibrate_bn(res.model, batches);
      res.bn_recalibrated = true;
    }
  }
  res.after = count_cost(res.model);
  return res;
}

nlohmann::json obspa_report(const ObspaResult& r, const ObspaOptions& opts) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.layers) {
    layers.push_back({{"layer", l.layer},
                      {"lambda", l.lambda},
                      {"blocks_pruned", l.blocks_pruned},
                      {"columns_pruned", l.columns_pruned},
                      {"rows_pruned", l.rows_pruned},
                      {"error_without_update", l.error_without_update},
                      {"error_with_update", l.error_with_update}});
  }
  nlohmann::json j = {{"format", "spa-obspa-report-v1"},
                      {"target_rf", opts.target_rf},
                      {"lambda_rel", opts.lambda_rel},
                      {"aggregation", to_string(opts.agg)},
                      {"normalization", to_string(opts.norm)},
                      {"column_order", to_string(opts.order)},
                      {"bn_recalibration", opts.bn_recal},
                      {"bn_recalibrated", r.bn_recalibrated},
                      {"members_pruned", r.prune_set.members.size()},
                      {"layers", std::move(layers)},
                      {"metrics", metrics_json(r.before, r.after)}};
  if (!r.warnings.empty()) j["warnings"] = r.warnings;
  return j;
}

}  // namespace spa
