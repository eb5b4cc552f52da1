// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spa/grouping.h"
#include "spa/importance.h"
#include "spa/interpreter.h"
#include "spa/onnx_model.h"
#include "spa/surgeon.h"
#include "spa/tensor.h"

namespace spa {

/// Damped Gram matrix of one layer's inputs and its inverse.
struct HessianState {
  std::string layer;
  Matrix gram;   // X·Xᵀ, undamped
  Matrix h;      // gram + lambda·I
  Matrix h_inv;
  double lambda = 0.0;
};

/// λ = lambda_rel · mean(diag(G)). A failed inversion (or an inverse whose
/// residual ‖H⁻¹H − I‖∞ exceeds 1e-4) doubles λ, at most 8 times; with a zero
/// starting λ the first retry uses 1e-6 · mean(diag(G)).
HessianState build_hessian(const std::string& layer, Matrix gram, double lambda_rel);
HessianState build_hessian(const LayerCapture& capture, double lambda_rel);

/// θ²/[H⁻¹]_jj for every element of an out×d weight matrix.
Matrix obs_element_scores(const Matrix& theta, const HessianState& h);

/// Per-block sums of the element scores; block k covers columns
/// [k·block, (k+1)·block).
std::vector<double> score_layer_obs(const Matrix& theta, const HessianState& h, int64_t block);

/// Input columns to remove from one layer, as whole channel blocks.
struct ColumnGroupMask {
  std::vector<int64_t> channels;  // sorted
  int64_t block = 1;

  std::vector<int64_t> columns() const;
};

enum class ColumnOrder {
  kMaskedFirst,  // masked columns in ascending order, every surviving column updated
  kNatural,      // left to right, each column frozen once passed
};

const char* to_string(ColumnOrder o);
ColumnOrder parse_column_order(std::string_view s);

/// Sequential OBS removal of the masked columns. Masked columns end exactly
/// zero. `h_inv` is consumed (downdated) along the way.
void prune_and_update(Matrix& theta, Matrix h_inv, std::span<const int64_t> masked_columns,
                      ColumnOrder order = ColumnOrder::kMaskedFirst);

/// ‖(Θ − Θ̂)X‖²_F / ‖ΘX‖²_F through the Gram matrix, over the given rows
/// (all rows when empty).
double relative_error(const Matrix& theta, const Matrix& theta_hat, const Matrix& gram,
                      std::span<const int64_t> rows = {});

/// Weight of a Hessian layer as out×d, columns in the layer's input matrix
/// order, and the inverse mapping.
Matrix weight_matrix(const ModelIR& ir, const OperatorSpec& op);
void store_weight_matrix(ModelIR& ir, const OperatorSpec& op, const Matrix& theta);

/// Axis of the weight initializer indexing input features, and the number of
/// matrix columns one index on that axis spans.
int weight_input_axis(const ModelIR& ir, const OperatorSpec& op);
int weight_output_axis(const ModelIR& ir, const OperatorSpec& op);
int64_t column_block(const ModelIR& ir, const OperatorSpec& op);

struct ObspaOptions {
  double target_rf = 1.0;
  double lambda_rel = 1e-2;
  bool bn_recal = true;
  Aggregation agg = Aggregation::kSum;
  Normalization norm = Normalization::kMax;
  ColumnOrder order = ColumnOrder::kMaskedFirst;
};

struct LayerReport {
  std::string layer;
  double lambda = 0.0;
  int64_t blocks_pruned = 0;
  int64_t columns_pruned = 0;
  int64_t rows_pruned = 0;
  double error_without_update = 0.0;  // relative, on the calibration data
  double error_with_update = 0.0;
};

struct ObspaResult {
  ModelIR model;
  PruneSet prune_set;
  std::vector<Deletion> deletions;
  std::vector<LayerReport> layers;
  ModelCost before;
  ModelCost after;
  bool bn_recalibrated = false;
  std::vector<std::string> warnings;
};

/// {"format":"spa-obspa-report-v1", …}.
nlohmann::json obspa_report(const ObspaResult& r, const ObspaOptions& opts);

/// Global selection from structured layer-OBS scores, then per-layer column
/// updates in topological order, structural deletion and optional BN
/// recalibration. Every Gram comes from the unpruned model: a layer is
/// reconstructed against its original input, never the partly pruned one,
/// whose deleted channels would already read as zero.
ObspaResult run_obspa(const ModelIR& ir, const ComputationalGraph& cg, const GroupSet& gs,
                      std::span<const Tensor> batches, const ObspaOptions& opts);

}  // namespace spa
