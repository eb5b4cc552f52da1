// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spa/compute_graph.h"
#include "spa/importance.h"
#include "spa/mask_propagation.h"
#include "spa/onnx_model.h"

namespace spa {

/// Slices removed from one initializer along one axis.
struct Deletion {
  std::string initializer;
  int axis = 0;
  std::vector<int64_t> indices;

  friend bool operator==(const Deletion&, const Deletion&) = default;
};

/// Parameter entries of a mask set, ordered by (initializer, axis).
std::vector<Deletion> deletions_of(const ComputationalGraph& cg, const MaskSet& masks);

/// Structural deletion. Surviving channels keep their relative order. The
/// result is shape-inferred and checked against the extents the masks imply
/// for every value; any disagreement raises ConsistencyError.
ModelIR apply_masks(const ModelIR& ir, const ComputationalGraph& cg, const MaskSet& masks);
ModelIR apply_prune(const ModelIR& ir, const ComputationalGraph& cg, const PruneSet& ps);

/// Same-shape twin with every addressed parameter slice set to zero.
ModelIR zero_mask(const ModelIR& ir, const std::vector<Deletion>& dels);
ModelIR zero_mask(const ModelIR& ir, const ComputationalGraph& cg, const MaskSet& masks);
ModelIR zero_mask(const ModelIR& ir, const ComputationalGraph& cg, const PruneSet& ps);

/// Inverse of deletion for one tensor: places `pruned` back into `original`
/// shape, zeros where slices were removed.
Tensor expand_slices(const Tensor& pruned, const Shape& original, const std::vector<Deletion>& dels);

/// Audit record written next to a pruned model.
struct Sidecar {
  std::vector<Deletion> deletions;
  /// Initializers whose surviving values differ from the original (weight
  /// reconstruction, BN recalibration), stored in the original shape.
  std::map<std::string, Tensor> updates;
};

/// Records the deletions and any value changes between `original` and `pruned`.
Sidecar make_sidecar(const ModelIR& original, const ModelIR& pruned, std::vector<Deletion> dels);

/// {"format":"spa-prune-sidecar-v1","deletions":[…],"updates":{…}}.
nlohmann::json sidecar_json(const Sidecar& s);
Sidecar parse_sidecar(const nlohmann::json& j);

/// Original with sidecar updates applied and deleted slices zeroed: the model
/// a correct prune must agree with.
ModelIR reference_twin(const ModelIR& original, const Sidecar& s);

}  // namespace spa
