// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spa/onnx_model.h"
#include "spa/tensor.h"

namespace spa {

enum class Regime { kID, kOOD, kDataFree };

const char* to_string(Regime r);
Regime parse_regime(std::string_view s);

struct CalibrationSet {
  Regime regime = Regime::kID;
  Shape sample_shape;  // one sample, without the batch axis
  std::vector<Tensor> batches;
  std::optional<uint64_t> seed;  // DataFree only

  int64_t sample_count() const;
};

/// Manifest: {"format":"spa-calib-v1","shape":[N,…],"files":[…],
/// "regime":"id"|"ood", "scale":s, "offset":o}. Each file holds raw
/// little-endian f32 samples; its sample count is inferred from its size.
/// Relative file paths resolve against the manifest's directory. Loaded values
/// become x·scale + offset (identity by default).
CalibrationSet load_calibration(const std::filesystem::path& manifest);

/// Writes one raw file per batch plus the manifest. Round-trips bit-exactly.
void save_calibration(const CalibrationSet& set, const std::filesystem::path& manifest);

/// i.i.d. uniform [0, 1) samples from mt19937_64: each value is the top 24
/// bits of one draw times 2⁻²⁴, so every value is an exact f32. Samples come
/// in batches of at most 256.
CalibrationSet generate_uniform(const Shape& sample_shape, int64_t n_samples, uint64_t seed);

/// Default sample count: 2048 for inputs up to 64×64 spatially, 896 above.
int64_t default_sample_count(const Shape& sample_shape);

/// Input shape of a single-input model without its batch axis.
Shape calibration_sample_shape(const ModelIR& ir);

/// `spec` is a manifest path or "random:<n>[:seed]" (seed defaults to 0).
/// The samples must fit the model's input.
CalibrationSet resolve_calibration(std::string_view spec, const ModelIR& ir);

}  // namespace spa
