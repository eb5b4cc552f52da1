// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "spa/calibration.h"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "spa/error.h"

namespace spa {

static_assert(std::endian::native == std::endian::little, "raw calibration files are little-endian f32");

namespace {

constexpr int64_t kBatch = 256;

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

uint64_t parse_u64(std::string_view s, std::string_view what) {
  uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw InputError("invalid " + std::string(what) + " '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

const char* to_string(Regime r) {
  switch (r) {
    case Regime::kID: return "id";
    case Regime::kOOD: return "ood";
    case Regime::kDataFree: return "datafree";
  }
  return "?";
}

Regime parse_regime(std::string_view s) {
  if (s == "id") return Regime::kID;
  if (s == "ood") return Regime::kOOD;
  if (s == "datafree") return Regime::kDataFree;
  throw InputError("unknown calibration regime '" + std::string(s) + "' (id|ood|datafree)");
}

int64_t CalibrationSet::sample_count() const {
  int64_t n = 0;
  for (const auto& b : batches) n += b.dim(0);
  return n;
}

CalibrationSet load_calibration(const std::filesystem::path& manifest) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("calibration manifest '" + manifest.string() + "' is not valid JSON: " + e.what());
  }
  CalibrationSet set;
  try {
    if (j.value("format", "") != "spa-calib-v1") throw InputError("manifest must declare \"format\": \"spa-calib-v1\"");
    const Shape shape = j.at("shape").get<Shape>();
    if (shape.size() < 2) throw InputError("manifest shape needs a batch axis and at least one sample axis");
    set.sample_shape.assign(shape.begin() + 1, shape.end());
    for (int64_t d : set.sample_shape)
      if (d <= 0) throw InputError("manifest shape " + shape_string(shape) + " has a non-positive extent");
    set.regime = parse_regime(j.value("regime", "id"));
    if (set.regime == Regime::kDataFree) throw InputError("a manifest cannot declare the datafree regime");
    const double scale = j.value("scale", 1.0), offset = j.value("offset", 0.0);
    const auto files = j.at("files").get<std::vector<std::string>>();
    if (files.empty()) throw InputError("calibration manifest lists no files");
    const int64_t per_sample = element_count(set.sample_shape);
    const size_t sample_bytes = static_cast<size_t>(per_sample) * sizeof(float);
    for (const auto& f : files) {
      std::filesystem::path p(f);
      if (p.is_relative()) p = manifest.parent_path() / p;
      const std::string bytes = read_file(p);
      if (bytes.empty() || bytes.size() % sample_bytes != 0) {
        throw InputError("'" + p.string() + "' holds " + std::to_string(bytes.size()) +
                         " bytes, not a whole number of samples of shape " + shape_string(set.sample_shape));
      }
      Shape bshape = set.sample_shape;
      bshape.insert(bshape.begin(), static_cast<int64_t>(bytes.size() / sample_bytes));
      std::vector<float> data(bytes.size() / sizeof(float));
      std::memcpy(data.data(), bytes.data(), bytes.size());
      if (scale != 1.0 || offset != 0.0)
        for (auto& v : data) v = static_cast<float>(v * scale + offset);
      check_finite(data, "calibration file '" + p.string() + "'");
      set.batches.emplace_back(std::move(bshape), std::move(data));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed calibration manifest: " + std::string(e.what()));
  }
  return set;
}

void save_calibration(const CalibrationSet& set, const std::filesystem::path& manifest) {
  if (set.batches.empty()) throw InputError("nothing to save: calibration set is empty");
  nlohmann::json files = nlohmann::json::array();
  const std::string stem = manifest.stem().string();
  for (size_t i = 0; i < set.batches.size(); ++i) {
    const Tensor& b = set.batches[i];
    const std::string name = stem + "_" + std::to_string(i) + ".f32";
    std::ofstream out(manifest.parent_path() / name, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.values().data()), static_cast<std::streamsize>(b.size() * sizeof(float)));
    if (!out) throw InputError("cannot write '" + name + "'");
    files.push_back(name);
  }
  Shape shape = set.sample_shape;
  shape.insert(shape.begin(), set.batches[0].dim(0));
  nlohmann::json j = {{"format", "spa-calib-v1"}, {"shape", shape}, {"files", files}};
  if (set.regime != Regime::kDataFree) j["regime"] = to_string(set.regime);
  std::ofstream out(manifest);
  out << j.dump(2) << '\n';
  if (!out) throw InputError("cannot write '" + manifest.string() + "'");
}

CalibrationSet generate_uniform(const Shape& sample_shape, int64_t n_samples, uint64_t seed) {
  if (n_samples < 1) throw InputError("calibration needs at least one sample");
  CalibrationSet set;
  set.regime = Regime::kDataFree;
  set.sample_shape = sample_shape;
  set.seed = seed;
  std::mt19937_64 gen(seed);
  const int64_t per_sample = element_count(sample_shape);
  for (int64_t done = 0; done < n_samples; done += kBatch) {
    const int64_t n = std::min(kBatch, n_samples - done);
    Shape shape = sample_shape;
    shape.insert(shape.begin(), n);
    std::vector<float> data(static_cast<size_t>(n * per_sample));
    for (auto& v : data) v = static_cast<float>(gen() >> 40) * 0x1p-24f;
    set.batches.emplace_back(std::move(shape), std::move(data));
  }
  return set;
}

int64_t default_sample_count(const Shape& sample_shape) {
  int64_t spatial = 1;
  for (size_t i = 1; i < sample_shape.size(); ++i) spatial *= sample_shape[i];
  return spatial <= 64 * 64 ? 2048 : 896;
}

Shape calibration_sample_shape(const ModelIR& ir) {
  if (ir.graph_inputs.size() != 1) throw InputError("calibration needs a model with exactly one graph input");
  const ValueInfo& in = ir.graph_inputs[0];
  if (in.shape.empty()) throw InputError("model input '" + in.name + "' is a scalar");
  return Shape(in.shape.begin() + 1, in.shape.end());
}

CalibrationSet resolve_calibration(std::string_view spec, const ModelIR& ir) {
  const Shape want = calibration_sample_shape(ir);
  if (spec.empty()) throw InputError("empty calibration source");
  if (spec.starts_with("random:")) {
    std::string_view rest = spec.substr(7);
    const size_t colon = rest.find(':');
    const uint64_t n = parse_u64(rest.substr(0, colon), "sample count");
    const uint64_t seed = colon == std::string_view::npos ? 0 : parse_u64(rest.substr(colon + 1), "seed");
    return generate_uniform(want, static_cast<int64_t>(n), seed);
  }
  CalibrationSet set = load_calibration(std::filesystem::path(std::string(spec)));
  if (set.sample_shape != want) {
    throw InputError("calibration samples have shape " + shape_string(set.sample_shape) + ", the model expects " +
                     shape_string(want));
  }
  return set;
}

}  // namespace spa
