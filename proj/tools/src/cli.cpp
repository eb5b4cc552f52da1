// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "spa/cli.h"

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <sstream>

#include "json_config.h"
#include "spa/calibration.h"
#include "spa/compute_graph.h"
#include "spa/error.h"
#include "spa/grouping.h"
#include "spa/importance.h"
#include "spa/interpreter.h"
#include "spa/mask_propagation.h"
#include "spa/obspa.h"
#include "spa/onnx_model.h"
#include "spa/surgeon.h"

namespace spa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Verification failure: the only outcome with its own exit code that is not
// an exception type of the core library.
class VerifyFailure : public Error {
 public:
  using Error::Error;
};

struct Context {
  std::ostream& out;
  std::ostream& err;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw InputError("failed writing '" + path.string() + "'");
}

// JSON report to a file when a path is given, else to stdout.
void emit(Context& ctx, const json& j, const std::string& path) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty()) {
    ctx.out << text;
  } else {
    write_text(path, text);
  }
}

ModelIR load(const std::string& path) {
  if (path.empty()) throw InputError("no model path given");
  return load_model_file(path);
}

std::string default_sidecar(const std::string& model_out) {
  fs::path p(model_out);
  p.replace_extension(".sidecar.json");
  return p.string();
}

std::string fixed(double v, int digits = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
  std::string model, out, dot;
};

void analyze(Context& ctx, const AnalyzeArgs& a) {
  const ModelIR ir = load(a.model);
  const auto cg = build_graph(ir);
  const GroupSet gs = group_channels(cg);
  emit(ctx, group_report(cg, gs), a.out);
  if (!a.dot.empty()) write_text(a.dot, cg.to_dot());
  ctx.err << "analyze: " << gs.groups.size() << " groups, " << gs.member_count() << " prunable members\n";
}

// ---------------------------------------------------------------------------
// prune

struct PruneArgs {
  std::string model, criterion = "l1", agg = "mean", norm = "max", out, metrics, sidecar;
  std::optional<double> target_rf, ratio;
};

ScoreTable criterion_scores(const std::string& criterion, const ModelIR& ir) {
  if (criterion == "l1") return score_l1(ir);
  if (criterion.starts_with("file:")) return import_scores(criterion.substr(5), ir);
  throw InputError("unknown criterion '" + criterion + "' (l1|file:<path>)");
}

void prune(Context& ctx, const PruneArgs& a) {
  if (a.target_rf.has_value() == a.ratio.has_value()) throw InputError("give exactly one of --target-rf and --ratio");
  if (a.out.empty()) throw InputError("--out is required");
  const Aggregation agg = parse_aggregation(a.agg);
  const Normalization norm = parse_normalization(a.norm);
  const ModelIR ir = load(a.model);
  const auto cg = build_graph(ir);
  const GroupSet gs = group_channels(cg);
  const ScoreTable st = criterion_scores(a.criterion, ir);
  const GroupScores scores = aggregate(cg, gs, st, agg, norm);
  for (const auto& w : scores.warnings) ctx.err << "warning: " << w << "\n";

  const PruneSet ps = a.target_rf ? select_for_target(ir, cg, gs, scores, *a.target_rf)
                                  : select_by_ratio(ir, cg, gs, scores, *a.ratio);
  const ModelIR pruned = apply_prune(ir, cg, ps);
  save_model_file(pruned, a.out);
  const Sidecar sidecar = make_sidecar(ir, pruned, deletions_of(cg, ps.masks));
  const std::string sidecar_path = a.sidecar.empty() ? default_sidecar(a.out) : a.sidecar;
  write_text(sidecar_path, sidecar_json(sidecar).dump(2) + "\n");

  const ModelCost before = count_cost(ir), after = count_cost(pruned);
  json m = metrics_json(before, after);
  m["format"] = "spa-prune-metrics-v1";
  m["criterion"] = a.criterion;
  m["agg"] = to_string(agg);
  m["norm"] = to_string(norm);
  if (a.target_rf) m["target_rf"] = *a.target_rf;
  if (a.ratio) m["ratio"] = *a.ratio;
  m["groups"] = gs.groups.size();
  m["members_total"] = gs.member_count();
  m["members_pruned"] = ps.members.size();
  emit(ctx, m, a.metrics);
  ctx.err << "prune: removed " << ps.members.size() << " of " << gs.member_count() << " members, RF "
          << fixed(m["rf"].get<double>()) << ", RP " << fixed(m["rp"].get<double>()) << "\n";
}

// ---------------------------------------------------------------------------
// obspa

struct ObspaArgs {
  std::string model, calib, bn_recal = "auto", order = "masked-first", agg = "sum", norm = "max", out, report, sidecar;
  double target_rf = 1.0, lambda_rel = 1e-2;
  std::optional<uint64_t> seed;
};

// "random" alone gets the default sample count; --seed fills in a missing seed.
std::string expand_calib(const std::string& spec, const ModelIR& ir, std::optional<uint64_t> seed) {
  if (spec != "random" && !spec.starts_with("random:")) return spec;
  std::string n = std::to_string(default_sample_count(calibration_sample_shape(ir)));
  std::string s = seed ? std::to_string(*seed) : "0";
  if (spec.size() > 7) {
    const std::string rest = spec.substr(7);
    const size_t colon = rest.find(':');
    n = rest.substr(0, colon);
    if (colon != std::string::npos) {
      const std::string given = rest.substr(colon + 1);
      if (seed && given != std::to_string(*seed)) throw InputError("--seed disagrees with the seed in --calib");
      s = given;
    }
  }
  return "random:" + n + ":" + s;
}

void obspa(Context& ctx, const ObspaArgs& a) {
  if (a.out.empty()) throw InputError("--out is required");
  if (a.calib.empty()) throw InputError("--calib is required");
  if (a.bn_recal != "on" && a.bn_recal != "off" && a.bn_recal != "auto") {
    throw InputError("--bn-recal must be on, off or auto");
  }
  ObspaOptions opts;
  opts.target_rf = a.target_rf;
  opts.lambda_rel = a.lambda_rel;
  opts.order = parse_column_order(a.order);
  opts.agg = parse_aggregation(a.agg);
  opts.norm = parse_normalization(a.norm);

  const ModelIR ir = load(a.model);
  const CalibrationSet calib = resolve_calibration(expand_calib(a.calib, ir, a.seed), ir);
  opts.bn_recal = a.bn_recal == "auto" ? calib.regime != Regime::kDataFree : a.bn_recal == "on";
  const auto cg = build_graph(ir);
  const GroupSet gs = group_channels(cg);
  const ObspaResult r = run_obspa(ir, cg, gs, calib.batches, opts);
  for (const auto& w : r.warnings) ctx.err << "warning: " << w << "\n";

  save_model_file(r.model, a.out);
  const std::string sidecar_path = a.sidecar.empty() ? default_sidecar(a.out) : a.sidecar;
  write_text(sidecar_path, sidecar_json(make_sidecar(ir, r.model, r.deletions)).dump(2) + "\n");

  json rep = obspa_report(r, opts);
  rep["calibration"] = {{"regime", to_string(calib.regime)}, {"samples", calib.sample_count()}};
  if (calib.seed) rep["calibration"]["seed"] = *calib.seed;
  emit(ctx, rep, a.report);

  ctx.err << "obspa: " << r.prune_set.members.size() << " members removed, RF "
          << fixed(static_cast<double>(r.before.flops) / static_cast<double>(std::max<int64_t>(1, r.after.flops)))
          << ", BN recalibration " << (r.bn_recalibrated ? "applied" : "skipped") << "\n";
  for (const auto& l : r.layers) {
    if (l.columns_pruned == 0) continue;
    ctx.err << "  " << l.layer << ": " << l.columns_pruned << " columns, error " << std::setprecision(4)
            << l.error_without_update << " -> " << l.error_with_update << "\n";
  }
}

// ---------------------------------------------------------------------------
// verify

struct VerifyArgs {
  std::string original, pruned, sidecar, out;
  int64_t n_inputs = 16;
  double tol = 1e-4;
  uint64_t seed = 0;
};

// Shapes the sidecar claims the pruned initializers have.
void check_shapes(const ModelIR& original, const ModelIR& pruned, const Sidecar& s) {
  std::map<std::string, Shape> want;
  for (const auto& [name, t] : original.initializers) want[name] = t.shape();
  for (const auto& d : s.deletions) {
    auto it = want.find(d.initializer);
    if (it == want.end()) throw VerifyFailure("sidecar names unknown initializer '" + d.initializer + "'");
    if (d.axis < 0 || d.axis >= static_cast<int>(it->second.size())) {
      throw VerifyFailure("sidecar axis out of range for '" + d.initializer + "'");
    }
    it->second[static_cast<size_t>(d.axis)] -= static_cast<int64_t>(d.indices.size());
  }
  for (const auto& [name, t] : pruned.initializers) {
    auto it = want.find(name);
    if (it == want.end()) throw VerifyFailure("pruned model has initializer '" + name + "' absent from the original");
    if (it->second != t.shape()) {
      throw VerifyFailure("initializer '" + name + "' has shape " + shape_string(t.shape()) + ", the sidecar implies " +
                          shape_string(it->second));
    }
  }
}

// n seeded uniform samples, batched to the model's batch extent when fixed.
std::vector<Tensor> verify_inputs(const ModelIR& ir, int64_t n, uint64_t seed) {
  const ValueInfo& in = ir.graph_inputs.at(0);
  const bool symbolic = !in.symbolic.empty() && !in.symbolic[0].empty();
  const int64_t per = symbolic ? n : std::max<int64_t>(1, in.shape[0]);
  const int64_t batches = symbolic ? 1 : n;
  const Shape sample = calibration_sample_shape(ir);
  const CalibrationSet cs = generate_uniform(sample, per * batches, seed);
  std::vector<float> flat;
  for (const auto& b : cs.batches) flat.insert(flat.end(), b.values().begin(), b.values().end());
  const auto chunk = static_cast<size_t>(flat.size() / static_cast<size_t>(batches));
  Shape shape = sample;
  shape.insert(shape.begin(), per);
  std::vector<Tensor> out;
  for (int64_t i = 0; i < batches; ++i) {
    const auto off = static_cast<std::ptrdiff_t>(static_cast<size_t>(i) * chunk);
    out.emplace_back(shape, std::vector<float>(flat.begin() + off, flat.begin() + off + static_cast<std::ptrdiff_t>(chunk)));
  }
  return out;
}

void verify(Context& ctx, const VerifyArgs& a) {
  if (a.n_inputs <= 0) throw InputError("--n-inputs must be positive");
  if (!(a.tol >= 0.0)) throw InputError("--tol must be non-negative");
  const ModelIR original = load(a.original);
  const ModelIR pruned = load(a.pruned);
  std::ifstream f(a.sidecar);
  if (!f) throw InputError("cannot open sidecar '" + a.sidecar + "'");
  json sj;
  try {
    f >> sj;
  } catch (const json::exception& e) {
    throw InputError("sidecar is not valid JSON: " + std::string(e.what()));
  }
  const Sidecar s = parse_sidecar(sj);
  if (original.graph_inputs.size() != 1) throw InputError("verify needs a single-input model");

  json report = {{"format", "spa-verify-v1"}, {"n_inputs", a.n_inputs}, {"tol", a.tol}, {"seed", a.seed}};
  double worst = 0.0;
  std::string failure;
  try {
    check_shapes(original, pruned, s);
    const ModelIR twin = reference_twin(original, s);
    const std::string input = original.graph_inputs[0].name;
    for (const Tensor& x : verify_inputs(original, a.n_inputs, a.seed)) {
      const TensorMap ref = run_forward(twin, TensorMap{{input, x}});
      const TensorMap got = run_forward(pruned, TensorMap{{input, x}});
      for (const auto& [name, t] : ref) {
        auto it = got.find(name);
        if (it == got.end() || it->second.shape() != t.shape()) {
          throw VerifyFailure("output '" + name + "' is missing or has a different shape");
        }
        for (int64_t i = 0; i < t.size(); ++i) {
          const double d = std::abs(static_cast<double>(t[i]) - static_cast<double>(it->second[i]));
          if (!(d <= worst)) worst = std::isnan(d) ? std::numeric_limits<double>::infinity() : d;
        }
      }
    }
  } catch (const VerifyFailure& e) {
    failure = e.what();
  }
  const bool pass = failure.empty() && worst <= a.tol;
  report["max_abs_diff"] = failure.empty() ? json(worst) : json(nullptr);
  report["pass"] = pass;
  if (!failure.empty()) report["reason"] = failure;
  emit(ctx, report, a.out);
  if (!pass) {
    throw VerifyFailure(failure.empty() ? "max abs diff " + std::to_string(worst) + " exceeds tol " + std::to_string(a.tol)
                                        : failure);
  }
  ctx.err << "verify: pass, max abs diff " << worst << "\n";
}

// ---------------------------------------------------------------------------
// flops

struct FlopsArgs {
  std::string model, compare, out;
};

void flops(Context& ctx, const FlopsArgs& a) {
  const ModelCost c = count_cost(load(a.model));
  json j;
  if (a.compare.empty()) {
    j = {{"flops", c.flops}, {"params", c.params}};
  } else {
    j = metrics_json(c, count_cost(load(a.compare)));
  }
  j["format"] = "spa-flops-v1";
  emit(ctx, j, a.out);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const VerifyFailure*>(&e)) return kVerifyFailure;
  if (dynamic_cast<const TargetUnreachableError*>(&e)) return kUnreachable;
  if (dynamic_cast<const SolverError*>(&e) || dynamic_cast<const NumericError*>(&e)) return kSolverFailure;
  return kInputError;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err};
  CLI::App app{"Structurally prunes ONNX models by coupled-channel groups.", "spa-prune"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.set_config("--config", "", "JSON file supplying any flag; command-line flags take precedence");
  app.fallthrough();
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_version_flag("--version", "spa-prune 0.1.0");

  AnalyzeArgs aa;
  auto* an = app.add_subcommand("analyze", "Report coupled-channel groups");
  an->add_option("model", aa.model, "ONNX model")->required();
  an->add_option("--out", aa.out, "Write the group report here instead of stdout");
  an->add_option("--dot", aa.dot, "Also write the computational graph as DOT");

  PruneArgs pa;
  auto* pr = app.add_subcommand("prune", "Prune by group importance to a FLOPs target or member ratio");
  pr->add_option("model", pa.model, "ONNX model")->required();
  pr->add_option("--criterion", pa.criterion, "l1 or file:<scores.json>")->capture_default_str();
  pr->add_option("--agg", pa.agg, "mean|max|product|sum")->capture_default_str();
  pr->add_option("--norm", pa.norm, "sum|max|median")->capture_default_str();
  auto* trf = pr->add_option("--target-rf", pa.target_rf, "FLOPs reduction factor to reach");
  pr->add_option("--ratio", pa.ratio, "Fraction of members to remove")->excludes(trf);
  pr->add_option("--out", pa.out, "Pruned model path");
  pr->add_option("--metrics", pa.metrics, "Write metrics JSON here instead of stdout");
  pr->add_option("--sidecar", pa.sidecar, "Deletion record (default <out>.sidecar.json)");

  ObspaArgs oa;
  auto* ob = app.add_subcommand("obspa", "Prune with Hessian-based reconstruction from calibration data");
  ob->add_option("model", oa.model, "ONNX model")->required();
  ob->add_option("--calib", oa.calib, "Manifest path, random, random:<n> or random:<n>:<seed>");
  ob->add_option("--target-rf", oa.target_rf, "FLOPs reduction factor to reach")->capture_default_str();
  ob->add_option("--lambda-rel", oa.lambda_rel, "Dampening relative to the mean Hessian diagonal")->capture_default_str();
  ob->add_option("--bn-recal", oa.bn_recal, "on|off|auto (auto: on for manifests, off for random)")->capture_default_str();
  ob->add_option("--seed", oa.seed, "Seed for random calibration");
  ob->add_option("--order", oa.order, "masked-first|natural")->capture_default_str();
  ob->add_option("--agg", oa.agg, "mean|max|product|sum")->capture_default_str();
  ob->add_option("--norm", oa.norm, "sum|max|median")->capture_default_str();
  ob->add_option("--out", oa.out, "Pruned model path");
  ob->add_option("--report", oa.report, "Write the solver report here instead of stdout");
  ob->add_option("--sidecar", oa.sidecar, "Deletion record (default <out>.sidecar.json)");

  VerifyArgs va;
  auto* ve = app.add_subcommand("verify", "Check a pruned model against its zero-masked twin");
  ve->add_option("original", va.original, "Original ONNX model")->required();
  ve->add_option("pruned", va.pruned, "Pruned ONNX model")->required();
  ve->add_option("sidecar", va.sidecar, "Sidecar written by prune or obspa")->required();
  ve->add_option("--n-inputs", va.n_inputs, "Number of random inputs")->capture_default_str();
  ve->add_option("--tol", va.tol, "Max abs output difference")->capture_default_str();
  ve->add_option("--seed", va.seed, "Input seed")->capture_default_str();
  ve->add_option("--out", va.out, "Write the report here instead of stdout");

  FlopsArgs fa;
  auto* fl = app.add_subcommand("flops", "Count FLOPs and parameters");
  fl->add_option("model", fa.model, "ONNX model")->required();
  fl->add_option("--compare", fa.compare, "Second model; report RF and RP against it");
  fl->add_option("--out", fa.out, "Write the report here instead of stdout");

  auto* ru = app.add_subcommand("rules", "Print the channel propagation rule table (markdown)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (an->parsed()) analyze(ctx, aa);
    if (pr->parsed()) prune(ctx, pa);
    if (ob->parsed()) obspa(ctx, oa);
    if (ve->parsed()) verify(ctx, va);
    if (fl->parsed()) flops(ctx, fa);
    if (ru->parsed()) out << rule_table_markdown();
  } catch (const TargetUnreachableError& e) {
    err << "spa-prune: error: " << e.what() << "\n";
    return kUnreachable;
  } catch (const SolverError& e) {
    err << "spa-prune: error: solver failed in layer '" << e.layer() << "': " << e.what() << "\n";
    return kSolverFailure;
  } catch (const std::exception& e) {
    err << "spa-prune: error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kOk;
}

}  // namespace spa::cli
