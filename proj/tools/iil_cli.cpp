// Command-line front end: train, select, eval, gradcheck, invariance-audit, make-data.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "iil/iil.hpp"

namespace fs = std::filesystem;
using namespace iil;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool config_required) {
  auto* opt = cmd->add_option("-c,--config", o.config_path, "key = value config file");
  if (config_required) opt->required();
  cmd->add_option("--set", o.overrides, "override one config key, key=value (repeatable)");
  cmd->add_option("-o,--output-dir", o.out_dir, "parent of the run directory (default: config output_dir)");
}

TrainConfig resolve_config(const CommonOptions& o) {
  TrainConfig cfg = o.config_path.empty() ? TrainConfig{} : load_config(o.config_path);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
  cfg.validate();
  return cfg;
}

fs::path open_run_dir(const TrainConfig& cfg) {
  const fs::path dir = make_run_dir(cfg.output_dir, cfg.seed);
  std::printf("run directory: %s\n", dir.string().c_str());
  return dir;
}

int cmd_train(const CommonOptions& o) {
  const TrainConfig cfg = resolve_config(o);
  const fs::path dir = open_run_dir(cfg);
  MetricsRecord m = run_experiment(cfg, dir.string(), [&](const TwoPhaseResult& r) {
    TwoPhaseResult copy = r;
    write_run_artifacts(dir, copy, cfg);
    std::printf("seed %llu: baseline test error %.2f%%, invariant test error %.2f%%\n",
                static_cast<unsigned long long>(r.record.seed), r.record.baseline_test_error, r.record.test_error);
  });
  write_experiment_outputs(dir, m, cfg);
  std::printf("test error %.2f%% +- %.2f (baseline %.2f%% +- %.2f) over %zu run(s)\n", m.test_error.mean,
              m.test_error.std, m.baseline_test_error.mean, m.baseline_test_error.std, m.runs.size());
  return kExitOk;
}

int cmd_select(const CommonOptions& o) {
  const TrainConfig cfg = resolve_config(o);
  const fs::path dir = open_run_dir(cfg);
  const DataSplits data = load_splits(cfg, cfg.seed);
  std::mt19937_64 rng(derive_seed(cfg.seed, 10));
  Model phase1 = make_baseline(cfg, data.train.images.dim(3), data.train.num_classes, rng);
  refresh_head_stats(phase1, data.train.images);
  std::vector<EpochRecord> curve;
  train_epochs(phase1, data.train, data.val, cfg, "phase1", cfg.epochs_phase1, rng, curve,
               (dir / "diverged_phase1.ckpt").string());
  const SelectionInputs in = prepare_selection(phase1, data, cfg, cfg.seed);
  const SelectionResult sel = select_monomials(in.train_shifted, data.train.labels, in.val_shifted, data.val.labels,
                                               in.candidates, in.shift, in.config);
  const nlohmann::json cj = config_to_json(cfg);
  IILayerState state{sel.monomials, in.shift, RotationGroupSampling::uniform(cfg.num_angles), cfg.r_max};
  write_json(dir / "selection.json", {{"config", cj}, {"trace", selection_trace_to_json(sel.trace, in.candidates)}});
  write_json(dir / "monomials.json", {{"config", cj}, {"monomials", monomials_to_json(sel.monomials)}});
  write_json(dir / "ii_state.json", {{"config", cj}, {"ii_state", ii_state_to_json(state)}});
  save_model((dir / "baseline.ckpt").string(), phase1, cj);
  MetricsRecord m;
  RunRecord rec;
  rec.seed = cfg.seed;
  rec.train_samples = data.train.size();
  rec.curve = curve;
  rec.phase1_val_accuracy = model_accuracy(phase1, data.val);
  rec.phase1_test_error = test_error_percent(phase1, data.test);
  m.runs.push_back(rec);
  write_experiment_outputs(dir, m, cfg);
  std::printf("selected %zu monomial(s), best val accuracy %.4f, stop: %s\n", sel.monomials.size(),
              sel.trace.best_accuracy, sel.trace.stop_reason.c_str());
  return kExitOk;
}

int cmd_eval(const CommonOptions& o, const std::string& model_path) {
  const TrainConfig cfg = resolve_config(o);
  Model model = load_model(model_path);
  std::vector<double> errors;
  for (std::size_t i = 0; i < cfg.runs; ++i) {
    const DataSplits data = load_splits(cfg, cfg.seed + i);
    errors.push_back(test_error_percent(model, data.test));
  }
  const ErrorSummary s = summarize(errors);
  const fs::path dir = open_run_dir(cfg);
  write_json(dir / "eval.json", {{"config", config_to_json(cfg)}, {"model", model_path}, {"test_error_percent", summary_to_json(s)}});
  std::printf("test error %.2f%% +- %.2f over %zu split(s)\n", s.mean, s.std, errors.size());
  return kExitOk;
}

int cmd_gradcheck(std::size_t cases, std::uint64_t seed, const std::string& report) {
  const auto results = run_all_gradchecks(cases, seed);
  bool ok = true;
  nlohmann::json j = nlohmann::json::array();
  std::printf("%-24s %6s %12s %s\n", "suite", "cases", "max rel err", "status");
  for (const auto& r : results) {
    ok &= r.passed();
    std::printf("%-24s %6zu %12.3e %s\n", r.name.c_str(), r.cases, r.max_rel_error, r.passed() ? "ok" : "FAIL");
    j.push_back({{"suite", r.name}, {"cases", r.cases}, {"max_rel_error", r.max_rel_error}, {"tolerance", r.tolerance},
                 {"passed", r.passed()}});
  }
  if (!report.empty())
    write_json(report, {{"config", {{"cases", cases}, {"seed", seed}}}, {"suites", j}});
  return ok ? kExitOk : kExitFailure;
}

int cmd_audit(const CommonOptions& o, const std::string& model_path, std::size_t samples) {
  const TrainConfig cfg = resolve_config(o);
  const DataSplits data = load_splits(cfg, cfg.seed);
  std::vector<std::size_t> idx(std::min(samples, data.test.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const Dataset probe = take(data.test, idx);

  Backbone backbone;
  IILayerState state;
  if (!model_path.empty()) {
    Model m = load_model(model_path);
    if (m.head != HeadKind::Invariant) throw ConfigError("invariance-audit needs an invariant-head checkpoint");
    backbone = m.backbone;
    state = m.ii;
  } else {
    std::mt19937_64 rng(derive_seed(cfg.seed, 20));
    backbone = Backbone::random({probe.images.dim(3), cfg.orientations, cfg.lift_channels, cfg.gconv_channels,
                                 cfg.lift_kernel, cfg.gconv_kernel},
                                rng);
    const Tensor f = backbone_features(backbone, probe.images);
    state = IILayerState{generate_candidates(cfg.num_monomials, cfg.monomial_order, cfg.group_order, cfg.r_max,
                                             derive_seed(cfg.seed, 21)),
                         fit_shift(f, cfg.epsilon), RotationGroupSampling::uniform(cfg.num_angles), cfg.r_max};
  }
  const Tensor shifted = apply_shift(backbone_features(backbone, probe.images), state.shift);
  std::vector<double> radians;
  for (double deg : cfg.audit_angles) radians.push_back(deg * std::numbers::pi / 180.0);
  const auto ii_err = ii_invariance_error(shifted, state, radians);
  const auto mp_err = maxpool_invariance_error(shifted, radians);

  const fs::path dir = open_run_dir(cfg);
  nlohmann::json rows = nlohmann::json::array();
  std::string csv = "# config = " + config_to_json(cfg).dump() + "\nangle_deg,ii_error,maxpool_error\n";
  std::printf("%10s %14s %14s\n", "angle", "II error", "max-pool error");
  for (std::size_t i = 0; i < radians.size(); ++i) {
    rows.push_back({{"angle_deg", cfg.audit_angles[i]}, {"ii_error", ii_err[i]}, {"maxpool_error", mp_err[i]}});
    char line[128];
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", cfg.audit_angles[i], ii_err[i], mp_err[i]);
    csv += line;
    std::printf("%10.2f %14.6e %14.6e\n", cfg.audit_angles[i], ii_err[i], mp_err[i]);
  }
  write_json(dir / "audit.json", {{"config", config_to_json(cfg)}, {"model", model_path}, {"samples", idx.size()}, {"angles", rows}});
  write_text(dir / "audit.csv", csv);
  return kExitOk;
}

int cmd_make_data(const CommonOptions& o) {
  const TrainConfig cfg = resolve_config(o);
  if (cfg.source != "synthetic") throw ConfigError("make-data generates synthetic data only (source = synthetic)");
  const fs::path dir = open_run_dir(cfg);
  const DataSplits data = load_splits(cfg, cfg.seed);
  const std::pair<const char*, const Dataset*> splits[] = {{"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
  nlohmann::json files = nlohmann::json::object();
  for (const auto& [name, ds] : splits) {
    const std::string img = std::string(name) + "-images.idx3-ubyte", lab = std::string(name) + "-labels.idx1-ubyte";
    write_idx(*ds, (dir / img).string(), (dir / lab).string());
    files[name] = {{"images", img}, {"labels", lab}, {"count", ds->size()}};
  }
  write_json(dir / "manifest.json", {{"config", config_to_json(cfg)}, {"files", files}});
  write_text(dir / "config.txt", config_to_text(cfg));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Invariant integration layer: training, selection and diagnostics"};
  app.require_subcommand(1);

  CommonOptions train_o, select_o, eval_o, audit_o, data_o;
  auto* train = app.add_subcommand("train", "two-phase training over `runs` seeds");
  add_common(train, train_o, false);
  auto* select = app.add_subcommand("select", "phase-1 training and monomial selection only");
  add_common(select, select_o, false);

  auto* eval = app.add_subcommand("eval", "test error of a saved model");
  add_common(eval, eval_o, false);
  std::string eval_model;
  eval->add_option("-m,--model", eval_model, "model checkpoint")->required();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of every backward pass");
  std::size_t grad_cases = 100;
  std::uint64_t grad_seed = 7;
  std::string grad_report;
  grad->add_option("--cases", grad_cases, "random configurations per suite")->check(CLI::PositiveNumber);
  grad->add_option("--seed", grad_seed, "RNG seed");
  grad->add_option("--report", grad_report, "write a JSON report here");

  auto* audit = app.add_subcommand("invariance-audit", "II vs max-pool invariance error per audit angle");
  add_common(audit, audit_o, false);
  std::string audit_model;
  std::size_t audit_samples = 32;
  audit->add_option("-m,--model", audit_model, "invariant-head checkpoint (default: random backbone)");
  audit->add_option("--samples", audit_samples, "test images to probe")->check(CLI::PositiveNumber);

  auto* make_data = app.add_subcommand("make-data", "write the synthetic splits as IDX files");
  add_common(make_data, data_o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_o);
    if (*select) return cmd_select(select_o);
    if (*eval) return cmd_eval(eval_o, eval_model);
    if (*grad) return cmd_gradcheck(grad_cases, grad_seed, grad_report);
    if (*audit) return cmd_audit(audit_o, audit_model, audit_samples);
    if (*make_data) return cmd_make_data(data_o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
