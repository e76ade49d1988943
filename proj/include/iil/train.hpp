#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "iil/checkpoint.hpp"
#include "iil/config.hpp"
#include "iil/data.hpp"
#include "iil/error.hpp"
#include "iil/ii_layer.hpp"
#include "iil/network.hpp"
#include "iil/selection.hpp"
#include "json.hpp"

namespace iil {

/// splitmix64 of (seed, stream): independent RNG streams from one run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct DataSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Builds disjoint train/val/test splits for `seed`. Synthetic splits come
/// from independent generator streams; IDX validation is the tail of the
/// training file. subset_fraction then thins the training split.
inline DataSplits load_splits(const TrainConfig& cfg, std::uint64_t seed) {
  DataSplits s;
  if (cfg.source == "synthetic") {
    const SyntheticKind kind = cfg.synthetic_kind == "planted" ? SyntheticKind::Planted : SyntheticKind::Glyphs;
    s.train = make_synthetic({kind, cfg.train_size, cfg.image_size, cfg.noise, derive_seed(seed, 1)});
    s.val = make_synthetic({kind, cfg.val_size, cfg.image_size, cfg.noise, derive_seed(seed, 2)});
    s.test = make_synthetic({kind, cfg.test_size, cfg.image_size, cfg.noise, derive_seed(seed, 3)});
  } else {
    const Dataset full = load_idx(cfg.train_images, cfg.train_labels);
    if (full.size() <= cfg.val_size) throw ConfigError("idx training file smaller than val_size + 1");
    const std::size_t n_train = std::min(cfg.train_size, full.size() - cfg.val_size);
    std::vector<std::size_t> tr(n_train), va(cfg.val_size);
    std::iota(tr.begin(), tr.end(), 0);
    std::iota(va.begin(), va.end(), full.size() - cfg.val_size);
    s.train = take(full, tr);
    s.val = take(full, va);
    const Dataset test = load_idx(cfg.test_images, cfg.test_labels);
    std::vector<std::size_t> te(std::min(cfg.test_size, test.size()));
    std::iota(te.begin(), te.end(), 0);
    s.test = take(test, te);
  }
  if (cfg.subset_fraction < 1.0) s.train = stratified_subset(s.train, cfg.subset_fraction, derive_seed(seed, 4));
  return s;
}

struct EpochRecord {
  std::string phase;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

/// Everything one seeded two-phase run reports. Errors are in percent.
struct RunRecord {
  std::uint64_t seed = 0;
  std::size_t train_samples = 0;
  std::vector<EpochRecord> curve;
  double phase1_val_accuracy = 0.0;
  double phase1_test_error = 0.0;
  double baseline_test_error = 0.0;  // pooled network, see TrainConfig::baseline_matched_epochs
  double test_error = 0.0;           // phase-2 invariant network
  double final_val_accuracy = 0.0;
  std::vector<double> initial_exponents;
  std::vector<double> final_exponents;
  nlohmann::json selection;
};

struct ErrorSummary {
  std::vector<double> per_run;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single run
};

inline ErrorSummary summarize(std::vector<double> values) {
  ErrorSummary s{std::move(values), 0.0, 0.0};
  if (s.per_run.empty()) return s;
  const double n = static_cast<double>(s.per_run.size());
  s.mean = std::accumulate(s.per_run.begin(), s.per_run.end(), 0.0) / n;
  if (s.per_run.size() > 1) {
    double ss = 0.0;
    for (double v : s.per_run) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

struct MetricsRecord {
  std::vector<RunRecord> runs;
  ErrorSummary test_error;
  ErrorSummary baseline_test_error;
};

// ---------------------------------------------------------------------------
// Evaluation

inline std::vector<int> predict_model(Model& model, const Tensor& images, std::size_t batch = 64) {
  std::vector<int> out;
  const std::size_t nb = images.dim(0), per = images.size() / std::max<std::size_t>(nb, 1);
  for (std::size_t start = 0; start < nb; start += batch) {
    const std::size_t len = std::min(batch, nb - start);
    Shape shape = images.shape();
    shape[0] = len;
    const Tensor chunk(shape, std::vector<double>(images.raw() + start * per, images.raw() + (start + len) * per));
    const Tensor logits = model_forward(model, chunk);
    const std::size_t nc = logits.dim(1);
    for (std::size_t b = 0; b < len; ++b) {
      const double* z = logits.raw() + b * nc;
      out.push_back(static_cast<int>(std::max_element(z, z + nc) - z));
    }
  }
  return out;
}

inline double model_accuracy(Model& model, const Dataset& ds) {
  return accuracy(predict_model(model, ds.images), ds.labels);
}

/// Test error in percent: 100 * (1 - accuracy).
inline double test_error_percent(Model& model, const Dataset& ds) { return 100.0 * (1.0 - model_accuracy(model, ds)); }

// ---------------------------------------------------------------------------
// Training

inline Model make_baseline(const TrainConfig& cfg, std::size_t in_channels, int num_classes, std::mt19937_64& rng) {
  BackboneConfig bc{in_channels, cfg.orientations, cfg.lift_channels, cfg.gconv_channels, cfg.lift_kernel,
                    cfg.gconv_kernel};
  Model m;
  m.backbone = Backbone::random(bc, rng);
  m.head = HeadKind::Pooled;
  m.num_classes = num_classes;
  m.dense = DenseLayer::random(m.backbone.out_channels(), static_cast<std::size_t>(num_classes), rng);
  return m;
}

/// Phase-2 network: the phase-1 backbone, shift + II layer with the selected
/// monomials, and a fresh normalized dense head.
inline Model make_invariant(const Model& baseline, const std::vector<Monomial>& monomials, const ShiftStats& shift,
                            const TrainConfig& cfg, const Tensor& train_images, std::mt19937_64& rng) {
  Model m;
  m.backbone = baseline.backbone;
  m.head = HeadKind::Invariant;
  m.num_classes = baseline.num_classes;
  m.ii = IILayerState{monomials, shift, RotationGroupSampling::uniform(cfg.num_angles), cfg.r_max};
  m.ii.validate();
  m.load_exponents_from_monomials();

  refresh_head_stats(m, train_images);
  const std::size_t d = m.head_features();
  m.dense = DenseLayer::random(d, static_cast<std::size_t>(m.num_classes), rng);
  return m;
}

/// Fits the dense head alone on frozen, normalized head features by full-batch
/// gradient descent on the cross-entropy (convex), step 1 / L with L the
/// curvature bound 0.5 * lambda_max(X^T X / n) of the augmented features.
inline void warm_start_head(Model& model, const Dataset& train, std::size_t steps) {
  if (steps == 0) return;
  Tensor x;
  {
    const std::size_t nb = train.size(), per = train.images.size() / std::max<std::size_t>(nb, 1);
    for (std::size_t start = 0; start < nb; start += 64) {
      const std::size_t len = std::min<std::size_t>(64, nb - start);
      Shape shape = train.images.shape();
      shape[0] = len;
      const Tensor chunk(shape, std::vector<double>(train.images.raw() + start * per, train.images.raw() + (start + len) * per));
      ForwardCache c;
      model_forward(model, chunk, &c);
      if (x.empty()) x = Tensor({nb, c.head_in.dim(1)});
      std::copy_n(c.head_in.raw(), c.head_in.size(), x.raw() + start * c.head_in.dim(1));
    }
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  Eigen::MatrixXd xa(n, d + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) xa(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x[i * d + j];
    xa(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = 1.0;
  }
  const Eigen::MatrixXd gram = xa.transpose() * xa / static_cast<double>(n);
  const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const double step = 1.0 / (0.5 * lmax);
  for (std::size_t it = 0; it < steps; ++it) {
    const SoftmaxXentResult loss = softmax_xent(dense_forward(x, model.dense), train.labels);
    const LayerGradients g = dense_backward(x, model.dense, loss.grad_logits);
    for (std::size_t i = 0; i < g.params[0].size(); ++i) model.dense.weights[i] -= step * g.params[0][i];
    for (std::size_t i = 0; i < g.params[1].size(); ++i) model.dense.bias[i] -= step * g.params[1][i];
  }
}

inline bool all_finite(Model& model) {
  for (const Tensor* p : model.parameters())
    for (double v : p->data())
      if (!std::isfinite(v)) return false;
  return true;
}

/// Mini-batch SGD with momentum for `epochs` epochs. On a non-finite loss or
/// parameter the last epoch-start state is written to `dump_path` (when
/// non-empty) and DivergenceError is thrown.
inline void train_epochs(Model& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                         const std::string& phase, std::size_t epochs, std::mt19937_64& rng,
                         std::vector<EpochRecord>& curve, const std::string& dump_path = {}) {
  SgdMomentum opt(cfg.lr, cfg.momentum);
  if (model.head == HeadKind::Invariant) {
    std::vector<double> scales(model.parameters().size(), 1.0);
    scales[2 + 2 * model.backbone.gconvs.size()] = cfg.exponent_lr_scale;
    opt.set_scales(std::move(scales));
  }
  const std::size_t n = train.size(), per = train.images.size() / std::max<std::size_t>(n, 1);
  std::vector<std::size_t> order(n);
  const bool augment = cfg.augmentation == "random_rotation";
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const Model last_good = model;
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      Shape shape = train.images.shape();
      shape[0] = len;
      Tensor batch(shape);
      std::vector<int> labels(len);
      for (std::size_t j = 0; j < len; ++j) {
        std::copy_n(train.images.raw() + order[start + j] * per, per, batch.raw() + j * per);
        labels[j] = train.labels[order[start + j]];
      }
      if (augment) batch = random_rotation(batch, rng);
      ForwardCache cache;
      const Tensor logits = model_forward(model, batch, &cache, Mode::Train);
      const SoftmaxXentResult loss = softmax_xent(logits, labels);
      if (!std::isfinite(loss.loss)) {
        Model dump = last_good;
        if (!dump_path.empty()) save_model(dump_path, dump, config_to_json(cfg));
        throw DivergenceError(phase + " epoch " + std::to_string(epoch + 1) + ": non-finite loss" +
                              (dump_path.empty() ? std::string() : "; last good state in " + dump_path));
      }
      loss_sum += loss.loss * static_cast<double>(len);
      const std::size_t nc = logits.dim(1);
      for (std::size_t b = 0; b < len; ++b) {
        const double* z = logits.raw() + b * nc;
        correct += static_cast<std::size_t>(std::max_element(z, z + nc) - z) == static_cast<std::size_t>(labels[b]);
      }
      const std::vector<Tensor> grads = model_backward(model, cache, loss.grad_logits);
      opt.step(model.parameters(), grads);
      if (!all_finite(model)) {
        Model dump = last_good;
        if (!dump_path.empty()) save_model(dump_path, dump, config_to_json(cfg));
        throw DivergenceError(phase + " epoch " + std::to_string(epoch + 1) + ": non-finite parameters" +
                              (dump_path.empty() ? std::string() : "; last good state in " + dump_path));
      }
    }
    model.sync_exponents();
    refresh_head_stats(model, train.images);
    curve.push_back({phase, epoch + 1, loss_sum / static_cast<double>(n),
                     static_cast<double>(correct) / static_cast<double>(n), model_accuracy(model, val)});
  }
}

struct SelectionInputs {
  Tensor train_shifted;
  Tensor val_shifted;
  ShiftStats shift;
  std::vector<Monomial> candidates;
  SelectionConfig config;
};

/// Frozen phase-1 features, shift fitted on the training split, and the
/// candidate pool for `seed`.
inline SelectionInputs prepare_selection(const Model& baseline, const DataSplits& data, const TrainConfig& cfg,
                                         std::uint64_t seed) {
  SelectionInputs in;
  const Tensor train_feats = backbone_features(baseline.backbone, data.train.images);
  in.shift = fit_shift(train_feats, cfg.epsilon);
  in.train_shifted = apply_shift(train_feats, in.shift);
  in.val_shifted = apply_shift(backbone_features(baseline.backbone, data.val.images), in.shift);
  in.candidates = generate_candidates(cfg.pool_size, cfg.monomial_order, cfg.group_order, cfg.r_max,
                                      derive_seed(seed, 5));
  in.config = SelectionConfig{cfg.num_monomials, cfg.patience, cfg.ridge_lambda, cfg.num_angles, cfg.r_max,
                              data.train.num_classes};
  return in;
}

struct TwoPhaseResult {
  Model baseline;  // pooled network reported as the baseline
  Model model;     // phase-2 invariant network
  SelectionResult selection;
  std::vector<Monomial> candidates;
  RunRecord record;
};

/// Phase 1 trains the pooled network; its frozen features drive monomial
/// selection; phase 2 retrains backbone, exponents and a fresh head together.
inline TwoPhaseResult train_two_phase(const DataSplits& data, const TrainConfig& cfg, std::uint64_t seed,
                                      const std::string& dump_dir = {}) {
  TwoPhaseResult r;
  r.record.seed = seed;
  r.record.train_samples = data.train.size();
  std::mt19937_64 rng(derive_seed(seed, 10));
  const std::size_t in_ch = data.train.images.dim(3);
  auto dump = [&](const char* name) { return dump_dir.empty() ? std::string() : dump_dir + "/" + name; };

  Model phase1 = make_baseline(cfg, in_ch, data.train.num_classes, rng);
  refresh_head_stats(phase1, data.train.images);
  train_epochs(phase1, data.train, data.val, cfg, "phase1", cfg.epochs_phase1, rng, r.record.curve,
               dump("diverged_phase1.ckpt"));
  r.record.phase1_val_accuracy = model_accuracy(phase1, data.val);
  r.record.phase1_test_error = test_error_percent(phase1, data.test);

  const SelectionInputs sel = prepare_selection(phase1, data, cfg, seed);
  r.candidates = sel.candidates;
  r.selection = select_monomials(sel.train_shifted, data.train.labels, sel.val_shifted, data.val.labels,
                                 sel.candidates, sel.shift, sel.config);
  r.record.selection = selection_trace_to_json(r.selection.trace, r.candidates);

  r.model = make_invariant(phase1, r.selection.monomials, sel.shift, cfg, data.train.images, rng);
  warm_start_head(r.model, data.train, cfg.head_warmup_steps);
  r.record.initial_exponents = r.model.exponents.values();
  train_epochs(r.model, data.train, data.val, cfg, "phase2", cfg.epochs_phase2, rng, r.record.curve,
               dump("diverged_phase2.ckpt"));
  r.record.final_exponents = r.model.exponents.values();
  r.record.final_val_accuracy = model_accuracy(r.model, data.val);
  r.record.test_error = test_error_percent(r.model, data.test);

  // The baseline either stops at phase 1 or keeps training for the phase-2
  // epochs too, so both networks see the same number of updates.
  r.baseline = phase1;
  if (cfg.baseline_matched_epochs && cfg.epochs_phase2 > 0) {
    std::mt19937_64 brng(derive_seed(seed, 11));
    train_epochs(r.baseline, data.train, data.val, cfg, "baseline", cfg.epochs_phase2, brng, r.record.curve,
                 dump("diverged_baseline.ckpt"));
  }
  r.record.baseline_test_error = test_error_percent(r.baseline, data.test);
  return r;
}

/// R seeded two-phase runs (seeds cfg.seed, cfg.seed + 1, ...).
inline MetricsRecord run_experiment(const TrainConfig& cfg, const std::string& dump_dir = {},
                                    const std::function<void(const TwoPhaseResult&)>& on_run = {}) {
  MetricsRecord m;
  std::vector<double> errs, base;
  for (std::size_t i = 0; i < cfg.runs; ++i) {
    const std::uint64_t seed = cfg.seed + i;
    const DataSplits data = load_splits(cfg, seed);
    TwoPhaseResult r = train_two_phase(data, cfg, seed, dump_dir);
    if (on_run) on_run(r);
    errs.push_back(r.record.test_error);
    base.push_back(r.record.baseline_test_error);
    m.runs.push_back(std::move(r.record));
  }
  m.test_error = summarize(errs);
  m.baseline_test_error = summarize(base);
  return m;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json summary_to_json(const ErrorSummary& s) {
  return {{"per_run", s.per_run}, {"mean", s.mean}, {"std", s.std}};
}

inline nlohmann::json run_to_json(const RunRecord& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& e : r.curve)
    curve.push_back({{"phase", e.phase}, {"epoch", e.epoch}, {"train_loss", e.train_loss},
                     {"train_accuracy", e.train_accuracy}, {"val_accuracy", e.val_accuracy}});
  return {{"seed", r.seed},
          {"train_samples", r.train_samples},
          {"phase1_val_accuracy", r.phase1_val_accuracy},
          {"phase1_test_error", r.phase1_test_error},
          {"baseline_test_error", r.baseline_test_error},
          {"test_error", r.test_error},
          {"final_val_accuracy", r.final_val_accuracy},
          {"initial_exponents", r.initial_exponents},
          {"final_exponents", r.final_exponents},
          {"curve", curve},
          {"selection", r.selection}};
}

/// Metrics JSON; always carries the config that produced it.
inline nlohmann::json metrics_to_json(const MetricsRecord& m, const TrainConfig& cfg) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : m.runs) runs.push_back(run_to_json(r));
  return {{"config", config_to_json(cfg)},
          {"test_error_percent", summary_to_json(m.test_error)},
          {"baseline_test_error_percent", summary_to_json(m.baseline_test_error)},
          {"runs", runs}};
}

/// Learning curves as CSV: seed,phase,epoch,train_loss,train_accuracy,val_accuracy.
inline std::string curves_to_csv(const MetricsRecord& m) {
  std::string out = "seed,phase,epoch,train_loss,train_accuracy,val_accuracy\n";
  char line[256];
  for (const auto& r : m.runs)
    for (const auto& e : r.curve) {
      std::snprintf(line, sizeof line, "%llu,%s,%zu,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(r.seed),
                    e.phase.c_str(), e.epoch, e.train_loss, e.train_accuracy, e.val_accuracy);
      out += line;
    }
  return out;
}

/// Creates `<base>/<YYYYmmdd-HHMMSS>-seed<seed>`, adding a numeric suffix if taken.
inline std::filesystem::path make_run_dir(const std::filesystem::path& base, std::uint64_t seed) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const std::string stem = std::string(stamp) + "-seed" + std::to_string(seed);
  std::filesystem::create_directories(base);
  std::filesystem::path dir = base / stem;
  for (int k = 1; std::filesystem::exists(dir); ++k) dir = base / (stem + "-" + std::to_string(k));
  std::filesystem::create_directory(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// Curves CSV preceded by a `# config = {...}` line so the file carries its config.
inline std::string curves_csv_with_config(const MetricsRecord& m, const TrainConfig& cfg) {
  return "# config = " + config_to_json(cfg).dump() + "\n" + curves_to_csv(m);
}

/// metrics.json, curves.csv and config.txt for a finished experiment.
inline void write_experiment_outputs(const std::filesystem::path& dir, const MetricsRecord& m, const TrainConfig& cfg) {
  write_json(dir / "metrics.json", metrics_to_json(m, cfg));
  write_text(dir / "curves.csv", curves_csv_with_config(m, cfg));
  write_text(dir / "config.txt", config_to_text(cfg));
}

/// Per-run artifacts: both checkpoints, selected monomials, II state and the
/// selection trace, each carrying the config.
inline void write_run_artifacts(const std::filesystem::path& dir, TwoPhaseResult& r, const TrainConfig& cfg) {
  const nlohmann::json cj = config_to_json(cfg);
  const std::string tag = "seed" + std::to_string(r.record.seed);
  save_model((dir / ("model_" + tag + ".ckpt")).string(), r.model, cj);
  save_model((dir / ("baseline_" + tag + ".ckpt")).string(), r.baseline, cj);
  write_json(dir / ("monomials_" + tag + ".json"),
             {{"config", cj}, {"monomials", monomials_to_json(r.selection.monomials)}});
  r.model.sync_exponents();
  write_json(dir / ("ii_state_" + tag + ".json"), {{"config", cj}, {"ii_state", ii_state_to_json(r.model.ii)}});
  write_json(dir / ("selection_" + tag + ".json"), {{"config", cj}, {"trace", r.record.selection}});
}

}  // namespace iil
