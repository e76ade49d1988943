#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "iil/checkpoint.hpp"
#include "iil/train.hpp"

using namespace iil;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.image_size = 9;
  cfg.train_size = 24;
  cfg.val_size = 12;
  cfg.test_size = 12;
  cfg.orientations = 4;
  cfg.lift_channels = 2;
  cfg.gconv_channels = {3};
  cfg.lift_kernel = 3;
  cfg.gconv_kernel = 3;
  cfg.epochs_phase1 = 1;
  cfg.epochs_phase2 = 1;
  cfg.batch_size = 8;
  cfg.pool_size = 4;
  cfg.num_monomials = 2;
  cfg.r_max = 1.5;
  cfg.patience = 2;
  cfg.head_warmup_steps = 5;
  return cfg;
}

}  // namespace

TEST(Seeds, DerivedStreamsDiffer) {
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
}

TEST(Splits, SyntheticSplitsHaveRequestedSizes) {
  TrainConfig cfg = tiny_config();
  cfg.subset_fraction = 0.5;
  const DataSplits s = load_splits(cfg, 3);
  EXPECT_EQ(s.train.size(), 12u);
  EXPECT_EQ(s.val.size(), 12u);
  EXPECT_EQ(s.test.size(), 12u);
  EXPECT_NE(s.train.images.values(), s.val.images.values());
}

TEST(Splits, IdxValidationComesFromTheTrainingTail) {
  const auto dir = std::filesystem::temp_directory_path() / "iil_test_train_idx";
  std::filesystem::create_directories(dir);
  const Dataset full = make_synthetic({SyntheticKind::Glyphs, 20, 9, 0.1, 1});
  write_idx(full, (dir / "ti").string(), (dir / "tl").string());
  write_idx(full, (dir / "si").string(), (dir / "sl").string());
  TrainConfig cfg = tiny_config();
  cfg.source = "idx";
  cfg.train_images = (dir / "ti").string();
  cfg.train_labels = (dir / "tl").string();
  cfg.test_images = (dir / "si").string();
  cfg.test_labels = (dir / "sl").string();
  cfg.train_size = 100;
  cfg.val_size = 5;
  const DataSplits s = load_splits(cfg, 1);
  EXPECT_EQ(s.train.size(), 15u);
  EXPECT_EQ(s.val.size(), 5u);
  EXPECT_EQ(s.test.size(), 12u);
  EXPECT_EQ(s.val.labels.front(), full.labels[15]);
}

TEST(Summary, MeanAndSampleStd) {
  const ErrorSummary one = summarize({3.0});
  EXPECT_EQ(one.mean, 3.0);
  EXPECT_EQ(one.std, 0.0);
  const ErrorSummary three = summarize({1.0, 2.0, 6.0});
  EXPECT_DOUBLE_EQ(three.mean, 3.0);
  EXPECT_DOUBLE_EQ(three.std, std::sqrt(7.0));
}

TEST(Evaluation, PerfectClassifierHasZeroError) {
  // A pooled model whose head reads the class straight from the mean intensity.
  std::mt19937_64 rng(1);
  TrainConfig cfg = tiny_config();
  Model m = make_baseline(cfg, 1, 2, rng);
  m.normalize_head = false;
  for (double& v : m.backbone.lift.kernels.data()) v = 0.0;
  m.backbone.lift.kernels[4] = 1.0;  // center tap of the first output channel
  m.backbone.lift.bias = Tensor(m.backbone.lift.bias.shape());
  for (auto& g : m.backbone.gconvs) {
    for (double& v : g.kernels.data()) v = 0.0;
    // identity on channel 0: input orientation offset 0, center tap
    g.kernels[4] = 1.0;
    g.bias = Tensor(g.bias.shape());
  }
  m.dense.weights = Tensor(m.dense.weights.shape());
  m.dense.weights[0] = 1.0;
  m.dense.weights[1] = -1.0;
  m.dense.bias = Tensor({2}, std::vector<double>{-0.5, 0.5});
  Dataset ds{Tensor({4, 9, 9, 1}), {1, 0, 1, 0}, 2};
  for (std::size_t i = 0; i < 81; ++i) {
    ds.images[i] = 0.1;
    ds.images[81 + i] = 0.9;
    ds.images[162 + i] = 0.2;
    ds.images[243 + i] = 0.8;
  }
  EXPECT_EQ(test_error_percent(m, ds), 0.0);
}

TEST(TwoPhase, ZeroEpochsReturnsInitializedModels) {
  TrainConfig cfg = tiny_config();
  cfg.epochs_phase1 = 0;
  cfg.epochs_phase2 = 0;
  cfg.head_warmup_steps = 0;
  const DataSplits data = load_splits(cfg, 1);
  const TwoPhaseResult r = train_two_phase(data, cfg, 1);
  EXPECT_TRUE(r.record.curve.empty());
  EXPECT_EQ(r.model.head, HeadKind::Invariant);
  EXPECT_FALSE(r.model.ii.monomials.empty());
  EXPECT_EQ(r.record.initial_exponents, r.record.final_exponents);
  for (double b : r.record.initial_exponents) EXPECT_EQ(b, std::round(b));
}

TEST(TwoPhase, SameSeedGivesIdenticalMetrics) {
  const TrainConfig cfg = tiny_config();
  const MetricsRecord a = run_experiment(cfg), b = run_experiment(cfg);
  ASSERT_EQ(a.runs.size(), 1u);
  const auto& ra = a.runs[0];
  const auto& rb = b.runs[0];
  EXPECT_NEAR(ra.test_error, rb.test_error, 1e-12);
  EXPECT_NEAR(ra.baseline_test_error, rb.baseline_test_error, 1e-12);
  ASSERT_EQ(ra.curve.size(), rb.curve.size());
  for (std::size_t i = 0; i < ra.curve.size(); ++i) {
    EXPECT_NEAR(ra.curve[i].train_loss, rb.curve[i].train_loss, 1e-12);
    EXPECT_NEAR(ra.curve[i].val_accuracy, rb.curve[i].val_accuracy, 1e-12);
  }
  ASSERT_EQ(ra.final_exponents.size(), rb.final_exponents.size());
  for (std::size_t i = 0; i < ra.final_exponents.size(); ++i)
    EXPECT_NEAR(ra.final_exponents[i], rb.final_exponents[i], 1e-12);
  EXPECT_EQ(ra.selection, rb.selection);
}

TEST(TwoPhase, CurveCoversBothPhasesAndBaseline) {
  TrainConfig cfg = tiny_config();
  cfg.epochs_phase1 = 2;
  cfg.epochs_phase2 = 1;
  const DataSplits data = load_splits(cfg, 2);
  const TwoPhaseResult r = train_two_phase(data, cfg, 2);
  ASSERT_EQ(r.record.curve.size(), 4u);
  EXPECT_EQ(r.record.curve[0].phase, "phase1");
  EXPECT_EQ(r.record.curve[2].phase, "phase2");
  EXPECT_EQ(r.record.curve[3].phase, "baseline");
  for (const auto& e : r.record.curve) EXPECT_TRUE(std::isfinite(e.train_loss));
}

TEST(TwoPhase, PlantedTextureInvariantNetworkMatchesOrBeatsPhaseOne) {
  TrainConfig cfg;
  cfg.synthetic_kind = "planted";
  cfg.image_size = 12;
  cfg.train_size = 80;
  cfg.val_size = 60;
  cfg.test_size = 20;
  cfg.orientations = 4;
  cfg.lift_channels = 3;
  cfg.gconv_channels = {3};
  cfg.lift_kernel = 3;
  cfg.epochs_phase1 = 2;
  cfg.epochs_phase2 = 2;
  cfg.pool_size = 12;
  cfg.num_monomials = 3;
  cfg.patience = 3;
  cfg.r_max = 2.0;
  const DataSplits data = load_splits(cfg, 4);
  const TwoPhaseResult r = train_two_phase(data, cfg, 4);
  EXPECT_GE(r.record.final_val_accuracy, r.record.phase1_val_accuracy);
}

TEST(TwoPhase, DivergenceDumpsLastGoodCheckpoint) {
  TrainConfig cfg = tiny_config();
  cfg.lr = 1e300;
  const auto dir = std::filesystem::temp_directory_path() / "iil_test_diverge";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const DataSplits data = load_splits(cfg, 1);
  EXPECT_THROW(train_two_phase(data, cfg, 1, dir.string()), DivergenceError);
  const auto dump = dir / "diverged_phase1.ckpt";
  ASSERT_TRUE(std::filesystem::exists(dump));
  Model m = load_model(dump.string());
  EXPECT_TRUE(all_finite(m));
  EXPECT_EQ(read_container(dump.string()).metadata["config"]["lr"], 1e300);
}

TEST(Artifacts, OutputsEmbedTheirConfig) {
  TrainConfig cfg = tiny_config();
  cfg.seed = 9;
  const auto base = std::filesystem::temp_directory_path() / "iil_test_artifacts";
  std::filesystem::remove_all(base);
  const auto dir = make_run_dir(base, cfg.seed);
  EXPECT_NE(dir.filename().string().find("-seed9"), std::string::npos);
  EXPECT_NE(make_run_dir(base, cfg.seed), dir);
  MetricsRecord m = run_experiment(cfg, dir.string(), [&](const TwoPhaseResult& r) {
    TwoPhaseResult copy = r;
    write_run_artifacts(dir, copy, cfg);
  });
  write_experiment_outputs(dir, m, cfg);
  const nlohmann::json cj = config_to_json(cfg);
  auto read_json = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
  };
  EXPECT_EQ(read_json(dir / "metrics.json")["config"], cj);
  EXPECT_EQ(read_json(dir / "monomials_seed9.json")["config"], cj);
  EXPECT_EQ(read_json(dir / "ii_state_seed9.json")["config"], cj);
  EXPECT_EQ(read_json(dir / "selection_seed9.json")["config"], cj);
  EXPECT_EQ(read_container((dir / "model_seed9.ckpt").string()).metadata["config"], cj);
  EXPECT_EQ(read_container((dir / "baseline_seed9.ckpt").string()).metadata["config"], cj);
  std::ifstream csv(dir / "curves.csv");
  std::string first;
  std::getline(csv, first);
  EXPECT_EQ(first, "# config = " + cj.dump());
  std::ifstream txt(dir / "config.txt");
  EXPECT_EQ(config_to_json(parse_config(txt)), cj);
}
