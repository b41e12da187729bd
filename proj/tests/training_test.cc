#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "anomhead/metrics.hpp"
#include "anomhead/synth.hpp"
#include "anomhead/training.hpp"
#include "oracles.hpp"

namespace anomhead {
namespace {

TrainConfig desk_config() { return load_config(std::filesystem::path(ANOMHEAD_CONFIG_DIR) / "synthetic.ini").train; }

TEST(AdamStep, Examples) {
  TrainConfig cfg;
  std::vector<double> p{1.0, -2.0};
  AdamState st(2);
  adam_step(p, std::vector<double>{0.0, 0.0}, st, cfg);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));

  AdamState st2(1);
  std::vector<double> q{0.0};
  adam_step(q, std::vector<double>{0.5}, st2, cfg);
  EXPECT_NEAR(q[0], -1e-4 * 0.5 / (0.5 + 1e-8), 1e-18);
  EXPECT_EQ(st2.step, 1u);

  AdamState bad(3);
  EXPECT_THROW(adam_step(p, std::vector<double>{0.0, 0.0}, bad, cfg), DimensionError);
}

TEST(AdamStep, DecreasesQuadratic) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  std::vector<double> x{3.0};
  AdamState st(1);
  double f = x[0] * x[0];
  for (int i = 0; i < 2; ++i) {
    adam_step(x, std::vector<double>{2 * x[0]}, st, cfg);
    EXPECT_LT(x[0] * x[0], f);
    f = x[0] * x[0];
  }
}

TEST(SampleLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  const TrainConfig cfg = oracle::tiny_config();
  const FeatureBundle b = oracle::random_bundle(rng, 4, 8, 8, {12, 24});
  const TextBank bank = oracle::random_bank(rng, 6, 2);
  AdapterStack st = init_stack(cfg, 3);
  // Non-zero biases so every parameter is exercised.
  std::vector<double> p = st.flat_params();
  std::normal_distribution<double> nd(0, 0.1);
  for (double& v : p) v += nd(rng);
  st.set_flat_params(p);
  TrainConfig soft = cfg;
  soft.temperature = 0.5;  // keep the softmax away from saturation

  const SampleLoss s = sample_loss(b, st, bank, soft);
  const auto fd = oracle::finite_diff(
      [&](const std::vector<double>& v) {
        AdapterStack c = st;
        c.set_flat_params(v);
        return sample_objective(b, c, bank, soft);
      },
      p);
  EXPECT_LT(oracle::max_rel_err(s.grad, fd, 1e-4), 1e-4);
  EXPECT_NEAR(s.total, s.cm + s.aacm, 1e-15);
}

TEST(Train, DeterministicAndInputsUntouched) {
  SynthSpec spec;
  spec.n_train = 12;
  spec.n_test = 1;
  const SynthDataset ds = synth_dataset(spec);
  std::vector<FeatureBundle> train_set(ds.bundles.begin(), ds.bundles.begin() + 12);
  const auto train_copy = train_set;
  const TextBank bank_copy = ds.bank;
  TrainConfig cfg = desk_config();
  cfg.epochs = 2;
  cfg.batch_size = 5;  // last batch is partial
  const TrainResult a = train(train_set, ds.bank, cfg);
  const TrainResult b = train(train_set, ds.bank, cfg);
  EXPECT_EQ(a.stack, b.stack);
  EXPECT_EQ(a.steps.size(), 6u);
  EXPECT_EQ(encode_checkpoint(a.stack, architecture_hash(cfg)), encode_checkpoint(b.stack, architecture_hash(cfg)));
  EXPECT_EQ(train_set, train_copy);
  EXPECT_EQ(ds.bank, bank_copy);
  for (const auto& s : a.steps) {
    EXPECT_TRUE(std::isfinite(s.total));
    EXPECT_TRUE(std::isfinite(s.cm));
    EXPECT_TRUE(std::isfinite(s.aacm));
  }
  cfg.seed = 1;
  EXPECT_NE(train(train_set, ds.bank, cfg).stack, a.stack);
}

TEST(Train, AacmWeightZeroLeavesClsAdapterAtInit) {
  SynthSpec spec;
  spec.n_train = 6;
  spec.n_test = 1;
  const SynthDataset ds = synth_dataset(spec);
  std::vector<FeatureBundle> train_set(ds.bundles.begin(), ds.bundles.begin() + 6);
  TrainConfig cfg = desk_config();
  cfg.epochs = 2;
  cfg.loss.lambda_aacm = 0;
  const TrainResult r = train(train_set, ds.bank, cfg);
  EXPECT_EQ(r.stack.cls_adapter, init_stack(cfg, cfg.seed).cls_adapter);
  EXPECT_NE(r.stack.text_adapter, init_stack(cfg, cfg.seed).text_adapter);
}

TEST(Train, EpochLossDecreasesOnSeparableData) {
  int good = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthSpec spec;
    spec.seed = seed;
    spec.n_test = 1;
    const SynthDataset ds = synth_dataset(spec);
    std::vector<FeatureBundle> train_set(ds.bundles.begin(), ds.bundles.begin() + 64);
    TrainConfig cfg = desk_config();
    cfg.seed = seed;
    cfg.epochs = 3;
    const TrainResult r = train(train_set, ds.bank, cfg);
    if (r.epochs[1].total < r.epochs[0].total && r.epochs[2].total < r.epochs[1].total) ++good;
  }
  EXPECT_GE(good, 9);
}

TEST(Train, PureNoiseGivesChanceAuroc) {
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthSpec spec;
    spec.seed = seed;
    spec.signal_strength = 0.0;
    spec.n_train = 16;
    spec.n_test = 8;
    const SynthDataset ds = synth_dataset(spec);
    std::vector<FeatureBundle> tr(ds.bundles.begin(), ds.bundles.begin() + 16);
    std::vector<FeatureBundle> te(ds.bundles.begin() + 16, ds.bundles.end());
    TrainConfig cfg = desk_config();
    cfg.seed = seed;
    cfg.epochs = 4;
    const TrainResult r = train(tr, ds.bank, cfg);
    const double auroc = evaluate(te, r.stack, ds.bank, cfg).pixel_auroc;
    EXPECT_NEAR(auroc, 0.5, 0.1) << "seed " << seed;
    mean += auroc / 20;
  }
  EXPECT_NEAR(mean, 0.5, 0.05);
}

TEST(Train, ErrorsNameTheOffendingFile) {
  const auto dir = std::filesystem::temp_directory_path() / "anomhead_train_errors";
  std::filesystem::remove_all(dir);
  SynthSpec spec;
  spec.n_train = 2;
  spec.n_test = 1;
  write_synth_dataset(synth_dataset(spec), dir);
  DatasetManifest m = read_manifest(dir / "manifest.tsv");
  const TextBank bank = read_textbank(dir / "textbank.adtx");
  TrainConfig cfg = desk_config();
  cfg.d_v = 16;
  try {
    train(m, bank, cfg);
    FAIL() << "expected CompatError";
  } catch (const CompatError& e) {
    EXPECT_NE(std::string(e.what()).find("train/0000.adft"), std::string::npos) << e.what();
  }
  cfg = desk_config();
  cfg.d_t = 7;
  EXPECT_THROW(train(m, bank, cfg), CompatError);

  DatasetManifest test_only = m;
  std::erase_if(test_only.entries, [](const ManifestEntry& e) { return e.split == Split::Train; });
  EXPECT_THROW(train(test_only, bank, desk_config()), ValidationError);
  EXPECT_THROW(train(std::vector<FeatureBundle>{}, bank, desk_config()), ValidationError);
}

TEST(LossLog, Format) {
  const std::string log = format_loss_log({{1, 1, 0.5, 0.25, 0.25}, {1, 2, 0.125, 0.0625, 0.0625}});
  EXPECT_EQ(log, "# epoch\tstep\ttotal\tcm\taacm\n1\t1\t0.5\t0.25\t0.25\n1\t2\t0.125\t0.0625\t0.0625\n");
}

}  // namespace
}  // namespace anomhead
