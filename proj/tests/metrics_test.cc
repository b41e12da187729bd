#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "anomhead/metrics.hpp"
#include "oracles.hpp"

namespace anomhead {
namespace {

using Labels = std::vector<std::uint8_t>;

TEST(PixelAuroc, Examples) {
  EXPECT_DOUBLE_EQ(pixel_auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, Labels{0, 0, 1, 1}), 0.75);
  EXPECT_EQ(pixel_auroc(std::vector<double>{0.1, 0.2, 0.9, 0.95}, Labels{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(pixel_auroc(std::vector<double>{0.9, 0.95, 0.1, 0.2}, Labels{0, 0, 1, 1}), 0.0);
  EXPECT_EQ(pixel_auroc(std::vector<double>(6, 0.3), Labels{0, 1, 0, 1, 1, 0}), 0.5);
}

TEST(MaxF1, Examples) {
  EXPECT_DOUBLE_EQ(max_f1(std::vector<double>{0.9, 0.8, 0.3}, Labels{1, 0, 1}), 0.8);
  EXPECT_EQ(max_f1(std::vector<double>{0.1, 0.9}, Labels{0, 1}), 1.0);
}

TEST(Metrics, UndefinedCasesAndBadInput) {
  EXPECT_THROW(pixel_auroc(std::vector<double>{0.1, 0.2}, Labels{1, 1}), MetricError);
  EXPECT_THROW(pixel_auroc(std::vector<double>{0.1, 0.2}, Labels{0, 0}), MetricError);
  EXPECT_THROW(max_f1(std::vector<double>{0.1, 0.2}, Labels{0, 0}), MetricError);
  EXPECT_THROW(pixel_auroc(std::vector<double>{0.1}, Labels{0, 1}), DimensionError);
  EXPECT_THROW(pixel_auroc(std::vector<double>{NAN, 0.2}, Labels{0, 1}), ValidationError);
  EXPECT_THROW(max_f1(std::vector<double>{0.1, 0.2}, Labels{0, 2}), ValidationError);
  try {
    pixel_auroc(std::vector<double>{0.1}, Labels{1});
  } catch (const Error& e) {
    EXPECT_STREQ(category_name(e.category()), "VALIDATION");
  }
}

struct Population {
  std::vector<double> scores;
  Labels labels;
};

// Quantized scores so ties are common.
Population random_population(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(2, 200), level(0, 15);
  std::bernoulli_distribution pos(0.3);
  Population p;
  const int n = size(rng);
  for (int i = 0; i < n; ++i) {
    p.scores.push_back(level(rng) / 15.0);
    p.labels.push_back(pos(rng) ? 1 : 0);
  }
  p.labels[0] = 1;
  p.labels[1] = 0;
  return p;
}

TEST(Metrics, MatchOraclesExactly) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Population p = random_population(rng);
    EXPECT_EQ(pixel_auroc(p.scores, p.labels), oracle::auroc(p.scores, p.labels));
    EXPECT_EQ(max_f1(p.scores, p.labels), oracle::max_f1(p.scores, p.labels));
  }
}

TEST(Metrics, InvariantUnderIncreasingTransformsAndOrder) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Population p = random_population(rng);
    std::vector<double> t;
    for (double s : p.scores) t.push_back(std::exp(3 * s) - 7);
    EXPECT_EQ(pixel_auroc(t, p.labels), pixel_auroc(p.scores, p.labels));
    EXPECT_EQ(max_f1(t, p.labels), max_f1(p.scores, p.labels));

    std::vector<std::size_t> idx(p.scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    Population q;
    for (auto i : idx) {
      q.scores.push_back(p.scores[i]);
      q.labels.push_back(p.labels[i]);
    }
    EXPECT_EQ(pixel_auroc(q.scores, q.labels), pixel_auroc(p.scores, p.labels));
    EXPECT_EQ(max_f1(q.scores, q.labels), max_f1(p.scores, p.labels));
  }
}

TEST(Evaluate, PerfectMapAndPooling) {
  std::mt19937_64 rng(3);
  FeatureBundle b = oracle::random_bundle(rng, 4, 8, 8, {24});
  AnomalyMap perfect(8, 8);
  for (std::size_t i = 0; i < 64; ++i) perfect.values[i] = b.mask[i];
  PixelPool pool;
  pool.add("one", perfect, b);
  const EvalReport r = pool.report();
  EXPECT_EQ(r.pixel_auroc, 1.0);
  EXPECT_EQ(r.max_f1, 1.0);
  EXPECT_EQ(r.n_images, 1u);
  EXPECT_EQ(r.n_pixels, 64u);
  ASSERT_TRUE(r.per_image[0].pixel_auroc);

  // Second image without defects: pooled still defined, per-image not.
  FeatureBundle clean = b;
  std::fill(clean.mask.begin(), clean.mask.end(), 0);
  pool.add("clean", AnomalyMap(8, 8, 0.2), clean);
  const EvalReport r2 = pool.report();
  EXPECT_FALSE(r2.per_image[1].pixel_auroc);
  EXPECT_EQ(r2.n_pixels, 128u);
  std::vector<double> s = perfect.values;
  s.insert(s.end(), 64, 0.2);
  Labels l = b.mask;
  l.insert(l.end(), 64, 0);
  EXPECT_EQ(r2.pixel_auroc, oracle::auroc(s, l));

  EXPECT_THROW(PixelPool().report(), ValidationError);
  FeatureBundle nomask = b;
  nomask.mask_present = false;
  nomask.mask.clear();
  EXPECT_THROW(pool.add("x", perfect, nomask), ValidationError);
  EXPECT_THROW(pool.add("x", AnomalyMap(4, 4), b), DimensionError);
}

TEST(Evaluate, ReportFormats) {
  EvalReport r{0.75, 0.5, 2, 128, {{"a", 64, 0.8}, {"b", 64, std::nullopt}}};
  EXPECT_EQ(format_report_kv(r), "pixel_auroc=0.75\nmax_f1=0.5\nn_images=2\nn_pixels=128\n");
  const std::string text = format_report_text(r);
  EXPECT_NE(text.find("pixel AUROC  0.7500"), std::string::npos);
  EXPECT_NE(text.find("b\tAUROC n/a"), std::string::npos);
}

}  // namespace
}  // namespace anomhead
