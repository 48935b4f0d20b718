#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spuq/segmetrics.hpp"
#include "support/metric_oracles.hpp"

namespace m = spuq::metrics;
namespace oracle = spuq::testing::oracle;
using spuq::MaskVolume;

namespace {

MaskVolume cube(std::size_t n, std::size_t lo, std::size_t hi, std::size_t shift = 0) {
  MaskVolume v(n, n, n);
  for (std::size_t z = lo; z < hi; ++z)
    for (std::size_t y = lo; y < hi; ++y)
      for (std::size_t x = lo + shift; x < hi + shift; ++x) v.at(x, y, z) = 1;
  return v;
}

MaskVolume set_count(std::size_t n, std::initializer_list<std::size_t> on) {
  MaskVolume v(1, n, 1);
  for (auto i : on) v[i] = 1;
  return v;
}

}  // namespace

TEST(Dsc, Examples) {
  const auto a = cube(6, 1, 4);
  EXPECT_EQ(m::dsc(a, a), 100.0);
  EXPECT_EQ(m::dsc(set_count(8, {0, 1}), set_count(8, {4, 5})), 0.0);
  EXPECT_EQ(m::dsc(set_count(8, {0, 1, 2, 3}), set_count(8, {2, 3, 4, 5})), 50.0);
  EXPECT_EQ(m::dsc(MaskVolume(3, 3, 3), MaskVolume(3, 3, 3)), 100.0);
  EXPECT_THROW(m::dsc(MaskVolume(3, 3, 3), MaskVolume(3, 3, 4)), std::invalid_argument);
}

TEST(SurfaceDice, Examples) {
  const auto a = cube(8, 2, 5);
  EXPECT_EQ(m::surface_dice(a, a, {1, 1, 1}, 1.0), 100.0);
  EXPECT_EQ(m::surface_dice(a, cube(8, 2, 5, 1), {1, 1, 1}, 2.0), 100.0);
  MaskVolume far1(16, 16, 16), far2(16, 16, 16);
  far1.at(1, 1, 1) = 1;
  far2.at(14, 14, 14) = 1;
  EXPECT_EQ(m::surface_dice(far1, far2, {1, 1, 1}, 0.5), 0.0);
  EXPECT_EQ(m::surface_dice(far1, MaskVolume(16, 16, 16), {1, 1, 1}, 0.5), 0.0);
  EXPECT_EQ(m::surface_dice(MaskVolume(4, 4, 4), MaskVolume(4, 4, 4), {1, 1, 1}, 0.5), 100.0);
}

TEST(AverageHausdorff, Examples) {
  const auto a = cube(6, 1, 4);
  EXPECT_EQ(m::average_hausdorff(a, a, {1, 1, 1}).ahd, 0.0);
  MaskVolume p(8, 8, 8), g(8, 8, 8);
  p.at(1, 2, 2) = 1;
  g.at(4, 2, 2) = 1;
  EXPECT_EQ(m::average_hausdorff(p, g, {1, 1, 1}).ahd, 3.0);
  EXPECT_THROW(m::average_hausdorff(p, MaskVolume(8, 8, 8), {1, 1, 1}), std::invalid_argument);
}

TEST(Metrics, AgreeWithBruteForceOraclesOnRandomPairs) {
  spuq::grad::Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng.index(8), w = 1 + rng.index(8), d = 1 + rng.index(8);
    const spuq::Spacing sp{0.5 + rng.uniform(), 0.5 + rng.uniform(), 0.5 + 2 * rng.uniform()};
    const auto a = oracle::random_mask(rng, h, w, d), b = oracle::random_mask(rng, h, w, d);
    const double tau = rng.uniform(0.3, 2.5);
    ASSERT_EQ(m::dsc(a, b), oracle::dsc(a, b));
    ASSERT_EQ(m::surface_dice(a, b, sp, tau), oracle::surface_dice(a, b, sp, tau));
    if (spuq::count_foreground(a.values()) && spuq::count_foreground(b.values())) {
      ASSERT_DOUBLE_EQ(m::average_hausdorff(a, b, sp).ahd, oracle::ahd(a, b, sp));
    }
  }
}

TEST(Metrics, DistanceTransformMatchesBruteForce) {
  spuq::grad::Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t h = 2 + rng.index(12), w = 2 + rng.index(12), d = 1 + rng.index(10);
    const auto a = oracle::random_mask(rng, h, w, d), b = oracle::random_mask(rng, h, w, d);
    for (const spuq::Spacing sp : {spuq::Spacing{1, 1, 1}, spuq::Spacing{0.7, 1.3, 2.1}}) {
      const auto bf = m::surface_distances(a, b, sp, m::DistanceMethod::BruteForce);
      const auto dt = m::surface_distances(a, b, sp, m::DistanceMethod::Transform);
      ASSERT_EQ(bf.pred_to_gt.size(), dt.pred_to_gt.size());
      for (std::size_t i = 0; i < bf.pred_to_gt.size(); ++i) ASSERT_NEAR(bf.pred_to_gt[i], dt.pred_to_gt[i], 1e-9);
      for (std::size_t i = 0; i < bf.gt_to_pred.size(); ++i) ASSERT_NEAR(bf.gt_to_pred[i], dt.gt_to_pred[i], 1e-9);
    }
  }
}

TEST(Metrics, Properties) {
  spuq::grad::Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = oracle::random_mask(rng, 7, 7, 7), b = oracle::random_mask(rng, 7, 7, 7);
    a.at(3, 3, 3) = b.at(0, 0, 0) = 1;
    EXPECT_EQ(m::dsc(a, b), m::dsc(b, a));
    EXPECT_EQ(m::dsc(a, a), 100.0);
    const double h1 = m::average_hausdorff(a, b, {1, 1, 1}).ahd;
    EXPECT_DOUBLE_EQ(h1, m::average_hausdorff(b, a, {1, 1, 1}).ahd);
    EXPECT_NEAR(m::average_hausdorff(a, b, {2.5, 2.5, 2.5}).ahd, 2.5 * h1, 1e-12);
    double prev = 0.0;
    for (double tau = 0.25; tau < 6; tau += 0.25) {
      const double s = m::surface_dice(a, b, {1, 1, 1}, tau);
      EXPECT_GE(s, prev);
      prev = s;
    }
  }
}

TEST(Pearson, Examples) {
  EXPECT_NEAR(m::pearson_r({1, 2, 3, 4}, {2, 4, 6, 8}).value, 1.0, 1e-12);
  EXPECT_NEAR(m::pearson_r({1, 2, 3}, {-1, -2, -3}).value, -1.0, 1e-12);
  EXPECT_NEAR(m::pearson_r({1, 2, 3}, {1, 3, 2}).value, 0.5, 1e-9);
  const auto c = m::pearson_r({1, 1, 1}, {1, 2, 3});
  EXPECT_FALSE(c.ok());
  EXPECT_EQ(c.status, m::CorrelationStatus::ConstantInput);
  EXPECT_TRUE(std::isnan(c.value));
  EXPECT_EQ(m::pearson_r({1}, {1}).status, m::CorrelationStatus::TooFewSamples);
}

TEST(Pearson, AffineInvariant) {
  spuq::grad::Rng rng(3);
  std::vector<double> x(30), y(30);
  for (auto& v : x) v = rng.normal();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + rng.normal();
  const double r = m::pearson_r(x, y).value;
  std::vector<double> x2 = x, y2 = y;
  for (auto& v : x2) v = 3.5 * v - 7;
  for (auto& v : y2) v = 0.01 * v + 100;
  EXPECT_NEAR(m::pearson_r(x2, y2).value, r, 1e-9);
}

TEST(Spearman, AverageRanksForTies) {
  EXPECT_EQ(m::average_ranks({10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
  EXPECT_NEAR(m::spearman_rho({1, 2, 3, 4}, {1, 8, 27, 64}).value, 1.0, 1e-12);
}

TEST(Retention, HandComputedExample) {
  const auto c = m::retention_curve({10, 20, 30}, {1, 2, 3}, {1.0 / 3, 2.0 / 3, 1.0});
  ASSERT_EQ(c.errors.size(), 3u);
  EXPECT_NEAR(c.errors[0], 10, 1e-9);
  EXPECT_NEAR(c.errors[1], 15, 1e-9);
  EXPECT_NEAR(c.errors[2], 20, 1e-9);
  EXPECT_NEAR(c.r_auc, 10.0, 1e-9);
}

TEST(Retention, ConstantErrorsGiveFlatCurve) {
  const auto c = m::retention_curve({4, 4, 4, 4, 4}, {5, 1, 3, 2, 4});
  for (double e : c.errors) EXPECT_EQ(e, 4.0);
  EXPECT_NEAR(c.r_auc, 4.0 * (1.0 - 0.05), 1e-9);
  EXPECT_EQ(c.fractions.size(), 20u);
  EXPECT_EQ(c.fractions.back(), 1.0);
}

TEST(Retention, OracleOrderingBeatsRandomAndFullFractionIsMean) {
  spuq::grad::Rng rng(8);
  std::vector<double> err(40), perm(40);
  for (auto& e : err) e = rng.uniform(0, 50);
  std::iota(perm.begin(), perm.end(), 0.0);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  const auto oracle_curve = m::retention_curve(err, err);
  const auto random_curve = m::retention_curve(err, perm);
  EXPECT_LE(oracle_curve.r_auc, random_curve.r_auc);
  EXPECT_EQ(oracle_curve.errors.back(), std::accumulate(err.begin(), err.end(), 0.0) / 40.0);
}

TEST(Retention, StableTieOrder) {
  const auto c = m::retention_curve({1, 9, 5}, {0, 0, 0}, {1.0 / 3, 1.0});
  EXPECT_EQ(c.errors[0], 1.0);
}

TEST(Trend, SingleSliceVolumeHasOneBucket) {
  MaskVolume g(6, 6, 1);
  g.at(2, 2, 0) = 1;
  const auto rec = m::per_slice_metrics(g, g, 0, {0.1});
  const auto t = m::trend_analysis({{rec, 1.0}});
  ASSERT_EQ(t.buckets.size(), 1u);
  EXPECT_EQ(t.buckets[0].distance, 0.0);
  EXPECT_EQ(t.buckets[0].dsc.mean, 100.0);
}

TEST(Trend, BucketsByDistanceAndSkipsEmptySlices) {
  MaskVolume g(8, 8, 5), p(8, 8, 5);
  for (std::size_t z = 1; z < 4; ++z)
    for (std::size_t y = 2; y < 6; ++y)
      for (std::size_t x = 2; x < 6; ++x) g.at(x, y, z) = p.at(x, y, z) = 1;
  // Degrade slice 3 (distance 2 from the annotation at 1).
  for (std::size_t x = 2; x < 6; ++x) p.at(x, 2, 3) = 0;
  const auto rec = m::per_slice_metrics(p, g, 1, {0.0, 0.0, 0.1, 0.3, 0.0});
  const auto t = m::trend_analysis({{rec, 2.0}});
  // Slices 0 and 4 are empty in both masks and skipped; distances 0, 1, 2 remain.
  ASSERT_EQ(t.buckets.size(), 3u);
  EXPECT_EQ(t.buckets[0].dsc.mean, 100.0);
  EXPECT_EQ(t.buckets[1].dsc.n, 1u);
  EXPECT_LT(t.buckets[2].dsc.mean, 100.0);
  const auto flags = m::trend_flags(t);
  EXPECT_LT(flags.dsc_rho.value, 0.0);
  EXPECT_GT(flags.uncertainty_rho.value, 0.0);

  const auto mm = m::trend_analysis({{rec, 2.0}}, {.bucket_mm = 2.0});
  EXPECT_EQ(mm.unit, "mm");
  EXPECT_EQ(mm.buckets[2].distance, 4.0);
}

TEST(MeanStd, SampleStandardDeviation) {
  const auto s = m::mean_std({2, 4, 4, 4, 5, 5, 7, 9});
  EXPECT_EQ(s.mean, 5.0);
  EXPECT_NEAR(s.std, std::sqrt(32.0 / 7.0), 1e-12);
}
