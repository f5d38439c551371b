#include <gtest/gtest.h>

#include <numeric>

#include "../support/oracles.hpp"
#include "lbm/metrics.hpp"
#include "lbm/simulator.hpp"

using namespace lbm;

TEST(Simulator, Deterministic) {
  const ModelParams th = make_benchmark_params(0.2);
  const CompleteSample a = sample_lbm(th, 30, 20, 42), b = sample_lbm(th, 30, 20, 42);
  EXPECT_EQ(a.x_observed, b.x_observed);
  EXPECT_EQ(a.row_labels, b.row_labels);
  EXPECT_EQ(a.q, b.q);
  EXPECT_NE(sample_lbm(th, 30, 20, 43).x_observed, a.x_observed);
}

TEST(Simulator, ObservedAgreesWithMask) {
  const CompleteSample s = sample_lbm(make_benchmark_params(0.2), 25, 30, 1);
  for (int i = 0; i < 25; ++i)
    for (int j = 0; j < 30; ++j) {
      if (s.mask(i, j)) EXPECT_EQ(static_cast<int>(s.x_observed(i, j)), s.x_complete(i, j));
      else EXPECT_EQ(s.x_observed(i, j), Cell::Missing);
    }
}

TEST(Simulator, SaturatedMcarObservesEverything) {
  const ModelParams th = make_benchmark_params(0.2, {20, 0, 0, 0, 0});
  EXPECT_EQ(th.kind, MissingnessKind::MCAR);
  EXPECT_EQ(sample_lbm(th, 50, 50, 3).x_observed.count(Cell::Missing), 0u);
}

TEST(Simulator, BenchmarkMissingRate) {
  double sum = 0;
  for (int s = 0; s < 10; ++s) sum += sample_lbm(make_benchmark_params(0.2), 200, 200, s).x_observed.missing_fraction();
  EXPECT_NEAR(sum / 10, 0.35, 0.03);
}

TEST(Simulator, BlockMeansWithinThreeStandardErrors) {
  const ModelParams th = make_benchmark_params(0.15);
  const CompleteSample s = sample_lbm(th, 500, 500, 77);
  Matrix ones = Matrix::Zero(3, 3), n = Matrix::Zero(3, 3);
  for (int i = 0; i < 500; ++i)
    for (int j = 0; j < 500; ++j) {
      n(s.row_labels[i], s.col_labels[j]) += 1;
      ones(s.row_labels[i], s.col_labels[j]) += s.x_complete(i, j);
    }
  for (int q = 0; q < 3; ++q)
    for (int l = 0; l < 3; ++l) {
      const double p = th.pi(q, l), se = std::sqrt(p * (1 - p) / n(q, l));
      EXPECT_NEAR(ones(q, l) / n(q, l), p, 3 * se);
    }
}

TEST(Simulator, MarMaskIndependentOfValues) {
  const ModelParams th = make_benchmark_params(0.3, {1, 1, 0, 1, 0});
  EXPECT_EQ(th.kind, MissingnessKind::MAR);
  const CompleteSample s = sample_lbm(th, 320, 320, 5);
  const Eigen::ArrayXXd m = s.mask.cast<double>().array(), x = s.x_complete.cast<double>().array();
  const double n = static_cast<double>(m.size());
  const double cov = ((m - m.mean()) * (x - x.mean())).sum() / n;
  const double r = cov / std::sqrt(((m - m.mean()).square().sum() / n) * ((x - x.mean()).square().sum() / n));
  EXPECT_LT(std::abs(r), 3 / std::sqrt(n));
}

TEST(Benchmark, PiPattern) {
  const ModelParams th = make_benchmark_params(0.1);
  EXPECT_DOUBLE_EQ(th.pi(0, 2), 0.9);
  EXPECT_DOUBLE_EQ(th.pi(0, 0), 0.1);
  Matrix expect(3, 3);
  expect << 0.1, 0.1, 0.9, 0.1, 0.9, 0.9, 0.9, 0.9, 0.1;
  EXPECT_EQ(th.pi, expect);
  EXPECT_TRUE(th.alpha_rows.isApproxToConstant(1.0 / 3));
  EXPECT_EQ(th.kind, MissingnessKind::MNAR);
  EXPECT_THROW(make_benchmark_params(0.5), std::domain_error);
  EXPECT_THROW(make_benchmark_params(0.0), std::domain_error);
}

TEST(Risk, MatchesBruteForceEnumeration) {
  Rng rng(31);
  for (int rep = 0; rep < 5; ++rep) {
    const ModelParams th = oracle::random_mcar(rng);
    std::vector<Cell> cells(9);
    for (Cell& c : cells) c = uniform01(rng) < 0.5 ? Cell::One : Cell::Zero;
    const ObservedMatrix x(3, 3, cells);
    const RiskResult r = conditional_bayes_risk(x, th);
    EXPECT_TRUE(r.exact);
    EXPECT_NEAR(r.risk, oracle::brute_force_risk(x, th), 1e-9);
  }
}

TEST(Risk, AllMissingGivesPriorRisk) {
  const ModelParams th = make_benchmark_params(0.2, {1, 1, 0, 1, 0});
  EXPECT_NEAR(conditional_bayes_risk(ObservedMatrix(4, 4), th).risk, 8.0 / 9, 1e-9);
  const RiskResult v = conditional_bayes_risk(ObservedMatrix(20, 20), th);
  EXPECT_FALSE(v.exact);
  EXPECT_NEAR(v.risk, 8.0 / 9, 1e-6);
}

TEST(Risk, NearDeterministicBlocksGiveZero) {
  const ModelParams th = make_benchmark_params(0.02);
  const CompleteSample s = sample_lbm(th, 80, 80, 4);
  EXPECT_LT(conditional_bayes_risk(s.x_observed, th).risk, 1e-3);
}

TEST(Risk, LabelSwitchingInvariance) {
  Rng rng(9);
  const ModelParams th = oracle::random_mcar(rng);
  std::vector<Cell> cells(12);
  for (Cell& c : cells) c = uniform01(rng) < 0.45 ? Cell::One : uniform01(rng) < 0.5 ? Cell::Zero : Cell::Missing;
  const ObservedMatrix x(3, 4, cells);
  ModelParams sw = th;
  sw.alpha_rows = th.alpha_rows.reverse();
  sw.pi = th.pi.colwise().reverse();
  EXPECT_NEAR(conditional_bayes_risk(x, sw).risk, conditional_bayes_risk(x, th).risk, 1e-12);
}

TEST(Calibration, UnreachableTargetsRaise) {
  CalibrationConfig cfg;
  cfg.n_seeds = 1;
  EXPECT_THROW(calibrate_epsilon(0.0, 30, 30, {}, 1, cfg), CalibrationError);
  EXPECT_THROW(calibrate_epsilon(0.95, 30, 30, {}, 1, cfg), CalibrationError);
}

TEST(Calibration, SelfConsistent) {
  CalibrationConfig cfg;
  cfg.n_seeds = 3;
  cfg.tol = 0.01;
  const CalibrationResult c = calibrate_epsilon(0.1, 60, 60, {}, 3, cfg);
  EXPECT_NEAR(median_benchmark_risk(c.epsilon, 60, 60, {}, 3, cfg), 0.1, 0.01);
  EXPECT_NEAR(c.median_risk, 0.1, 0.01);
}

TEST(Calibration, RiskDecreasesWithSize) {
  CalibrationConfig cfg;
  cfg.n_seeds = 3;
  const double r60 = median_benchmark_risk(0.3, 60, 60, {}, 1, cfg);
  const double r120 = median_benchmark_risk(0.3, 120, 120, {}, 1, cfg);
  EXPECT_GT(r60, r120);
}
