#include <gtest/gtest.h>

#include "../support/oracles.hpp"
#include "lbm/inference.hpp"
#include "lbm/metrics.hpp"
#include "lbm/simulator.hpp"

using namespace lbm;

namespace {

ObservedMatrix benchmark_matrix(int n, double eps, std::uint64_t seed, MnarEffects m = {}) {
  return sample_lbm(make_benchmark_params(eps, m), n, n, seed).x_observed;
}

FitConfig quick(int iters = 60) {
  FitConfig c;
  c.max_vem_iters = iters;
  return c;
}

void expect_monotone(const std::vector<double>& trace) {
  for (std::size_t t = 1; t < trace.size(); ++t)
    EXPECT_GE(trace[t], trace[t - 1] - 1e-8 * std::abs(trace[t - 1])) << "half-step " << t;
}

}  // namespace

TEST(Init, MuIsLogitOfObservedRate) {
  std::vector<Cell> cells(100, Cell::Zero);
  for (int k = 0; k < 35; ++k) cells[k * 2] = Cell::Missing;
  for (int k = 0; k < 20; ++k) cells[k * 2 + 1] = Cell::One;
  const ObservedMatrix x(10, 10, cells);
  Rng rng(1);
  Labels rows(10, 0), cols(10, 0);
  const Initialization init = init_from_labels(x, rows, cols, 1, 1, rng);
  EXPECT_NEAR(logistic(init.params.mu), 0.65, 1e-12);
  EXPECT_NEAR(init.params.mu, std::log(0.65 / 0.35), 1e-12);
}

TEST(Init, BlockEstimatesMatchCounting) {
  const ModelParams th = make_benchmark_params(0.2);
  const CompleteSample s = sample_lbm(th, 60, 50, 5);
  Rng rng(2);
  const Initialization init = init_from_labels(s.x_observed, s.row_labels, s.col_labels, 3, 3, rng);
  for (int q = 0; q < 3; ++q)
    for (int l = 0; l < 3; ++l) {
      double ones = 0, obs = 0;
      for (int i = 0; i < 60; ++i)
        for (int j = 0; j < 50; ++j) {
          if (s.row_labels[i] != q || s.col_labels[j] != l || s.x_observed(i, j) == Cell::Missing) continue;
          obs += 1;
          ones += s.x_observed(i, j) == Cell::One;
        }
      EXPECT_NEAR(init.params.pi(q, l), (ones + 1) / (obs + 2), 1e-12);
    }
  for (int i = 0; i < 60; ++i) EXPECT_NEAR(init.gamma.tau_rows(i, s.row_labels[i]), 0.9, 1e-12);
  EXPECT_GT(init.params.var_a, 0.0);
  EXPECT_LE(init.params.var_a, 1.0);
}

TEST(Init, SpectralIsDeterministic) {
  const ObservedMatrix x = benchmark_matrix(40, 0.2, 3);
  const Initialization a = init_spectral(x, 3, 3, 9), b = init_spectral(x, 3, 3, 9);
  EXPECT_EQ(a.gamma.tau_rows, b.gamma.tau_rows);
  EXPECT_EQ(a.params.var_b, b.params.var_b);
}

TEST(MStep, ClosedFormsForAlphaAndVariances) {
  Rng rng(11);
  const auto in = oracle::random_instance(15, 12, 3, 2, MissingnessKind::MNAR, rng);
  const ModelParams th = m_step(in.x, in.gamma, in.params, quick());
  const Vector alpha = in.gamma.tau_rows.colwise().mean().transpose();
  EXPECT_TRUE(th.alpha_rows.isApprox(alpha, 1e-10));
  EXPECT_TRUE(th.alpha_cols.isApprox(in.gamma.tau_cols.colwise().mean().transpose(), 1e-10));
  const double var_a = (in.gamma.nu_a.array().square() + in.gamma.rho_a.array()).mean();
  const double var_q = (in.gamma.nu_q.array().square() + in.gamma.rho_q.array()).mean();
  EXPECT_NEAR(th.var_a, var_a, 1e-12);
  EXPECT_NEAR(th.var_q, var_q, 1e-12);
  EXPECT_GE(elbo(in.x, in.gamma, th), elbo(in.x, in.gamma, in.params));
}

TEST(MStep, StationaryInPiAndMu) {
  Rng rng(12);
  const auto in = oracle::random_instance(15, 12, 2, 2, MissingnessKind::MAR, rng);
  FitConfig cfg = quick();
  cfg.optimizer.max_inner_iters = 200;
  cfg.optimizer.gradient_tol = 1e-9;
  cfg.weight_floor = 0;
  const ModelParams th = m_step(in.x, in.gamma, in.params, cfg);
  ElboGradient g;
  Criterion(in.x).evaluate(in.gamma, th, {false, false, false, true}, &g);
  EXPECT_NEAR(g.mu, 0.0, 1e-5);
  for (int q = 0; q < 2; ++q)
    for (int l = 0; l < 2; ++l) EXPECT_NEAR(g.pi(q, l) * th.pi(q, l) * (1 - th.pi(q, l)), 0.0, 1e-5);
}

TEST(VeStep, IncreasesJFromRandomStart) {
  Rng rng(13);
  const CompleteSample s = sample_lbm(make_benchmark_params(0.2), 30, 30, 13);
  auto in = oracle::random_instance(30, 30, 3, 3, MissingnessKind::MNAR, rng);
  in.x = s.x_observed;
  const double j0 = elbo(in.x, in.gamma, in.params);
  const VariationalState g = ve_step(in.x, in.params, in.gamma, quick());
  EXPECT_GT(elbo(in.x, g, in.params), j0);
  EXPECT_NO_THROW(g.validate());
}

TEST(VeStep, FixedPointIsKept) {
  const ObservedMatrix x = benchmark_matrix(30, 0.15, 21);
  FitConfig cfg = quick(200);
  cfg.elbo_rel_tol = 1e-10;
  const FitResult r = fit(x, 3, 3, MissingnessKind::MAR, cfg);
  const VariationalState g = ve_step(x, r.params, r.varstate, cfg);
  const double j0 = elbo(x, r.varstate, r.params), j1 = elbo(x, g, r.params);
  EXPECT_GE(j1, j0 - 1e-8 * std::abs(j0));
  EXPECT_NEAR(j1, j0, 1e-5 * std::abs(j0));
}

TEST(Fit, TraceIsMonotoneAndDeterministic) {
  const ObservedMatrix x = benchmark_matrix(40, 0.2, 4);
  for (auto kind : {MissingnessKind::MCAR, MissingnessKind::MAR, MissingnessKind::MNAR}) {
    const FitResult a = fit(x, 3, 3, kind, quick());
    expect_monotone(a.elbo_trace);
    EXPECT_EQ(a.elbo_trace.size(), static_cast<std::size_t>(1 + 2 * a.n_iters));
    const FitResult b = fit(x, 3, 3, kind, quick());
    EXPECT_EQ(a.elbo_trace, b.elbo_trace);
    EXPECT_EQ(a.params.kind, kind);
  }
}

TEST(Fit, RecoversEasyPartition) {
  const ModelParams th = make_benchmark_params(0.1);
  const CompleteSample s = sample_lbm(th, 60, 60, 8);
  const FitResult r = fit(s.x_observed, 3, 3, MissingnessKind::MNAR, quick(100));
  EXPECT_EQ(l_item({s.row_labels, s.col_labels}, map_assignments(r.varstate), 3, 3).total, 0.0);
}

TEST(Fit, Contracts) {
  const ObservedMatrix x = benchmark_matrix(10, 0.2, 1);
  EXPECT_THROW(fit(x, 11, 2, MissingnessKind::MAR, quick()), std::invalid_argument);
  EXPECT_THROW(fit(x, 2, 0, MissingnessKind::MAR, quick()), std::invalid_argument);
  FitConfig bad = quick();
  bad.elbo_rel_tol = 0;
  EXPECT_THROW(fit(x, 2, 2, MissingnessKind::MAR, bad), std::invalid_argument);
  bad = quick();
  bad.n_inits = 0;
  EXPECT_THROW(multi_start_fit(x, 2, 2, MissingnessKind::MAR, bad), std::invalid_argument);
}

TEST(Fit, AllMissingIsDegenerate) {
  const ObservedMatrix x(8, 6, Cell::Missing);
  const FitResult r = fit(x, 2, 2, MissingnessKind::MAR, quick(10));
  EXPECT_TRUE(r.degenerate);
  EXPECT_FALSE(r.elbo_trace.empty());
}

TEST(MultiStart, SingleInitEqualsFit) {
  const ObservedMatrix x = benchmark_matrix(30, 0.25, 6);
  FitConfig cfg = quick();
  cfg.seed = 5;
  const FitResult a = fit(x, 3, 3, MissingnessKind::MNAR, cfg);
  const FitResult b = multi_start_fit(x, 3, 3, MissingnessKind::MNAR, cfg);
  EXPECT_EQ(a.elbo_trace, b.elbo_trace);
  EXPECT_EQ(a.params.pi, b.params.pi);
}

TEST(MultiStart, BeatsEveryWarmupCandidate) {
  const ObservedMatrix x = benchmark_matrix(30, 0.3, 7);
  FitConfig cfg = quick();
  cfg.n_inits = 4;
  cfg.warmup_iters = 5;
  const FitResult r = multi_start_fit(x, 3, 3, MissingnessKind::MAR, cfg);
  expect_monotone(r.elbo_trace);
  FitConfig one = cfg;
  one.n_inits = 1;
  one.max_vem_iters = 5;
  EXPECT_GE(r.elbo(), fit(x, 3, 3, MissingnessKind::MAR, one).elbo());
}

TEST(MultiStart, ThreadCountDoesNotChangeResult) {
  const ObservedMatrix x = benchmark_matrix(25, 0.25, 2);
  FitConfig cfg = quick(30);
  cfg.n_inits = 3;
  cfg.warmup_iters = 3;
  const FitResult a = multi_start_fit(x, 2, 3, MissingnessKind::MNAR, cfg);
  cfg.threads = 3;
  const FitResult b = multi_start_fit(x, 2, 3, MissingnessKind::MNAR, cfg);
  EXPECT_EQ(a.elbo_trace, b.elbo_trace);
}

TEST(Divergence, DetectsRunawayVariances) {
  VariationalState g = VariationalState::uniform(3, 3, 1, 1, MissingnessKind::MNAR);
  ModelParams th;
  th.alpha_rows = th.alpha_cols = Vector::Ones(1);
  th.pi = Matrix::Constant(1, 1, 0.5);
  th.var_a = th.var_b = th.var_p = th.var_q = 1;
  EXPECT_FALSE(has_diverged(g, th));
  g.rho_b[1] = 2 * kDivergenceVariance;
  EXPECT_TRUE(has_diverged(g, th));
}
