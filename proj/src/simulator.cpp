#include "lbm/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lbm/criterion.hpp"
#include "lbm/inference.hpp"
#include "lbm/random.hpp"
#include "lbm/spectral.hpp"

namespace lbm {

namespace {

constexpr double kTinyVariance = 1e-12;

int draw_class(const Vector& alpha, double u) {
  double acc = 0.0;
  for (Eigen::Index k = 0; k + 1 < alpha.size(); ++k) {
    acc += alpha[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(alpha.size() - 1);
}

MissingnessKind minimal_kind(double var_a, double var_b, double var_p, double var_q) {
  if (var_b > 0.0 || var_q > 0.0) return MissingnessKind::MNAR;
  if (var_a > 0.0 || var_p > 0.0) return MissingnessKind::MAR;
  return MissingnessKind::MCAR;
}

/// Truth parameters as used by the E-step: the smallest kind that carries the
/// nonzero variances, with any zero variance inside it lifted to a tiny value.
ModelParams effective_truth(const ModelParams& truth) {
  const MissingnessKind kind = std::min(truth.kind, minimal_kind(truth.var_a, truth.var_b, truth.var_p, truth.var_q));
  ModelParams p = truth.with_kind(kind);
  if (has_mar_effects(kind)) {
    p.var_a = std::max(p.var_a, kTinyVariance);
    p.var_p = std::max(p.var_p, kTinyVariance);
  }
  if (has_mnar_effects(kind)) {
    p.var_b = std::max(p.var_b, kTinyVariance);
    p.var_q = std::max(p.var_q, kTinyVariance);
  }
  return p;
}

double combine(double r, double c) { return r + c - r * c; }

RiskResult exact_risk(const ObservedMatrix& x, const ModelParams& p) {
  const int n1 = static_cast<int>(x.rows());
  const int n2 = static_cast<int>(x.cols());
  const int nq = p.nq();
  const int nl = p.nl();
  const auto n_row_cfg = static_cast<std::size_t>(std::llround(std::pow(nq, n1)));
  const auto n_col_cfg = static_cast<std::size_t>(std::llround(std::pow(nl, n2)));

  auto decode = [](std::size_t index, int base, int n, Labels& out) {
    for (int k = 0; k < n; ++k) {
      out[k] = static_cast<int>(index % base);
      index /= base;
    }
  };

  Matrix log_pi(nq, nl), log_1mpi(nq, nl);
  for (int q = 0; q < nq; ++q) {
    for (int l = 0; l < nl; ++l) {
      const double v = clamp_probability(p.pi(q, l));
      log_pi(q, l) = std::log(v);
      log_1mpi(q, l) = std::log1p(-v);
    }
  }

  std::vector<Labels> rows(n_row_cfg, Labels(n1)), cols(n_col_cfg, Labels(n2));
  std::vector<double> row_prior(n_row_cfg, 0.0), col_prior(n_col_cfg, 0.0);
  for (std::size_t r = 0; r < n_row_cfg; ++r) {
    decode(r, nq, n1, rows[r]);
    for (int i = 0; i < n1; ++i) row_prior[r] += std::log(p.alpha_rows[rows[r][i]]);
  }
  for (std::size_t c = 0; c < n_col_cfg; ++c) {
    decode(c, nl, n2, cols[c]);
    for (int j = 0; j < n2; ++j) col_prior[c] += std::log(p.alpha_cols[cols[c][j]]);
  }

  std::vector<double> logw(n_row_cfg * n_col_cfg);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < n_row_cfg; ++r) {
    for (std::size_t c = 0; c < n_col_cfg; ++c) {
      double w = row_prior[r] + col_prior[c];
      for (int i = 0; i < n1; ++i) {
        for (int j = 0; j < n2; ++j) {
          const Cell cell = x(i, j);
          if (cell == Cell::One) w += log_pi(rows[r][i], cols[c][j]);
          else if (cell == Cell::Zero) w += log_1mpi(rows[r][i], cols[c][j]);
        }
      }
      logw[r * n_col_cfg + c] = w;
      top = std::max(top, w);
    }
  }
  double z = 0.0;
  for (double& w : logw) {
    w = std::exp(w - top);
    z += w;
  }
  for (double& w : logw) w /= z;

  Matrix marg_rows = Matrix::Zero(n1, nq);
  Matrix marg_cols = Matrix::Zero(n2, nl);
  for (std::size_t r = 0; r < n_row_cfg; ++r) {
    for (std::size_t c = 0; c < n_col_cfg; ++c) {
      const double w = logw[r * n_col_cfg + c];
      for (int i = 0; i < n1; ++i) marg_rows(i, rows[r][i]) += w;
      for (int j = 0; j < n2; ++j) marg_cols(j, cols[c][j]) += w;
    }
  }
  Labels map_rows(n1), map_cols(n2);
  for (int i = 0; i < n1; ++i) marg_rows.row(i).maxCoeff(&map_rows[i]);
  for (int j = 0; j < n2; ++j) marg_cols.row(j).maxCoeff(&map_cols[j]);

  double risk = 0.0;
  for (std::size_t r = 0; r < n_row_cfg; ++r) {
    int row_err = 0;
    for (int i = 0; i < n1; ++i) row_err += rows[r][i] != map_rows[i];
    const double lr = static_cast<double>(row_err) / n1;
    for (std::size_t c = 0; c < n_col_cfg; ++c) {
      int col_err = 0;
      for (int j = 0; j < n2; ++j) col_err += cols[c][j] != map_cols[j];
      risk += logw[r * n_col_cfg + c] * combine(lr, static_cast<double>(col_err) / n2);
    }
  }
  RiskResult out;
  out.risk = std::clamp(risk, 0.0, 1.0);
  out.exact = true;
  return out;
}

VariationalState start_state(const Matrix& tau_rows, const Matrix& tau_cols, const ModelParams& p) {
  VariationalState g;
  g.tau_rows = tau_rows;
  g.tau_cols = tau_cols;
  const Eigen::Index n1 = tau_rows.rows();
  const Eigen::Index n2 = tau_cols.rows();
  if (has_mar_effects(p.kind)) {
    g.nu_a = Vector::Zero(n1);
    g.rho_a = Vector::Constant(n1, p.var_a);
    g.nu_p = Vector::Zero(n2);
    g.rho_p = Vector::Constant(n2, p.var_p);
  }
  if (has_mnar_effects(p.kind)) {
    g.nu_b = Vector::Zero(n1);
    g.rho_b = Vector::Constant(n1, p.var_b);
    g.nu_q = Vector::Zero(n2);
    g.rho_q = Vector::Constant(n2, p.var_q);
  }
  return g;
}

Matrix smoothed_tau(const Labels& labels, const std::vector<int>& perm, int k) {
  Matrix tau = Matrix::Constant(static_cast<Eigen::Index>(labels.size()), k, k > 1 ? 0.1 / (k - 1) : 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) tau(static_cast<Eigen::Index>(i), perm[labels[i]]) = k > 1 ? 0.9 : 1.0;
  return tau;
}

/// Spectral labels relabeled by the permutation pair that best explains the
/// observed cells under the true pi.
VariationalState aligned_spectral_start(const ObservedMatrix& x, const ModelParams& p, std::uint64_t seed) {
  const int nq = p.nq();
  const int nl = p.nl();
  const SpectralLabels s = spectral_labels(x, nq, nl, seed);
  Matrix ones = Matrix::Zero(nq, nl), zeros = Matrix::Zero(nq, nl);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (x(i, j) == Cell::One) ones(s.rows[i], s.cols[j]) += 1.0;
      if (x(i, j) == Cell::Zero) zeros(s.rows[i], s.cols[j]) += 1.0;
    }
  }
  std::vector<int> rp(nq), cp(nl);
  std::iota(rp.begin(), rp.end(), 0);
  std::vector<int> best_rp = rp, best_cp(nl);
  std::iota(best_cp.begin(), best_cp.end(), 0);
  double best = -std::numeric_limits<double>::infinity();
  do {
    std::iota(cp.begin(), cp.end(), 0);
    do {
      double score = 0.0;
      for (int q = 0; q < nq; ++q) {
        for (int l = 0; l < nl; ++l) {
          const double v = clamp_probability(p.pi(rp[q], cp[l]));
          score += ones(q, l) * std::log(v) + zeros(q, l) * std::log1p(-v);
        }
      }
      if (score > best) {
        best = score;
        best_rp = rp;
        best_cp = cp;
      }
    } while (std::next_permutation(cp.begin(), cp.end()));
  } while (std::next_permutation(rp.begin(), rp.end()));
  return start_state(smoothed_tau(s.rows, best_rp, nq), smoothed_tau(s.cols, best_cp, nl), p);
}

bool small_factorial_product(int nq, int nl) {
  auto fact = [](int n) {
    double f = 1.0;
    for (int k = 2; k <= n; ++k) f *= k;
    return f;
  };
  return fact(nq) * fact(nl) <= 40320.0;
}

RiskResult variational_risk(const ObservedMatrix& x, const ModelParams& p, const RiskConfig& config) {
  const Criterion crit(x);
  FitConfig fc;
  std::vector<VariationalState> starts;
  const Eigen::Index n1 = static_cast<Eigen::Index>(x.rows());
  const Eigen::Index n2 = static_cast<Eigen::Index>(x.cols());
  starts.push_back(start_state(Matrix(p.alpha_rows.transpose().replicate(n1, 1)),
                               Matrix(p.alpha_cols.transpose().replicate(n2, 1)), p));
  if (!x.all_missing() && small_factorial_product(p.nq(), p.nl()) && static_cast<int>(x.rows()) >= p.nq() &&
      static_cast<int>(x.cols()) >= p.nl())
    starts.push_back(aligned_spectral_start(x, p, config.seed));

  RiskResult out;
  double best_j = -std::numeric_limits<double>::infinity();
  VariationalState best;
  for (VariationalState g : starts) {
    double j = crit.value(g, p);
    bool converged = false;
    int it = 0;
    while (it < config.max_iters) {
      g = ve_step(crit, p, g, fc);
      const double next = crit.value(g, p);
      ++it;
      const bool done = std::abs(next - j) <= config.rel_tol * std::abs(next);
      j = next;
      if (done) {
        converged = true;
        break;
      }
    }
    if (j > best_j) {
      best_j = j;
      best = std::move(g);
      out.converged = converged;
      out.iterations = it;
    }
  }
  if (!out.converged)
    out.diagnostic = "E-step did not reach the relative tolerance within " + std::to_string(config.max_iters) +
                     " iterations; best-effort value";
  const double rr = 1.0 - best.tau_rows.rowwise().maxCoeff().mean();
  const double rc = 1.0 - best.tau_cols.rowwise().maxCoeff().mean();
  out.risk = std::clamp(combine(rr, rc), 0.0, 1.0);
  return out;
}

}  // namespace

CompleteSample sample_lbm(const ModelParams& params, int n_rows, int n_cols, std::uint64_t seed) {
  params.validate();
  if (n_rows < 1 || n_cols < 1) throw std::invalid_argument("sample_lbm: dimensions must be >= 1");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  CompleteSample s;
  s.row_labels.resize(n_rows);
  s.col_labels.resize(n_cols);
  for (auto& y : s.row_labels) y = draw_class(params.alpha_rows, uniform01(rng));
  for (auto& y : s.col_labels) y = draw_class(params.alpha_cols, uniform01(rng));
  auto latents = [&](Eigen::Index n, double var) {
    Vector v(n);
    const double sd = std::sqrt(var);
    for (Eigen::Index k = 0; k < n; ++k) v[k] = sd * normal(rng);
    return v;
  };
  s.a = latents(n_rows, params.var_a);
  s.b = latents(n_rows, params.var_b);
  s.p = latents(n_cols, params.var_p);
  s.q = latents(n_cols, params.var_q);

  s.x_complete.resize(n_rows, n_cols);
  s.mask.resize(n_rows, n_cols);
  s.x_observed = ObservedMatrix(n_rows, n_cols);
  for (int i = 0; i < n_rows; ++i) {
    for (int j = 0; j < n_cols; ++j) {
      const double u_value = uniform01(rng);
      const double u_mask = uniform01(rng);
      const bool one = u_value < params.pi(s.row_labels[i], s.col_labels[j]);
      const double y = s.b[i] + s.q[j];
      const double z = params.mu + s.a[i] + s.p[j] + (one ? y : -y);
      const bool observed = u_mask < logistic(z);
      s.x_complete(i, j) = one ? 1 : 0;
      s.mask(i, j) = observed ? 1 : 0;
      s.x_observed.set(i, j, observed ? (one ? Cell::One : Cell::Zero) : Cell::Missing);
    }
  }
  return s;
}

ModelParams make_benchmark_params(double epsilon, const MnarEffects& mnar) {
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw std::domain_error("make_benchmark_params: epsilon must lie in (0, 0.5)");
  ModelParams p;
  p.kind = minimal_kind(mnar.var_a, mnar.var_b, mnar.var_p, mnar.var_q);
  p.alpha_rows = Vector::Constant(3, 1.0 / 3.0);
  p.alpha_cols = Vector::Constant(3, 1.0 / 3.0);
  const double e = epsilon;
  const double f = 1.0 - epsilon;
  p.pi.resize(3, 3);
  p.pi << e, e, f,  //
      e, f, f,      //
      f, f, e;
  p.mu = mnar.mu;
  p.var_a = mnar.var_a;
  p.var_b = mnar.var_b;
  p.var_p = mnar.var_p;
  p.var_q = mnar.var_q;
  p.validate();
  return p;
}

RiskResult conditional_bayes_risk(const ObservedMatrix& x, const ModelParams& true_params, const RiskConfig& config) {
  true_params.validate();
  if (config.max_iters < 1 || !(config.rel_tol > 0.0)) throw std::invalid_argument("RiskConfig: invalid settings");
  const ModelParams p = effective_truth(true_params);
  const double configs =
      std::pow(static_cast<double>(p.nq()), static_cast<double>(x.rows())) *
      std::pow(static_cast<double>(p.nl()), static_cast<double>(x.cols()));
  const bool exact_ok = !has_mnar_effects(p.kind) && configs <= kExactRiskLimit;
  switch (config.method) {
    case RiskMethod::Exact:
      if (!exact_ok)
        throw std::invalid_argument("conditional_bayes_risk: exact enumeration needs MCAR/MAR and at most 2^20 "
                                    "label configurations");
      return exact_risk(x, p);
    case RiskMethod::Auto:
      if (exact_ok) return exact_risk(x, p);
      return variational_risk(x, p, config);
    case RiskMethod::Variational:
      return variational_risk(x, p, config);
  }
  return variational_risk(x, p, config);
}

double median_benchmark_risk(double epsilon, int n_rows, int n_cols, const MnarEffects& mnar, std::uint64_t seed,
                             const CalibrationConfig& config) {
  const ModelParams p = make_benchmark_params(epsilon, mnar);
  std::vector<double> risks;
  for (int k = 0; k < config.n_seeds; ++k) {
    const CompleteSample s = sample_lbm(p, n_rows, n_cols, derive_seed(seed, static_cast<std::uint64_t>(k)));
    RiskConfig rc = config.risk;
    rc.seed = derive_seed(seed, 10000 + static_cast<std::uint64_t>(k));
    risks.push_back(conditional_bayes_risk(s.x_observed, p, rc).risk);
  }
  std::sort(risks.begin(), risks.end());
  const std::size_t n = risks.size();
  return n % 2 == 1 ? risks[n / 2] : 0.5 * (risks[n / 2 - 1] + risks[n / 2]);
}

CalibrationResult calibrate_epsilon(double target_risk, int n_rows, int n_cols, const MnarEffects& mnar,
                                    std::uint64_t seed, const CalibrationConfig& config) {
  if (config.n_seeds < 1 || !(config.tol > 0.0) || !(config.lo < config.hi))
    throw std::invalid_argument("calibrate_epsilon: invalid configuration");
  double lo = config.lo;
  double hi = config.hi;
  if (!(target_risk > 0.0 && target_risk < 8.0 / 9.0))
    throw CalibrationError("calibrate_epsilon: target risk must lie in (0, 8/9)", lo, hi,
                           std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN());
  CalibrationResult out;
  auto risk_at = [&](double eps) {
    ++out.probes;
    return median_benchmark_risk(eps, n_rows, n_cols, mnar, seed, config);
  };
  double r_lo = risk_at(lo);
  double r_hi = risk_at(hi);
  if (std::abs(r_lo - target_risk) <= config.tol) return {lo, r_lo, out.probes};
  if (std::abs(r_hi - target_risk) <= config.tol) return {hi, r_hi, out.probes};
  if (target_risk < r_lo || target_risk > r_hi)
    throw CalibrationError("calibrate_epsilon: target risk is outside the risk range of the bracket", lo, hi, r_lo,
                           r_hi);
  double best_eps = lo;
  double best_risk = r_lo;
  for (int k = 0; k < config.max_bisections; ++k) {
    const double mid = 0.5 * (lo + hi);
    const double r = risk_at(mid);
    if (std::abs(r - target_risk) < std::abs(best_risk - target_risk)) {
      best_eps = mid;
      best_risk = r;
    }
    if (std::abs(r - target_risk) <= config.tol) return {mid, r, out.probes};
    if (r < target_risk) {
      lo = mid;
      r_lo = r;
    } else {
      hi = mid;
      r_hi = r;
    }
  }
  throw CalibrationError("calibrate_epsilon: bisection did not reach the tolerance (closest epsilon " +
                             std::to_string(best_eps) + ", risk " + std::to_string(best_risk) + ")",
                         lo, hi, r_lo, r_hi);
}

}  // namespace lbm
