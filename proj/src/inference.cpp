#include "lbm/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>

#include "lbm/parametrization.hpp"
#include "lbm/spectral.hpp"

namespace lbm {

namespace {

constexpr double kTauSmoothing = 0.9;
constexpr double kAlphaFloor = 1e-12;
constexpr double kVarianceFloor = 1e-10;
constexpr double kTauLogFloor = 1e-300;
constexpr double kPerturbFraction = 0.3;

LbfgsOptions lbfgs_options(const FitConfig& cfg) {
  LbfgsOptions o;
  o.max_iterations = cfg.optimizer.max_inner_iters;
  o.gradient_tol = cfg.optimizer.gradient_tol;
  o.history = cfg.optimizer.history_size;
  return o;
}

void note(StepReport* report, const LbfgsResult& r) {
  if (!report) return;
  report->inner_iterations += r.iterations;
  if (r.status != LbfgsStatus::Converged) report->converged = false;
}

/// In-place mean-field update of one side's memberships.
void fixed_point_rows(Matrix& tau, const Matrix& grad) {
  for (Eigen::Index i = 0; i < tau.rows(); ++i) {
    Vector logits = grad.row(i).transpose();
    for (Eigen::Index q = 0; q < tau.cols(); ++q) logits[q] += std::log(std::max(tau(i, q), kTauLogFloor));
    const double top = logits.maxCoeff();
    Vector w = (logits.array() - top).exp();
    tau.row(i) = (w / w.sum()).transpose();
  }
}

Vector normalized_floor(Vector mass) {
  mass = mass.cwiseMax(kAlphaFloor);
  return mass / mass.sum();
}

double closed_form_variance(const Vector& nu, const Vector& rho) {
  return std::max((nu.squaredNorm() + rho.sum()) / static_cast<double>(nu.size()), kVarianceFloor);
}

/// The data term sees the A/P means only through mu + nu_a + nu_p and the B/Q
/// means only through nu_b + nu_q. Moving along those directions to the
/// minimum of the prior penalty raises J without touching the data term; left
/// to the gradient steps this drift is very slow on large matrices.
void recenter(VariationalState& g, ModelParams& p) {
  if (has_mar_effects(p.kind)) {
    const double sa = g.nu_a.mean(), sp = g.nu_p.mean();
    g.nu_a.array() -= sa;
    g.nu_p.array() -= sp;
    p.mu += sa + sp;
  }
  if (has_mnar_effects(p.kind)) {
    const double wb = 1 / p.var_b, wq = 1 / p.var_q;
    const double s = (wb * g.nu_b.sum() - wq * g.nu_q.sum()) /
                     (wb * static_cast<double>(g.nu_b.size()) + wq * static_cast<double>(g.nu_q.size()));
    g.nu_b.array() -= s;
    g.nu_q.array() += s;
  }
}

Labels random_labels(std::size_t n, int k, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, k - 1);
  Labels out(n);
  for (auto& l : out) l = pick(rng);
  return out;
}

void perturb_labels(Labels& labels, int k, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, k - 1);
  for (auto& l : labels)
    if (uniform01(rng) < kPerturbFraction) l = pick(rng);
}

}  // namespace

void FitConfig::validate() const {
  if (max_vem_iters < 1 || n_inits < 1 || warmup_iters < 1 || optimizer.max_inner_iters < 1 ||
      optimizer.history_size < 1 || threads < 0)
    throw std::invalid_argument("FitConfig: counts must be >= 1");
  if (!(elbo_rel_tol > 0.0) || !(optimizer.gradient_tol > 0.0))
    throw std::invalid_argument("FitConfig: tolerances must be positive");
  if (!(weight_floor >= 0.0)) throw std::invalid_argument("FitConfig: weight_floor must be >= 0");
}

VariationalState ve_step(const Criterion& crit, const ModelParams& params, const VariationalState& gamma,
                         const FitConfig& cfg, StepReport* report) {
  VariationalState g = gamma;
  const double floor = cfg.weight_floor;

  if (cfg.tau_update == TauUpdate::FixedPoint) {
    ElboGradient grad;
    GradientRequest rows;
    rows.tau_rows = true;
    crit.evaluate(g, params, rows, &grad, floor);
    fixed_point_rows(g.tau_rows, grad.tau_rows);
    GradientRequest cols;
    cols.tau_cols = true;
    crit.evaluate(g, params, cols, &grad, floor);
    fixed_point_rows(g.tau_cols, grad.tau_cols);
  }

  GammaLayout layout;
  layout.tau = cfg.tau_update == TauUpdate::QuasiNewton;
  layout.latents = g.has_mar_effects();
  if (!layout.tau && !layout.latents) return g;

  GradientRequest req;
  req.tau_rows = req.tau_cols = layout.tau;
  req.latents = layout.latents;
  VariationalState work = g;
  const Objective objective = [&](const Vector& z, Vector& out) {
    unpack_gamma(z, layout, work);
    ElboGradient grad;
    const double j = crit.evaluate(work, params, req, &grad, floor);
    out = -gamma_gradient(grad, work, layout);
    return -j;
  };
  const LbfgsResult r = minimize_lbfgs(objective, pack_gamma(g, layout), lbfgs_options(cfg));
  note(report, r);
  unpack_gamma(r.x, layout, g);
  return g;
}

VariationalState ve_step(const ObservedMatrix& x, const ModelParams& params, const VariationalState& gamma,
                         const FitConfig& cfg) {
  return ve_step(Criterion(x), params, gamma, cfg);
}

ModelParams m_step(const Criterion& crit, const VariationalState& gamma, const ModelParams& params,
                   const FitConfig& cfg, StepReport* report) {
  ModelParams p = params;
  p.alpha_rows = normalized_floor(gamma.tau_rows.colwise().sum().transpose());
  p.alpha_cols = normalized_floor(gamma.tau_cols.colwise().sum().transpose());
  if (has_mar_effects(p.kind)) {
    p.var_a = closed_form_variance(gamma.nu_a, gamma.rho_a);
    p.var_p = closed_form_variance(gamma.nu_p, gamma.rho_p);
  }
  if (has_mnar_effects(p.kind)) {
    p.var_b = closed_form_variance(gamma.nu_b, gamma.rho_b);
    p.var_q = closed_form_variance(gamma.nu_q, gamma.rho_q);
  }

  ThetaLayout layout;
  layout.alpha = false;
  layout.variances = false;
  GradientRequest req;
  req.theta = true;
  ModelParams work = p;
  const Objective objective = [&](const Vector& z, Vector& out) {
    unpack_theta(z, layout, work);
    ElboGradient grad;
    const double j = crit.evaluate(gamma, work, req, &grad, cfg.weight_floor);
    out = -theta_gradient(grad, work, layout);
    return -j;
  };
  const LbfgsResult r = minimize_lbfgs(objective, pack_theta(p, layout), lbfgs_options(cfg));
  note(report, r);
  unpack_theta(r.x, layout, p);
  return p;
}

ModelParams m_step(const ObservedMatrix& x, const VariationalState& gamma, const ModelParams& params,
                   const FitConfig& cfg) {
  return m_step(Criterion(x), gamma, params, cfg);
}

Initialization init_from_labels(const ObservedMatrix& x, const Labels& rows, const Labels& cols, int nq, int nl,
                                Rng& rng) {
  const auto n1 = static_cast<Eigen::Index>(x.rows());
  const auto n2 = static_cast<Eigen::Index>(x.cols());
  if (static_cast<Eigen::Index>(rows.size()) != n1 || static_cast<Eigen::Index>(cols.size()) != n2)
    throw std::invalid_argument("init_from_labels: label count does not match the matrix");

  Initialization init;
  ModelParams& p = init.params;
  p.kind = MissingnessKind::MNAR;

  Vector row_counts = Vector::Zero(nq);
  Vector col_counts = Vector::Zero(nl);
  for (int r : rows) row_counts[r] += 1.0;
  for (int c : cols) col_counts[c] += 1.0;
  p.alpha_rows = (row_counts.array() + 1.0) / (static_cast<double>(n1) + nq);
  p.alpha_cols = (col_counts.array() + 1.0) / (static_cast<double>(n2) + nl);

  Matrix ones = Matrix::Zero(nq, nl);
  Matrix observed = Matrix::Zero(nq, nl);
  for (Eigen::Index i = 0; i < n1; ++i) {
    for (Eigen::Index j = 0; j < n2; ++j) {
      const Cell c = x(i, j);
      if (c == Cell::Missing) continue;
      observed(rows[i], cols[j]) += 1.0;
      if (c == Cell::One) ones(rows[i], cols[j]) += 1.0;
    }
  }
  p.pi = (ones.array() + 1.0) / (observed.array() + 2.0);

  const double total = static_cast<double>(x.size());
  const double rate = std::clamp(1.0 - x.missing_fraction(), 0.5 / total, 1.0 - 0.5 / total);
  p.mu = std::log(rate) - std::log1p(-rate);

  auto draw = [&] { return 1.0 - uniform01(rng); };
  p.var_a = draw();
  p.var_b = draw();
  p.var_p = draw();
  p.var_q = draw();

  VariationalState& g = init.gamma;
  auto smoothed = [](const Labels& labels, int k) {
    Matrix tau(static_cast<Eigen::Index>(labels.size()), k);
    const double rest = k > 1 ? (1.0 - kTauSmoothing) / (k - 1) : 0.0;
    tau.setConstant(rest);
    for (std::size_t i = 0; i < labels.size(); ++i) tau(static_cast<Eigen::Index>(i), labels[i]) = k > 1 ? kTauSmoothing : 1.0;
    return tau;
  };
  g.tau_rows = smoothed(rows, nq);
  g.tau_cols = smoothed(cols, nl);
  g.nu_a = g.nu_b = Vector::Zero(n1);
  g.nu_p = g.nu_q = Vector::Zero(n2);
  g.rho_a = Vector::Constant(n1, p.var_a);
  g.rho_b = Vector::Constant(n1, p.var_b);
  g.rho_p = Vector::Constant(n2, p.var_p);
  g.rho_q = Vector::Constant(n2, p.var_q);
  return init;
}

Initialization init_spectral(const ObservedMatrix& x, int nq, int nl, std::uint64_t seed) {
  check_fit_arguments(x, nq, nl);
  if (x.all_missing()) throw std::invalid_argument("init_spectral: matrix is entirely missing");
  const SpectralLabels labels = spectral_labels(x, nq, nl, derive_seed(seed, 0));
  Rng rng(derive_seed(seed, 1));
  return init_from_labels(x, labels.rows, labels.cols, nq, nl, rng);
}

Initialization restrict_to_kind(Initialization init, MissingnessKind kind) {
  init.params = init.params.with_kind(kind);
  VariationalState& g = init.gamma;
  if (!has_mnar_effects(kind)) g.nu_b = g.rho_b = g.nu_q = g.rho_q = Vector();
  if (!has_mar_effects(kind)) g.nu_a = g.rho_a = g.nu_p = g.rho_p = Vector();
  return init;
}

VemRun::VemRun(std::shared_ptr<const Criterion> crit, ModelParams params, VariationalState gamma, FitConfig cfg)
    : crit_(std::move(crit)), params_(std::move(params)), gamma_(std::move(gamma)), cfg_(std::move(cfg)) {
  cfg_.validate();
  params_.validate();
  gamma_.validate();
  trace_.push_back(crit_->value(gamma_, params_));
}

bool has_diverged(const VariationalState& gamma, const ModelParams& params) {
  for (const Vector* rho : {&gamma.rho_a, &gamma.rho_b, &gamma.rho_p, &gamma.rho_q})
    if (rho->size() > 0 && !(rho->maxCoeff() <= kDivergenceVariance)) return true;
  for (double v : {params.var_a, params.var_b, params.var_p, params.var_q})
    if (!(v <= kDivergenceVariance)) return true;
  return false;
}

void VemRun::advance(int iterations) {
  for (int k = 0; k < iterations && !converged_ && !diverged_; ++k) {
    const double start = trace_.back();

    VariationalState g = ve_step(*crit_, params_, gamma_, cfg_);
    double j = crit_->value(g, params_);
    if (!std::isfinite(j) || has_diverged(g, params_)) {
      diverged_ = true;
      break;
    }
    // A half-step that lowers the exact J (possible only through the pruned
    // weights used while optimizing) is rejected.
    if (j >= trace_.back()) {
      gamma_ = std::move(g);
      trace_.push_back(j);
    } else {
      trace_.push_back(trace_.back());
    }

    VariationalState centered = gamma_;
    ModelParams p = params_;
    recenter(centered, p);
    p = m_step(*crit_, centered, p, cfg_);
    j = crit_->value(centered, p);
    if (!std::isfinite(j) || has_diverged(centered, p)) {
      diverged_ = true;
      break;
    }
    if (j >= trace_.back()) {
      gamma_ = std::move(centered);
      params_ = std::move(p);
      trace_.push_back(j);
    } else {
      trace_.push_back(trace_.back());
    }

    ++iters_;
    const double end = trace_.back();
    if (std::abs(end - start) <= cfg_.elbo_rel_tol * std::abs(end)) converged_ = true;
  }
}

FitResult VemRun::result() const {
  FitResult r;
  r.params = params_;
  r.varstate = gamma_;
  r.elbo_trace = trace_;
  r.converged = converged_;
  r.diverged = diverged_;
  r.n_iters = iters_;
  r.seed = cfg_.seed;
  crit_->evaluate(gamma_, params_, GradientRequest{}, nullptr, 0.0, &r.guard_hits);
  return r;
}

void check_fit_arguments(const ObservedMatrix& x, int nq, int nl) {
  if (x.rows() == 0 || x.cols() == 0) throw std::invalid_argument("fit: empty matrix");
  if (nq < 1 || nl < 1) throw std::invalid_argument("fit: class counts must be >= 1");
  if (static_cast<std::size_t>(nq) > x.rows() || static_cast<std::size_t>(nl) > x.cols())
    throw std::invalid_argument("fit: class count exceeds the matrix dimension (nq=" + std::to_string(nq) +
                                ", nl=" + std::to_string(nl) + ", matrix " + std::to_string(x.rows()) + "x" +
                                std::to_string(x.cols()) + ")");
}

namespace {

/// Initialization of multi-start candidate `index`; candidate 0 is the plain
/// spectral start used by fit().
Initialization candidate_init(const ObservedMatrix& x, int nq, int nl, std::uint64_t seed, int index,
                              const SpectralLabels* spectral) {
  if (x.all_missing()) {
    Rng rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(index)));
    const Labels rows = random_labels(x.rows(), nq, rng);
    const Labels cols = random_labels(x.cols(), nl, rng);
    return init_from_labels(x, rows, cols, nq, nl, rng);
  }
  if (index == 0) return init_spectral(x, nq, nl, seed);
  Rng rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(index)));
  Labels rows, cols;
  if (index % 2 == 1) {
    rows = spectral->rows;
    cols = spectral->cols;
    perturb_labels(rows, nq, rng);
    perturb_labels(cols, nl, rng);
  } else {
    rows = random_labels(x.rows(), nq, rng);
    cols = random_labels(x.cols(), nl, rng);
  }
  return init_from_labels(x, rows, cols, nq, nl, rng);
}

}  // namespace

FitResult fit(const ObservedMatrix& x, int nq, int nl, MissingnessKind kind, const FitConfig& cfg) {
  check_fit_arguments(x, nq, nl);
  cfg.validate();
  Initialization init = restrict_to_kind(candidate_init(x, nq, nl, cfg.seed, 0, nullptr), kind);
  VemRun run(std::make_shared<const Criterion>(x), std::move(init.params), std::move(init.gamma), cfg);
  run.advance(cfg.max_vem_iters);
  FitResult r = run.result();
  r.degenerate = x.all_missing();
  return r;
}

FitResult multi_start_fit(const ObservedMatrix& x, int nq, int nl, MissingnessKind kind, const FitConfig& cfg) {
  check_fit_arguments(x, nq, nl);
  cfg.validate();
  const auto crit = std::make_shared<const Criterion>(x);
  const int n = cfg.n_inits;
  const int warmup = std::min(cfg.warmup_iters, cfg.max_vem_iters);

  SpectralLabels spectral;
  if (n > 1 && !x.all_missing()) spectral = spectral_labels(x, nq, nl, derive_seed(cfg.seed, 0));

  std::vector<std::unique_ptr<VemRun>> runs(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int c = next++; c < n; c = next++) {
      try {
        Initialization init = restrict_to_kind(candidate_init(x, nq, nl, cfg.seed, c, &spectral), kind);
        auto run = std::make_unique<VemRun>(crit, std::move(init.params), std::move(init.gamma), cfg);
        run->advance(warmup);
        runs[c] = std::move(run);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const int workers = std::min(resolve_threads(cfg.threads), n);
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // Diverged candidates only compete when every candidate diverged.
  int best = -1;
  for (int c = 0; c < n; ++c) {
    if (!runs[c]) continue;
    if (best < 0) {
      best = c;
      continue;
    }
    const bool cd = runs[c]->diverged();
    const bool bd = runs[best]->diverged();
    if (cd != bd ? bd : runs[c]->elbo() > runs[best]->elbo()) best = c;
  }
  if (best < 0) std::rethrow_exception(errors[0]);

  VemRun& chosen = *runs[best];
  chosen.advance(cfg.max_vem_iters - warmup);
  FitResult r = chosen.result();
  r.degenerate = x.all_missing();
  return r;
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return v;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

}  // namespace lbm
