#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "lbm/criterion.hpp"
#include "lbm/lbfgs.hpp"
#include "lbm/random.hpp"

namespace lbm {

struct OptimizerConfig {
  int max_inner_iters = 30;
  double gradient_tol = 1e-5;
  int history_size = 8;
};

/// How the VE-step updates the class memberships. FixedPoint applies the exact
/// mean-field update tau_iq ∝ alpha_q exp(dJ/dtau_iq); QuasiNewton runs L-BFGS
/// on the softmax logits jointly with the latents.
enum class TauUpdate { FixedPoint, QuasiNewton };

struct FitConfig {
  int max_vem_iters = 500;
  double elbo_rel_tol = 1e-6;
  OptimizerConfig optimizer;
  int n_inits = 1;
  int warmup_iters = 15;
  std::uint64_t seed = 0;
  bool deterministic = true;
  TauUpdate tau_update = TauUpdate::FixedPoint;
  int threads = 1;              // concurrent multi-start candidates; 0 reads THREADS
  double weight_floor = 1e-12;  // mean-field block weight below which missing cells are skipped while optimizing

  /// Throws std::invalid_argument when a count is < 1 or a tolerance is not positive.
  void validate() const;
};

struct FitResult {
  ModelParams params;
  VariationalState varstate;
  std::vector<double> elbo_trace;  // initial J, then one value after every VE and every M half-step
  bool converged = false;
  int n_iters = 0;
  std::uint64_t seed = 0;
  bool degenerate = false;  // all-Missing input
  bool diverged = false;    // stopped after a step ran into the unbounded regime of the criterion
  std::size_t guard_hits = 0;

  double elbo() const { return elbo_trace.empty() ? 0.0 : elbo_trace.back(); }
};

struct StepReport {
  bool converged = true;  // every inner solve reached its tolerance
  int inner_iterations = 0;
};

/// Maximizes J over gamma with theta fixed.
VariationalState ve_step(const Criterion& crit, const ModelParams& params, const VariationalState& gamma,
                         const FitConfig& cfg, StepReport* report = nullptr);
VariationalState ve_step(const ObservedMatrix& x, const ModelParams& params, const VariationalState& gamma,
                         const FitConfig& cfg);

/// Maximizes J over theta with gamma fixed: alpha and the variances in closed
/// form, (pi, mu) by L-BFGS.
ModelParams m_step(const Criterion& crit, const VariationalState& gamma, const ModelParams& params,
                   const FitConfig& cfg, StepReport* report = nullptr);
ModelParams m_step(const ObservedMatrix& x, const VariationalState& gamma, const ModelParams& params,
                   const FitConfig& cfg);

struct Initialization {
  ModelParams params;
  VariationalState gamma;
};

/// Parameters and memberships implied by hard labels: alpha from class
/// counts, pi from smoothed observed block means, logistic(mu) = observed
/// rate, variances drawn from U(0, 1]. Returns the MNAR-kind initialization.
Initialization init_from_labels(const ObservedMatrix& x, const Labels& rows, const Labels& cols, int nq, int nl,
                                Rng& rng);

/// Double spectral initialization.
Initialization init_spectral(const ObservedMatrix& x, int nq, int nl, std::uint64_t seed);

/// Restricts an initialization to the latent blocks and variances of `kind`.
Initialization restrict_to_kind(Initialization init, MissingnessKind kind);

/// Resumable VEM loop over one candidate.
class VemRun {
 public:
  VemRun(std::shared_ptr<const Criterion> crit, ModelParams params, VariationalState gamma, FitConfig cfg);

  /// Runs up to `iterations` further VE+M iterations, stopping early on convergence.
  void advance(int iterations);

  double elbo() const { return trace_.back(); }
  bool converged() const { return converged_; }
  bool diverged() const { return diverged_; }
  int iterations() const { return iters_; }
  FitResult result() const;

 private:
  std::shared_ptr<const Criterion> crit_;
  ModelParams params_;
  VariationalState gamma_;
  FitConfig cfg_;
  std::vector<double> trace_;
  int iters_ = 0;
  bool converged_ = false;
  bool diverged_ = false;
};

/// The delta-method criterion is unbounded above when propensity variances
/// grow without limit; a state with any rho or sigma^2 above this is treated
/// as diverged.
inline constexpr double kDivergenceVariance = 1e4;

bool has_diverged(const VariationalState& gamma, const ModelParams& params);

/// Validates the arguments of fit / multi_start_fit.
void check_fit_arguments(const ObservedMatrix& x, int nq, int nl);

FitResult fit(const ObservedMatrix& x, int nq, int nl, MissingnessKind kind, const FitConfig& cfg);

/// Warm-up from one spectral and n_inits - 1 perturbed or random
/// initializations, then continues the best candidate.
FitResult multi_start_fit(const ObservedMatrix& x, int nq, int nl, MissingnessKind kind, const FitConfig& cfg);

/// Worker count from cfg.threads, or THREADS when it is 0.
int resolve_threads(int requested);

}  // namespace lbm
