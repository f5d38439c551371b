#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "lbm/model.hpp"

namespace lbm {

/// Propensity parameters (mu and the four latent variances).
struct MnarEffects {
  double mu = 1.0;
  double var_a = 1.0;
  double var_b = 1.0;
  double var_p = 1.0;
  double var_q = 1.0;
};

struct BenchmarkConfig {
  double epsilon = 0.1;
  int n_rows = 100;
  int n_cols = 100;
  MnarEffects mnar;
};

/// Draws labels, latents, the complete matrix and the mask. The random stream
/// is consumed identically for every parameter value, so two calls with the
/// same seed share their uniforms (common random numbers).
CompleteSample sample_lbm(const ModelParams& params, int n_rows, int n_cols, std::uint64_t seed);

/// Three classes on each side, uniform proportions and the pi pattern
/// (e,e,1-e) / (e,1-e,1-e) / (1-e,1-e,e). The kind is the smallest one
/// carrying the nonzero variances. Throws std::domain_error unless 0 < e < 0.5.
ModelParams make_benchmark_params(double epsilon, const MnarEffects& mnar = {});

enum class RiskMethod { Auto, Exact, Variational };

struct RiskConfig {
  int max_iters = 200;
  double rel_tol = 1e-6;
  RiskMethod method = RiskMethod::Auto;
  std::uint64_t seed = 0;
};

struct RiskResult {
  double risk = 0.0;
  bool converged = true;
  bool exact = false;
  int iterations = 0;
  std::string diagnostic;
};

/// Largest label-configuration count handled by exact enumeration.
inline constexpr double kExactRiskLimit = 1048576.0;  // 2^20

/// Expected l_item of the MAP classifier given the observed matrix, with the
/// parameters fixed at the truth. Exact enumeration is used for MCAR/MAR when
/// nq^n1 * nl^n2 <= 2^20 (Auto), otherwise a variational E-step.
RiskResult conditional_bayes_risk(const ObservedMatrix& x, const ModelParams& true_params,
                                  const RiskConfig& config = {});

class CalibrationError : public std::runtime_error {
 public:
  CalibrationError(const std::string& what, double lo, double hi, double risk_lo, double risk_hi)
      : std::runtime_error(what), lo_(lo), hi_(hi), risk_lo_(risk_lo), risk_hi_(risk_hi) {}
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double risk_lo() const { return risk_lo_; }
  double risk_hi() const { return risk_hi_; }

 private:
  double lo_, hi_, risk_lo_, risk_hi_;
};

struct CalibrationConfig {
  int n_seeds = 5;
  double tol = 0.005;
  double lo = 0.01;
  double hi = 0.49;
  int max_bisections = 40;
  RiskConfig risk;
};

struct CalibrationResult {
  double epsilon = 0.0;
  double median_risk = 0.0;
  int probes = 0;
};

/// Median conditional Bayes risk of the benchmark at epsilon over `n_seeds` matrices.
double median_benchmark_risk(double epsilon, int n_rows, int n_cols, const MnarEffects& mnar, std::uint64_t seed,
                             const CalibrationConfig& config);

/// Bisection on epsilon until the median risk is within tol of the target.
CalibrationResult calibrate_epsilon(double target_risk, int n_rows, int n_cols, const MnarEffects& mnar,
                                    std::uint64_t seed, const CalibrationConfig& config = {});

}  // namespace lbm
