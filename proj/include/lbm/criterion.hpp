#pragma once

#include <atomic>
#include <cstddef>

#include "lbm/model.hpp"

namespace lbm {

/// Mean-field posterior: multinomial class memberships and independent Gaussian
/// propensity latents. Latent blocks the kind does not carry are empty vectors.
struct VariationalState {
  Matrix tau_rows;  // n_rows x nq
  Matrix tau_cols;  // n_cols x nl
  Vector nu_a, rho_a, nu_b, rho_b;  // length n_rows, or empty
  Vector nu_p, rho_p, nu_q, rho_q;  // length n_cols, or empty

  int n_rows() const { return static_cast<int>(tau_rows.rows()); }
  int n_cols() const { return static_cast<int>(tau_cols.rows()); }
  int nq() const { return static_cast<int>(tau_rows.cols()); }
  int nl() const { return static_cast<int>(tau_cols.cols()); }
  bool has_mar_effects() const { return nu_a.size() > 0; }
  bool has_mnar_effects() const { return nu_b.size() > 0; }

  /// Uniform memberships, zero means and unit variances for the latents of `kind`.
  static VariationalState uniform(int n_rows, int n_cols, int nq, int nl, MissingnessKind kind);

  /// Throws std::invalid_argument on a malformed state.
  void validate() const;
};

/// Entropy of the mean-field distribution (0 log 0 = 0).
double entropy(const VariationalState& gamma);

/// Second-order delta-method approximation of E[f(X, Y)] for one cell kind,
/// with its partial derivatives. X = A_i + P_j, Y = B_i + Q_j; d_mean_x is also
/// the derivative with respect to mu.
struct DeltaTerm {
  double value = 0.0;
  double d_pi = 0.0;
  double d_mean_x = 0.0;
  double d_mean_y = 0.0;
  double d_var_x = 0.0;
  double d_var_y = 0.0;
};

/// Missing-cell probabilities below this floor are counted as guard hits. The
/// log itself is taken in log space, so the value stays finite and exact.
inline constexpr double kMissingLogFloor = 1e-300;

/// The plain second-order expansion of a missing cell is unbounded above in the
/// latent variances: log(1 - p0 - p1) is convex in y wherever logistic(mu + x) > 1/2,
/// so J grows linearly in rho_B + rho_Q. Inside J the curvature terms of missing
/// cells therefore use the effective variance c v / (c + v) with this c, which
/// matches the expansion to O(v^2 / c) for small v and keeps J bounded.
inline constexpr double kMissingCurvatureScale = 4.0;

/// The plain expansion, without damping.
DeltaTerm delta_term(Cell kind, double pi_ql, double mu, double mean_x, double var_x, double mean_y, double var_y,
                     std::size_t* guard_hits = nullptr);

double delta_expectation(Cell kind, double pi_ql, double mu, double mean_x, double var_x, double mean_y,
                         double var_y);

/// Per-term breakdown of the criterion J.
struct ElboTerms {
  double entropy = 0.0;
  double row_labels = 0.0;
  double col_labels = 0.0;
  double gauss_a = 0.0;
  double gauss_b = 0.0;
  double gauss_p = 0.0;
  double gauss_q = 0.0;
  double cells = 0.0;

  double total() const {
    return entropy + row_labels + col_labels + gauss_a + gauss_b + gauss_p + gauss_q + cells;
  }
};

/// Partial derivatives of J in natural coordinates. Blocks that were not
/// requested are left empty. The tau parts are derivatives with respect to
/// unconstrained tau entries; only their projection onto the simplex matters.
struct ElboGradient {
  Matrix tau_rows, tau_cols;
  Vector nu_a, rho_a, nu_b, rho_b, nu_p, rho_p, nu_q, rho_q;
  Vector alpha_rows, alpha_cols;
  Matrix pi;
  double mu = 0.0;
  double var_a = 0.0, var_b = 0.0, var_p = 0.0, var_q = 0.0;
};

struct GradientRequest {
  bool tau_rows = false;
  bool tau_cols = false;
  bool latents = false;
  bool theta = false;

  static GradientRequest all() { return {true, true, true, true}; }
};

/// Evaluates J(gamma, theta) and its gradient on a fixed observed matrix.
///
/// Observed cells factor into a block part (log pi or log(1 - pi), contracted
/// through dense products with tau) and a block-free propensity part, so they
/// cost O(1) each. Missing cells need one delta expectation per block.
///
/// `weight_floor` skips blocks whose mean-field weight tau_rows(i,q) *
/// tau_cols(j,l) is below the floor in missing cells. Zero means exact.
class Criterion {
 public:
  explicit Criterion(ObservedMatrix x);

  const ObservedMatrix& matrix() const { return x_; }

  ElboTerms terms(const VariationalState& gamma, const ModelParams& params) const;
  double value(const VariationalState& gamma, const ModelParams& params) const;

  /// `hits` receives the guard hits of this evaluation alone.
  double evaluate(const VariationalState& gamma, const ModelParams& params, const GradientRequest& request,
                  ElboGradient* grad, double weight_floor = 0.0, std::size_t* hits = nullptr) const;

  /// Number of clamped missing-cell log arguments seen so far, over all evaluations.
  std::size_t guard_hits() const { return guard_hits_.load(); }

 private:
  struct MissingCell {
    int i;
    int j;
  };

  ObservedMatrix x_;
  Matrix ones_;   // indicator of observed ones
  Matrix zeros_;  // indicator of observed zeros
  std::vector<MissingCell> missing_;
  mutable std::atomic<std::size_t> guard_hits_{0};
};

/// Convenience wrapper building a Criterion for a single evaluation.
double elbo(const ObservedMatrix& x, const VariationalState& gamma, const ModelParams& params);

}  // namespace lbm
