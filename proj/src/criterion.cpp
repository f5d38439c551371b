#include "lbm/criterion.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lbm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)
constexpr double kTauFloor = 1e-300;

/// Logistic function at z and -z together with log logistic(z) and the
/// first three derivatives of the logistic at z.
struct SigmoidDerivs {
  double s;        // logistic(z)
  double sneg;     // logistic(-z) = 1 - s
  double logs;     // log logistic(z)
  double logsneg;  // log logistic(-z)
  double s1;       // s (1 - s)
  double s2;       // s1 (1 - 2 s)
  double s3;       // s1 (1 - 6 s (1 - s))
};

SigmoidDerivs sigmoid_derivs(double z) {
  SigmoidDerivs d{};
  if (z >= 0.0) {
    const double e = std::exp(-z);
    d.s = 1.0 / (1.0 + e);
    d.sneg = e * d.s;
    d.logs = -std::log1p(e);
    d.logsneg = -z + d.logs;
  } else {
    const double e = std::exp(z);
    d.sneg = 1.0 / (1.0 + e);
    d.s = e * d.sneg;
    d.logsneg = -std::log1p(e);
    d.logs = z + d.logsneg;
  }
  d.s1 = d.s * d.sneg;
  d.s2 = d.s1 * (d.sneg - d.s);
  d.s3 = d.s1 * (1.0 - 6.0 * d.s1);
  return d;
}

/// Missing-cell delta expectation for one cell. With g = pi s(-u) + (1 - pi) s(-v),
/// every ratio (d^k g / g) is a mixture over the two branches with weights
/// w_u = pi s(-u) / g and w_v = 1 - w_u, so nothing underflows when g does.
class MissingKernel {
 public:
  /// `scale` > 0 damps the curvature terms (see kMissingCurvatureScale); 0 keeps the plain expansion.
  MissingKernel(double mu, double mean_x, double var_x, double mean_y, double var_y, double scale)
      : du_(sigmoid_derivs(mu + mean_x + mean_y)), dv_(sigmoid_derivs(mu + mean_x - mean_y)) {
    damp(var_x, scale, vx_, dvx_);
    damp(var_y, scale, vy_, dvy_);
    // Branch moments s, s (1 - 2 s), s (1 - 6 s (1 - s)) of the logistic at u and v.
    au_ = du_.s;
    bu_ = du_.s * (du_.sneg - du_.s);
    cu_ = du_.s * (1.0 - 6.0 * du_.s1);
    av_ = dv_.s;
    bv_ = dv_.s * (dv_.sneg - dv_.s);
    cv_ = dv_.s * (1.0 - 6.0 * dv_.s1);
  }

  DeltaTerm eval(double pi, bool with_derivatives, std::size_t& guard_hits) const {
    const double lu = std::log(pi) + du_.logsneg;
    const double lv = std::log1p(-pi) + dv_.logsneg;
    const double top = std::max(lu, lv);
    const double log_g = top + std::log(std::exp(lu - top) + std::exp(lv - top));
    if (!(log_g >= kLogFloor)) ++guard_hits;
    const double wu = std::exp(lu - log_g);
    const double wv = std::exp(lv - log_g);

    const double gx = -(wu * au_ + wv * av_);
    const double gy = -wu * au_ + wv * av_;
    const double g2 = -(wu * bu_ + wv * bv_);
    const double hx = g2 - gx * gx;
    const double hy = g2 - gy * gy;

    DeltaTerm t;
    t.value = log_g + 0.5 * vx_ * hx + 0.5 * vy_ * hy;
    if (!with_derivatives) return t;

    const double gxy = -wu * bu_ + wv * bv_;
    const double g3x = -(wu * cu_ + wv * cv_);
    const double g3y = -wu * cu_ + wv * cv_;
    // d/dtheta of (g2 / g - (w / g)^2), all arguments already divided by g.
    auto dh = [&](double w, double dg, double dw, double dg2) {
      return dg2 - g2 * dg - 2.0 * w * dw + 2.0 * w * w * dg;
    };
    t.d_mean_x = gx + 0.5 * vx_ * dh(gx, gx, g2, g3x) + 0.5 * vy_ * dh(gy, gx, gxy, g3x);
    t.d_mean_y = gy + 0.5 * vx_ * dh(gx, gy, gxy, g3y) + 0.5 * vy_ * dh(gy, gy, g2, g3y);

    const double ru = wu / pi;
    const double rv = wv / (1.0 - pi);
    const double dgp = ru - rv;
    const double dgxp = -ru * au_ + rv * av_;
    const double dgyp = -ru * au_ - rv * av_;
    const double dg2p = -ru * bu_ + rv * bv_;
    t.d_pi = dgp + 0.5 * vx_ * dh(gx, dgp, dgxp, dg2p) + 0.5 * vy_ * dh(gy, dgp, dgyp, dg2p);
    t.d_var_x = 0.5 * hx * dvx_;
    t.d_var_y = 0.5 * hy * dvy_;
    return t;
  }

 private:
  inline static const double kLogFloor = std::log(kMissingLogFloor);

  // Effective variance c v / (c + v) and its derivative in v.
  static void damp(double v, double c, double& eff, double& slope) {
    if (c <= 0.0) {
      eff = v;
      slope = 1.0;
      return;
    }
    eff = c * v / (c + v);
    slope = (c / (c + v)) * (c / (c + v));
  }

  double vx_, dvx_;
  double vy_, dvy_;
  SigmoidDerivs du_;
  SigmoidDerivs dv_;
  double au_, bu_, cu_, av_, bv_, cv_;
};

/// Block-free part of an observed cell: log logistic(z) with its delta correction.
struct ObservedTerm {
  double value;
  double d_z;
  double d_var;
};

ObservedTerm observed_term(double z, double var) {
  const SigmoidDerivs d = sigmoid_derivs(z);
  return {d.logs - 0.5 * var * d.s1, d.sneg - 0.5 * var * d.s2, -0.5 * d.s1};
}

double tau_entropy(const Matrix& tau) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < tau.size(); ++k) {
    const double t = tau.data()[k];
    if (t > 0.0) h -= t * std::log(t);
  }
  return h;
}

double gaussian_entropy(const Vector& rho) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < rho.size(); ++i) h += 0.5 * (kLog2Pi + 1.0 + std::log(rho[i]));
  return h;
}

/// E[log N(latent; 0, var)] under N(nu, rho), summed over a latent block.
double gaussian_prior_term(const Vector& nu, const Vector& rho, double var) {
  const double n = static_cast<double>(nu.size());
  const double s = nu.squaredNorm() + rho.sum();
  return -0.5 * n * (kLog2Pi + std::log(var)) - s / (2.0 * var);
}

void check_shapes(const ObservedMatrix& x, const VariationalState& gamma, const ModelParams& params) {
  if (static_cast<std::size_t>(gamma.n_rows()) != x.rows() || static_cast<std::size_t>(gamma.n_cols()) != x.cols())
    throw std::invalid_argument("criterion: variational state does not match the matrix shape");
  if (gamma.nq() != params.nq() || gamma.nl() != params.nl())
    throw std::invalid_argument("criterion: class counts differ between gamma and theta");
  if (gamma.has_mar_effects() != has_mar_effects(params.kind) ||
      gamma.has_mnar_effects() != has_mnar_effects(params.kind))
    throw std::invalid_argument("criterion: latent blocks do not match the missingness kind");
}

}  // namespace

VariationalState VariationalState::uniform(int n_rows, int n_cols, int nq, int nl, MissingnessKind kind) {
  VariationalState g;
  g.tau_rows = Matrix::Constant(n_rows, nq, 1.0 / nq);
  g.tau_cols = Matrix::Constant(n_cols, nl, 1.0 / nl);
  if (lbm::has_mar_effects(kind)) {
    g.nu_a = Vector::Zero(n_rows);
    g.rho_a = Vector::Ones(n_rows);
    g.nu_p = Vector::Zero(n_cols);
    g.rho_p = Vector::Ones(n_cols);
  }
  if (lbm::has_mnar_effects(kind)) {
    g.nu_b = Vector::Zero(n_rows);
    g.rho_b = Vector::Ones(n_rows);
    g.nu_q = Vector::Zero(n_cols);
    g.rho_q = Vector::Ones(n_cols);
  }
  return g;
}

void VariationalState::validate() const {
  auto check_tau = [](const Matrix& tau, const char* name) {
    for (Eigen::Index r = 0; r < tau.rows(); ++r) {
      if ((tau.row(r).array() < 0.0).any()) throw std::invalid_argument(std::string(name) + " has a negative entry");
      if (std::abs(tau.row(r).sum() - 1.0) > 1e-10)
        throw std::invalid_argument(std::string(name) + " row does not sum to one");
    }
  };
  check_tau(tau_rows, "tau_rows");
  check_tau(tau_cols, "tau_cols");
  auto check_block = [](const Vector& nu, const Vector& rho, Eigen::Index n, const char* name) {
    if (nu.size() == 0 && rho.size() == 0) return;
    if (nu.size() != n || rho.size() != n) throw std::invalid_argument(std::string(name) + " block has the wrong size");
    if ((rho.array() <= 0.0).any()) throw std::invalid_argument(std::string(name) + " variances must be positive");
  };
  check_block(nu_a, rho_a, tau_rows.rows(), "A");
  check_block(nu_b, rho_b, tau_rows.rows(), "B");
  check_block(nu_p, rho_p, tau_cols.rows(), "P");
  check_block(nu_q, rho_q, tau_cols.rows(), "Q");
  if ((nu_a.size() == 0) != (nu_p.size() == 0) || (nu_b.size() == 0) != (nu_q.size() == 0))
    throw std::invalid_argument("row and column latent blocks must come in pairs");
  if (nu_b.size() > 0 && nu_a.size() == 0) throw std::invalid_argument("B/Q latents require A/P latents");
}

double entropy(const VariationalState& gamma) {
  return tau_entropy(gamma.tau_rows) + tau_entropy(gamma.tau_cols) + gaussian_entropy(gamma.rho_a) +
         gaussian_entropy(gamma.rho_b) + gaussian_entropy(gamma.rho_p) + gaussian_entropy(gamma.rho_q);
}

DeltaTerm delta_term(Cell kind, double pi_ql, double mu, double mean_x, double var_x, double mean_y, double var_y,
                     std::size_t* guard_hits) {
  if (!(pi_ql > 0.0 && pi_ql < 1.0)) throw std::domain_error("delta_term: pi outside (0, 1)");
  if (var_x < 0.0 || var_y < 0.0) throw std::domain_error("delta_term: negative variance");
  std::size_t hits = 0;
  DeltaTerm t;
  switch (kind) {
    case Cell::One: {
      const ObservedTerm o = observed_term(mu + mean_x + mean_y, var_x + var_y);
      t = {std::log(pi_ql) + o.value, 1.0 / pi_ql, o.d_z, o.d_z, o.d_var, o.d_var};
      break;
    }
    case Cell::Zero: {
      const ObservedTerm o = observed_term(mu + mean_x - mean_y, var_x + var_y);
      t = {std::log1p(-pi_ql) + o.value, -1.0 / (1.0 - pi_ql), o.d_z, -o.d_z, o.d_var, o.d_var};
      break;
    }
    case Cell::Missing:
      t = MissingKernel(mu, mean_x, var_x, mean_y, var_y, 0.0).eval(pi_ql, true, hits);
      break;
  }
  if (guard_hits) *guard_hits += hits;
  return t;
}

double delta_expectation(Cell kind, double pi_ql, double mu, double mean_x, double var_x, double mean_y,
                         double var_y) {
  return delta_term(kind, pi_ql, mu, mean_x, var_x, mean_y, var_y).value;
}

Criterion::Criterion(ObservedMatrix x) : x_(std::move(x)) {
  const auto n1 = static_cast<Eigen::Index>(x_.rows());
  const auto n2 = static_cast<Eigen::Index>(x_.cols());
  ones_ = Matrix::Zero(n1, n2);
  zeros_ = Matrix::Zero(n1, n2);
  for (Eigen::Index i = 0; i < n1; ++i) {
    for (Eigen::Index j = 0; j < n2; ++j) {
      switch (x_(i, j)) {
        case Cell::One:
          ones_(i, j) = 1.0;
          break;
        case Cell::Zero:
          zeros_(i, j) = 1.0;
          break;
        case Cell::Missing:
          missing_.push_back({static_cast<int>(i), static_cast<int>(j)});
          break;
      }
    }
  }
}

ElboTerms Criterion::terms(const VariationalState& gamma, const ModelParams& params) const {
  check_shapes(x_, gamma, params);
  ElboTerms t;
  t.entropy = entropy(gamma);
  t.row_labels = (gamma.tau_rows.colwise().sum().transpose().array() * params.alpha_rows.array().log()).sum();
  t.col_labels = (gamma.tau_cols.colwise().sum().transpose().array() * params.alpha_cols.array().log()).sum();
  if (gamma.has_mar_effects()) {
    t.gauss_a = gaussian_prior_term(gamma.nu_a, gamma.rho_a, params.var_a);
    t.gauss_p = gaussian_prior_term(gamma.nu_p, gamma.rho_p, params.var_p);
  }
  if (gamma.has_mnar_effects()) {
    t.gauss_b = gaussian_prior_term(gamma.nu_b, gamma.rho_b, params.var_b);
    t.gauss_q = gaussian_prior_term(gamma.nu_q, gamma.rho_q, params.var_q);
  }
  const double all = evaluate(gamma, params, GradientRequest{}, nullptr, 0.0);
  t.cells = all - (t.entropy + t.row_labels + t.col_labels + t.gauss_a + t.gauss_b + t.gauss_p + t.gauss_q);
  return t;
}

double Criterion::value(const VariationalState& gamma, const ModelParams& params) const {
  return evaluate(gamma, params, GradientRequest{}, nullptr, 0.0);
}

double Criterion::evaluate(const VariationalState& gamma, const ModelParams& params, const GradientRequest& req,
                           ElboGradient* grad, double weight_floor, std::size_t* hits_out) const {
  check_shapes(x_, gamma, params);
  const Eigen::Index n1 = gamma.n_rows();
  const Eigen::Index n2 = gamma.n_cols();
  const Eigen::Index nq = gamma.nq();
  const Eigen::Index nl = gamma.nl();
  const bool mar = gamma.has_mar_effects();
  const bool mnar = gamma.has_mnar_effects();
  const Matrix& t1 = gamma.tau_rows;
  const Matrix& t2 = gamma.tau_cols;

  GradientRequest want = grad ? req : GradientRequest{};
  if (grad) {
    *grad = ElboGradient{};
    if (want.tau_rows) grad->tau_rows = Matrix::Zero(n1, nq);
    if (want.tau_cols) grad->tau_cols = Matrix::Zero(n2, nl);
    if (want.latents && mar) {
      grad->nu_a = grad->rho_a = Vector::Zero(n1);
      grad->nu_p = grad->rho_p = Vector::Zero(n2);
    }
    if (want.latents && mnar) {
      grad->nu_b = grad->rho_b = Vector::Zero(n1);
      grad->nu_q = grad->rho_q = Vector::Zero(n2);
    }
    if (want.theta) {
      grad->alpha_rows = Vector::Zero(nq);
      grad->alpha_cols = Vector::Zero(nl);
      grad->pi = Matrix::Zero(nq, nl);
    }
  }

  double total = 0.0;

  // Entropy and the multinomial label terms.
  total += tau_entropy(t1) + tau_entropy(t2);
  const Vector log_alpha_rows = params.alpha_rows.array().log();
  const Vector log_alpha_cols = params.alpha_cols.array().log();
  const Vector mass_rows = t1.colwise().sum().transpose();
  const Vector mass_cols = t2.colwise().sum().transpose();
  total += mass_rows.dot(log_alpha_rows) + mass_cols.dot(log_alpha_cols);
  if (want.tau_rows) {
    grad->tau_rows.array() -= t1.array().max(kTauFloor).log() + 1.0;
    grad->tau_rows.rowwise() += log_alpha_rows.transpose();
  }
  if (want.tau_cols) {
    grad->tau_cols.array() -= t2.array().max(kTauFloor).log() + 1.0;
    grad->tau_cols.rowwise() += log_alpha_cols.transpose();
  }
  if (want.theta) {
    grad->alpha_rows = mass_rows.array() / params.alpha_rows.array();
    grad->alpha_cols = mass_cols.array() / params.alpha_cols.array();
  }

  // Gaussian priors and entropies of the propensity latents.
  auto latent_block = [&](const Vector& nu, const Vector& rho, double var, Vector* g_nu, Vector* g_rho,
                          double* g_var) {
    total += gaussian_prior_term(nu, rho, var) + gaussian_entropy(rho);
    if (want.latents) {
      *g_nu = -nu / var;
      *g_rho = (0.5 / rho.array() - 0.5 / var).matrix();
    }
    if (want.theta) {
      const double s = nu.squaredNorm() + rho.sum();
      *g_var = -0.5 * static_cast<double>(nu.size()) / var + s / (2.0 * var * var);
    }
  };
  ElboGradient scratch;
  ElboGradient& g = grad ? *grad : scratch;
  if (mar) {
    latent_block(gamma.nu_a, gamma.rho_a, params.var_a, &g.nu_a, &g.rho_a, &g.var_a);
    latent_block(gamma.nu_p, gamma.rho_p, params.var_p, &g.nu_p, &g.rho_p, &g.var_p);
  }
  if (mnar) {
    latent_block(gamma.nu_b, gamma.rho_b, params.var_b, &g.nu_b, &g.rho_b, &g.var_b);
    latent_block(gamma.nu_q, gamma.rho_q, params.var_q, &g.nu_q, &g.rho_q, &g.var_q);
  }

  // Observed cells, block part: sum_ij X_ij sum_ql tau1_iq tau2_jl log pi_ql.
  Matrix pi_c(nq, nl);
  for (Eigen::Index q = 0; q < nq; ++q)
    for (Eigen::Index l = 0; l < nl; ++l) pi_c(q, l) = clamp_probability(params.pi(q, l));
  const Matrix log_pi = pi_c.array().log();
  const Matrix log_1mpi = (1.0 - pi_c.array()).log();
  const Matrix m1 = ones_ * t2;   // n1 x nl
  const Matrix m0 = zeros_ * t2;  // n1 x nl
  const Matrix block1 = t1.transpose() * m1;  // nq x nl
  const Matrix block0 = t1.transpose() * m0;
  total += (block1.array() * log_pi.array()).sum() + (block0.array() * log_1mpi.array()).sum();
  if (want.tau_rows) grad->tau_rows += m1 * log_pi.transpose() + m0 * log_1mpi.transpose();
  if (want.tau_cols) {
    grad->tau_cols += ones_.transpose() * (t1 * log_pi) + zeros_.transpose() * (t1 * log_1mpi);
  }
  if (want.theta) {
    for (Eigen::Index q = 0; q < nq; ++q) {
      for (Eigen::Index l = 0; l < nl; ++l) {
        const double raw = params.pi(q, l);
        if (raw <= kPiFloor || raw >= 1.0 - kPiFloor) continue;  // clamped: flat
        grad->pi(q, l) += block1(q, l) / pi_c(q, l) - block0(q, l) / (1.0 - pi_c(q, l));
      }
    }
  }

  // Per-row / per-column accumulators of the cell derivatives.
  const bool cell_derivs = want.latents || want.theta;
  Vector gx_row, gy_row, gvx_row, gvy_row, gx_col, gy_col, gvx_col, gvy_col;
  if (want.latents) {
    gx_row = gy_row = gvx_row = gvy_row = Vector::Zero(n1);
    gx_col = gy_col = gvx_col = gvy_col = Vector::Zero(n2);
  }
  double g_mu = 0.0;

  auto mean_x = [&](Eigen::Index i, Eigen::Index j) { return mar ? gamma.nu_a[i] + gamma.nu_p[j] : 0.0; };
  auto var_x = [&](Eigen::Index i, Eigen::Index j) { return mar ? gamma.rho_a[i] + gamma.rho_p[j] : 0.0; };
  auto mean_y = [&](Eigen::Index i, Eigen::Index j) { return mnar ? gamma.nu_b[i] + gamma.nu_q[j] : 0.0; };
  auto var_y = [&](Eigen::Index i, Eigen::Index j) { return mnar ? gamma.rho_b[i] + gamma.rho_q[j] : 0.0; };

  auto add_cell_derivs = [&](Eigen::Index i, Eigen::Index j, double dx, double dy, double dvx, double dvy) {
    g_mu += dx;
    if (!want.latents) return;
    gx_row[i] += dx;
    gx_col[j] += dx;
    gy_row[i] += dy;
    gy_col[j] += dy;
    gvx_row[i] += dvx;
    gvx_col[j] += dvx;
    gvy_row[i] += dvy;
    gvy_col[j] += dvy;
  };

  // Observed cells, propensity part (independent of the block).
  for (Eigen::Index i = 0; i < n1; ++i) {
    for (Eigen::Index j = 0; j < n2; ++j) {
      const Cell c = x_(i, j);
      if (c == Cell::Missing) continue;
      const double mx = mean_x(i, j);
      const double my = mean_y(i, j);
      const double v = var_x(i, j) + var_y(i, j);
      const bool one = c == Cell::One;
      const ObservedTerm o = observed_term(params.mu + mx + (one ? my : -my), v);
      total += o.value;
      if (cell_derivs) add_cell_derivs(i, j, o.d_z, one ? o.d_z : -o.d_z, o.d_var, o.d_var);
    }
  }

  // Missing cells: one delta expectation per block.
  std::size_t hits = 0;
  std::vector<double> values(static_cast<std::size_t>(nq * nl));
  for (const MissingCell& cell : missing_) {
    const Eigen::Index i = cell.i;
    const Eigen::Index j = cell.j;
    const MissingKernel kernel(params.mu, mean_x(i, j), var_x(i, j), mean_y(i, j), var_y(i, j), kMissingCurvatureScale);
    if (!mnar) {
      // Without B/Q the missing probability does not depend on pi.
      const DeltaTerm e = kernel.eval(0.5, cell_derivs, hits);
      total += e.value;
      if (want.tau_rows) grad->tau_rows.row(i).array() += e.value * t2.row(j).sum();
      if (want.tau_cols) grad->tau_cols.row(j).array() += e.value * t1.row(i).sum();
      if (cell_derivs) add_cell_derivs(i, j, e.d_mean_x, 0.0, e.d_var_x, 0.0);
      continue;
    }
    double dx = 0.0, dy = 0.0, dvx = 0.0, dvy = 0.0;
    for (Eigen::Index q = 0; q < nq; ++q) {
      const double tq = t1(i, q);
      for (Eigen::Index l = 0; l < nl; ++l) {
        const double tl = t2(j, l);
        const double w = tq * tl;
        if (weight_floor > 0.0 && w < weight_floor && !(want.tau_rows && tl >= weight_floor) &&
            !(want.tau_cols && tq >= weight_floor))
          continue;
        const DeltaTerm e = kernel.eval(pi_c(q, l), cell_derivs, hits);
        total += w * e.value;
        if (want.tau_rows) grad->tau_rows(i, q) += tl * e.value;
        if (want.tau_cols) grad->tau_cols(j, l) += tq * e.value;
        if (cell_derivs) {
          dx += w * e.d_mean_x;
          dy += w * e.d_mean_y;
          dvx += w * e.d_var_x;
          dvy += w * e.d_var_y;
          if (want.theta && params.pi(q, l) > kPiFloor && params.pi(q, l) < 1.0 - kPiFloor)
            grad->pi(q, l) += w * e.d_pi;
        }
      }
    }
    if (cell_derivs) add_cell_derivs(i, j, dx, dy, dvx, dvy);
  }
  guard_hits_ += hits;
  if (hits_out) *hits_out = hits;

  if (want.latents) {
    if (mar) {
      grad->nu_a += gx_row;
      grad->rho_a += gvx_row;
      grad->nu_p += gx_col;
      grad->rho_p += gvx_col;
    }
    if (mnar) {
      grad->nu_b += gy_row;
      grad->rho_b += gvy_row;
      grad->nu_q += gy_col;
      grad->rho_q += gvy_col;
    }
  }
  if (want.theta) grad->mu = g_mu;
  return total;
}

double elbo(const ObservedMatrix& x, const VariationalState& gamma, const ModelParams& params) {
  return Criterion(x).value(gamma, params);
}

}  // namespace lbm
