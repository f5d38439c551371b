#include "lbm/parametrization.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lbm {

namespace {

constexpr double kLogFloor = 1e-300;

double logit(double p) { return std::log(p) - std::log1p(-p); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Sequential writer/reader over a packed coordinate vector.
class Cursor {
 public:
  explicit Cursor(Eigen::Index size) : data_(size) {}
  explicit Cursor(const Vector& v) : data_(v) {}

  void put(double v) { data_[pos_++] = v; }
  double take() { return data_[pos_++]; }
  Eigen::Index pos() const { return pos_; }
  Vector& data() { return data_; }

 private:
  Vector data_;
  Eigen::Index pos_ = 0;
};

void put_simplex(Cursor& c, const Eigen::Ref<const Vector>& p) {
  const double base = std::log(std::max(p[0], kLogFloor));
  for (Eigen::Index k = 1; k < p.size(); ++k) c.put(std::log(std::max(p[k], kLogFloor)) - base);
}

Vector take_simplex(Cursor& c, Eigen::Index k) {
  Vector z(k - 1);
  for (Eigen::Index m = 0; m + 1 < k; ++m) z[m] = c.take();
  return softmax_with_pinned_first(z);
}

/// dJ/dz_k = p_k (g_k - sum_m p_m g_m) for the free logits k >= 1.
void put_simplex_gradient(Cursor& c, const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& g) {
  const double mean = p.dot(g);
  for (Eigen::Index k = 1; k < p.size(); ++k) c.put(p[k] * (g[k] - mean));
}

Eigen::Index gamma_size(const VariationalState& gamma, const GammaLayout& layout) {
  Eigen::Index n = 0;
  if (layout.tau) n += gamma.n_rows() * (gamma.nq() - 1) + gamma.n_cols() * (gamma.nl() - 1);
  if (layout.latents) n += 2 * (gamma.nu_a.size() + gamma.nu_b.size() + gamma.nu_p.size() + gamma.nu_q.size());
  return n;
}

Eigen::Index theta_size(const ModelParams& params, const ThetaLayout& layout) {
  Eigen::Index n = 0;
  if (layout.alpha) n += params.nq() - 1 + params.nl() - 1;
  if (layout.pi) n += params.pi.size();
  if (layout.mu) n += 1;
  if (layout.variances) n += (has_mar_effects(params.kind) ? 2 : 0) + (has_mnar_effects(params.kind) ? 2 : 0);
  return n;
}

}  // namespace

Vector softmax_with_pinned_first(const Eigen::Ref<const Vector>& free_logits) {
  const Eigen::Index k = free_logits.size() + 1;
  double top = 0.0;
  for (Eigen::Index m = 0; m < free_logits.size(); ++m) top = std::max(top, free_logits[m]);
  Vector p(k);
  p[0] = std::exp(-top);
  for (Eigen::Index m = 1; m < k; ++m) p[m] = std::exp(free_logits[m - 1] - top);
  return p / p.sum();
}

Vector pack_gamma(const VariationalState& gamma, const GammaLayout& layout) {
  Cursor c(gamma_size(gamma, layout));
  if (layout.tau) {
    for (Eigen::Index i = 0; i < gamma.tau_rows.rows(); ++i) put_simplex(c, gamma.tau_rows.row(i).transpose());
    for (Eigen::Index j = 0; j < gamma.tau_cols.rows(); ++j) put_simplex(c, gamma.tau_cols.row(j).transpose());
  }
  if (layout.latents) {
    auto put_block = [&](const Vector& nu, const Vector& rho) {
      for (Eigen::Index k = 0; k < nu.size(); ++k) c.put(nu[k]);
      for (Eigen::Index k = 0; k < rho.size(); ++k) c.put(std::log(rho[k]));
    };
    put_block(gamma.nu_a, gamma.rho_a);
    put_block(gamma.nu_b, gamma.rho_b);
    put_block(gamma.nu_p, gamma.rho_p);
    put_block(gamma.nu_q, gamma.rho_q);
  }
  return std::move(c.data());
}

void unpack_gamma(const Vector& z, const GammaLayout& layout, VariationalState& gamma) {
  if (z.size() != gamma_size(gamma, layout)) throw std::invalid_argument("unpack_gamma: size mismatch");
  Cursor c(z);
  if (layout.tau) {
    for (Eigen::Index i = 0; i < gamma.tau_rows.rows(); ++i) gamma.tau_rows.row(i) = take_simplex(c, gamma.nq());
    for (Eigen::Index j = 0; j < gamma.tau_cols.rows(); ++j) gamma.tau_cols.row(j) = take_simplex(c, gamma.nl());
  }
  if (layout.latents) {
    auto take_block = [&](Vector& nu, Vector& rho) {
      for (Eigen::Index k = 0; k < nu.size(); ++k) nu[k] = c.take();
      for (Eigen::Index k = 0; k < rho.size(); ++k) rho[k] = std::exp(c.take());
    };
    take_block(gamma.nu_a, gamma.rho_a);
    take_block(gamma.nu_b, gamma.rho_b);
    take_block(gamma.nu_p, gamma.rho_p);
    take_block(gamma.nu_q, gamma.rho_q);
  }
}

Vector gamma_gradient(const ElboGradient& grad, const VariationalState& gamma, const GammaLayout& layout) {
  Cursor c(gamma_size(gamma, layout));
  if (layout.tau) {
    for (Eigen::Index i = 0; i < gamma.tau_rows.rows(); ++i)
      put_simplex_gradient(c, gamma.tau_rows.row(i).transpose(), grad.tau_rows.row(i).transpose());
    for (Eigen::Index j = 0; j < gamma.tau_cols.rows(); ++j)
      put_simplex_gradient(c, gamma.tau_cols.row(j).transpose(), grad.tau_cols.row(j).transpose());
  }
  if (layout.latents) {
    auto put_block = [&](const Vector& g_nu, const Vector& g_rho, const Vector& rho) {
      for (Eigen::Index k = 0; k < rho.size(); ++k) c.put(g_nu[k]);
      for (Eigen::Index k = 0; k < rho.size(); ++k) c.put(g_rho[k] * rho[k]);
    };
    put_block(grad.nu_a, grad.rho_a, gamma.rho_a);
    put_block(grad.nu_b, grad.rho_b, gamma.rho_b);
    put_block(grad.nu_p, grad.rho_p, gamma.rho_p);
    put_block(grad.nu_q, grad.rho_q, gamma.rho_q);
  }
  return std::move(c.data());
}

Vector pack_theta(const ModelParams& params, const ThetaLayout& layout) {
  Cursor c(theta_size(params, layout));
  if (layout.alpha) {
    put_simplex(c, params.alpha_rows);
    put_simplex(c, params.alpha_cols);
  }
  if (layout.pi) {
    for (Eigen::Index q = 0; q < params.pi.rows(); ++q)
      for (Eigen::Index l = 0; l < params.pi.cols(); ++l) c.put(logit(clamp_probability(params.pi(q, l))));
  }
  if (layout.mu) c.put(params.mu);
  if (layout.variances) {
    if (has_mar_effects(params.kind)) {
      c.put(std::log(params.var_a));
      c.put(std::log(params.var_p));
    }
    if (has_mnar_effects(params.kind)) {
      c.put(std::log(params.var_b));
      c.put(std::log(params.var_q));
    }
  }
  return std::move(c.data());
}

void unpack_theta(const Vector& z, const ThetaLayout& layout, ModelParams& params) {
  if (z.size() != theta_size(params, layout)) throw std::invalid_argument("unpack_theta: size mismatch");
  Cursor c(z);
  if (layout.alpha) {
    params.alpha_rows = take_simplex(c, params.nq());
    params.alpha_cols = take_simplex(c, params.nl());
  }
  if (layout.pi) {
    for (Eigen::Index q = 0; q < params.pi.rows(); ++q)
      for (Eigen::Index l = 0; l < params.pi.cols(); ++l) params.pi(q, l) = clamp_probability(sigmoid(c.take()));
  }
  if (layout.mu) params.mu = c.take();
  if (layout.variances) {
    if (has_mar_effects(params.kind)) {
      params.var_a = std::exp(c.take());
      params.var_p = std::exp(c.take());
    }
    if (has_mnar_effects(params.kind)) {
      params.var_b = std::exp(c.take());
      params.var_q = std::exp(c.take());
    }
  }
}

Vector theta_gradient(const ElboGradient& grad, const ModelParams& params, const ThetaLayout& layout) {
  Cursor c(theta_size(params, layout));
  if (layout.alpha) {
    put_simplex_gradient(c, params.alpha_rows, grad.alpha_rows);
    put_simplex_gradient(c, params.alpha_cols, grad.alpha_cols);
  }
  if (layout.pi) {
    for (Eigen::Index q = 0; q < params.pi.rows(); ++q) {
      for (Eigen::Index l = 0; l < params.pi.cols(); ++l) {
        const double p = params.pi(q, l);
        c.put(grad.pi(q, l) * p * (1.0 - p));
      }
    }
  }
  if (layout.mu) c.put(grad.mu);
  if (layout.variances) {
    if (has_mar_effects(params.kind)) {
      c.put(grad.var_a * params.var_a);
      c.put(grad.var_p * params.var_p);
    }
    if (has_mnar_effects(params.kind)) {
      c.put(grad.var_b * params.var_b);
      c.put(grad.var_q * params.var_q);
    }
  }
  return std::move(c.data());
}

}  // namespace lbm
