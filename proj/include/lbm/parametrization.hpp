#pragma once

#include "lbm/criterion.hpp"

namespace lbm {

// Unconstrained coordinates used by the quasi-Newton steps:
//  - probability rows (tau rows, alpha) are softmax of logits whose first entry is pinned at 0,
//  - pi is stored through its logit,
//  - every variance (rho, sigma^2) through its log,
//  - means (nu, mu) are free.

struct GammaLayout {
  bool tau = true;
  bool latents = true;
};

struct ThetaLayout {
  bool alpha = true;
  bool pi = true;
  bool mu = true;
  bool variances = true;
};

Vector pack_gamma(const VariationalState& gamma, const GammaLayout& layout);
/// Overwrites the blocks of `gamma` selected by the layout.
void unpack_gamma(const Vector& z, const GammaLayout& layout, VariationalState& gamma);
/// Chain rule from natural-coordinate partials to the packed coordinates.
Vector gamma_gradient(const ElboGradient& grad, const VariationalState& gamma, const GammaLayout& layout);

Vector pack_theta(const ModelParams& params, const ThetaLayout& layout);
void unpack_theta(const Vector& z, const ThetaLayout& layout, ModelParams& params);
Vector theta_gradient(const ElboGradient& grad, const ModelParams& params, const ThetaLayout& layout);

/// Probabilities from logits with an implicit leading 0 logit.
Vector softmax_with_pinned_first(const Eigen::Ref<const Vector>& free_logits);

}  // namespace lbm
