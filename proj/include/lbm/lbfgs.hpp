#pragma once

#include <functional>

#include "lbm/model.hpp"

namespace lbm {

struct LbfgsOptions {
  int max_iterations = 50;
  int history = 8;
  double gradient_tol = 1e-5;    // stop when max |g_k| <= gradient_tol
  double relative_tol = 1e-12;   // stop when the decrease is below relative_tol * max(1, |f|)
  int max_line_search = 30;
};

enum class LbfgsStatus { Converged, MaxIterations, LineSearchFailed };

struct LbfgsResult {
  Vector x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  LbfgsStatus status = LbfgsStatus::MaxIterations;
};

/// Returns f(x) and writes the gradient into `grad` (already sized like x).
using Objective = std::function<double(const Vector& x, Vector& grad)>;

/// Minimizes `objective` from `x0`. The returned point is the best iterate,
/// so f never exceeds f(x0).
LbfgsResult minimize_lbfgs(const Objective& objective, Vector x0, const LbfgsOptions& options);

}  // namespace lbm
