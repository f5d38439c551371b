#include "lbm/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace lbm {

namespace {

constexpr double kArmijo = 1e-4;
constexpr double kCurvature = 0.9;

struct Probe {
  double step = 0.0;
  double f = 0.0;
  double slope = 0.0;  // directional derivative along the search direction
  Vector x;
  Vector g;
};

class LineSearch {
 public:
  LineSearch(const Objective& objective, const Vector& x, const Vector& dir, double f0, double slope0, int budget,
             int& evaluations)
      : objective_(objective), x_(x), dir_(dir), f0_(f0), slope0_(slope0), budget_(budget), evaluations_(evaluations) {}

  /// Returns true and fills `out` when a step with sufficient decrease is found.
  bool run(double initial_step, Probe& out) {
    Probe prev;
    prev.step = 0.0;
    prev.f = f0_;
    prev.slope = slope0_;
    double step = initial_step;
    for (int k = 0; k < budget_; ++k) {
      Probe cur = probe(step);
      if (!std::isfinite(cur.f)) {
        step = 0.5 * (prev.step + step);
        continue;
      }
      if (cur.f > f0_ + kArmijo * step * slope0_ || (k > 0 && cur.f >= prev.f)) return zoom(prev, cur, out);
      if (std::abs(cur.slope) <= -kCurvature * slope0_) {
        out = std::move(cur);
        return true;
      }
      if (cur.slope >= 0.0) return zoom(cur, prev, out);
      prev = std::move(cur);
      step *= 2.0;
    }
    if (prev.step > 0.0) {
      out = std::move(prev);
      return true;
    }
    return false;
  }

 private:
  Probe probe(double step) {
    Probe p;
    p.step = step;
    p.x = x_ + step * dir_;
    p.g.resize(x_.size());
    p.f = objective_(p.x, p.g);
    ++evaluations_;
    ++used_;
    p.slope = std::isfinite(p.f) ? p.g.dot(dir_) : 0.0;
    if (!std::isfinite(p.f)) p.f = std::numeric_limits<double>::infinity();
    return p;
  }

  static double interpolate(const Probe& lo, const Probe& hi) {
    const double a = lo.step;
    const double b = hi.step;
    const double lower = std::min(a, b) + 0.1 * std::abs(b - a);
    const double upper = std::max(a, b) - 0.1 * std::abs(b - a);
    if (!std::isfinite(hi.f)) return 0.5 * (a + b);
    const double d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a - b);
    const double disc = d1 * d1 - lo.slope * hi.slope;
    if (disc < 0.0) return 0.5 * (a + b);
    const double d2 = (b > a ? 1.0 : -1.0) * std::sqrt(disc);
    const double denom = hi.slope - lo.slope + 2.0 * d2;
    if (denom == 0.0) return 0.5 * (a + b);
    const double t = b - (b - a) * (hi.slope + d2 - d1) / denom;
    if (!std::isfinite(t)) return 0.5 * (a + b);
    return std::clamp(t, lower, upper);
  }

  bool zoom(Probe lo, Probe hi, Probe& out) {
    while (used_ < budget_) {
      const double step = interpolate(lo, hi);
      Probe cur = probe(step);
      if (cur.f > f0_ + kArmijo * step * slope0_ || cur.f >= lo.f) {
        hi = std::move(cur);
      } else {
        if (std::abs(cur.slope) <= -kCurvature * slope0_) {
          out = std::move(cur);
          return true;
        }
        if (cur.slope * (hi.step - lo.step) >= 0.0) hi = lo;
        lo = std::move(cur);
      }
      if (std::abs(hi.step - lo.step) <= 1e-16 * std::max(1.0, lo.step)) break;
    }
    if (lo.step > 0.0 && lo.f < f0_) {
      out = std::move(lo);
      return true;
    }
    return false;
  }

  const Objective& objective_;
  const Vector& x_;
  const Vector& dir_;
  double f0_;
  double slope0_;
  int budget_;
  int& evaluations_;
  int used_ = 0;
};

}  // namespace

LbfgsResult minimize_lbfgs(const Objective& objective, Vector x0, const LbfgsOptions& options) {
  if (options.history < 1 || options.max_iterations < 0) throw std::invalid_argument("minimize_lbfgs: bad options");
  LbfgsResult result;
  result.x = std::move(x0);
  Vector g(result.x.size());
  result.f = objective(result.x, g);
  result.evaluations = 1;
  if (!std::isfinite(result.f)) throw std::domain_error("minimize_lbfgs: objective is not finite at the start");
  if (result.x.size() == 0) {
    result.status = LbfgsStatus::Converged;
    return result;
  }

  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;
  Vector dir(result.x.size());
  std::vector<double> alpha_buf;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() <= options.gradient_tol) {
      result.status = LbfgsStatus::Converged;
      return result;
    }

    // Two-loop recursion.
    dir = -g;
    alpha_buf.assign(s_hist.size(), 0.0);
    for (int k = static_cast<int>(s_hist.size()) - 1; k >= 0; --k) {
      alpha_buf[k] = rho_hist[k] * s_hist[k].dot(dir);
      dir -= alpha_buf[k] * y_hist[k];
    }
    if (!s_hist.empty()) dir *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(dir);
      dir += (alpha_buf[k] - beta) * s_hist[k];
    }
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g;
      slope = -g.squaredNorm();
    }

    const double initial = s_hist.empty() ? std::min(1.0, 1.0 / g.lpNorm<Eigen::Infinity>()) : 1.0;
    Probe accepted;
    LineSearch search(objective, result.x, dir, result.f, slope, options.max_line_search, result.evaluations);
    bool ok = search.run(initial, accepted);
    if (!ok && !s_hist.empty()) {
      // Retry once along steepest descent with a fresh memory.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g;
      slope = -g.squaredNorm();
      LineSearch retry(objective, result.x, dir, result.f, slope, options.max_line_search, result.evaluations);
      ok = retry.run(std::min(1.0, 1.0 / g.lpNorm<Eigen::Infinity>()), accepted);
    }
    if (!ok) {
      result.status = LbfgsStatus::LineSearchFailed;
      return result;
    }

    Vector s = accepted.x - result.x;
    Vector y = accepted.g - g;
    const double decrease = result.f - accepted.f;
    result.x = std::move(accepted.x);
    result.f = accepted.f;
    g = std::move(accepted.g);
    result.iterations = iter + 1;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > options.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    if (decrease <= options.relative_tol * std::max(1.0, std::abs(result.f))) {
      result.status = LbfgsStatus::Converged;
      return result;
    }
  }
  result.status = g.lpNorm<Eigen::Infinity>() <= options.gradient_tol ? LbfgsStatus::Converged
                                                                       : LbfgsStatus::MaxIterations;
  return result;
}

}  // namespace lbm
