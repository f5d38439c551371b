#include "lbm/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lbm {

std::string_view to_string(MissingnessKind kind) {
  switch (kind) {
    case MissingnessKind::MCAR:
      return "mcar";
    case MissingnessKind::MAR:
      return "mar";
    case MissingnessKind::MNAR:
      return "nmar";
  }
  return "?";
}

MissingnessKind parse_kind(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "mcar") return MissingnessKind::MCAR;
  if (lower == "mar") return MissingnessKind::MAR;
  if (lower == "nmar" || lower == "mnar") return MissingnessKind::MNAR;
  throw std::invalid_argument("unknown missingness kind '" + std::string(text) + "'");
}

ObservedMatrix::ObservedMatrix(std::size_t n_rows, std::size_t n_cols, Cell fill)
    : rows_(n_rows), cols_(n_cols), cells_(n_rows * n_cols, fill) {
  if (n_rows == 0 || n_cols == 0) throw std::invalid_argument("ObservedMatrix needs at least one row and column");
}

ObservedMatrix::ObservedMatrix(std::size_t n_rows, std::size_t n_cols, std::vector<Cell> cells)
    : rows_(n_rows), cols_(n_cols), cells_(std::move(cells)) {
  if (n_rows == 0 || n_cols == 0) throw std::invalid_argument("ObservedMatrix needs at least one row and column");
  if (cells_.size() != n_rows * n_cols) throw std::invalid_argument("ObservedMatrix cell count does not match shape");
  for (Cell c : cells_) {
    if (c != Cell::Zero && c != Cell::One && c != Cell::Missing)
      throw std::invalid_argument("ObservedMatrix cell outside {0, 1, NA}");
  }
}

std::size_t ObservedMatrix::count(Cell c) const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), c));
}

double ObservedMatrix::missing_fraction() const {
  return cells_.empty() ? 0.0 : static_cast<double>(count(Cell::Missing)) / static_cast<double>(cells_.size());
}

double clamp_probability(double p) { return std::clamp(p, kPiFloor, 1.0 - kPiFloor); }

namespace {

void check_simplex(const Vector& v, const char* name) {
  if (v.size() == 0) throw std::invalid_argument(std::string(name) + " is empty");
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (!(v[k] > 0.0)) throw std::invalid_argument(std::string(name) + " has a non-positive entry");
  }
  if (std::abs(v.sum() - 1.0) > 1e-8) throw std::invalid_argument(std::string(name) + " does not sum to one");
}

}  // namespace

void ModelParams::validate() const {
  check_simplex(alpha_rows, "alpha_rows");
  check_simplex(alpha_cols, "alpha_cols");
  if (pi.rows() != alpha_rows.size() || pi.cols() != alpha_cols.size())
    throw std::invalid_argument("pi shape does not match the class counts");
  for (Eigen::Index q = 0; q < pi.rows(); ++q)
    for (Eigen::Index l = 0; l < pi.cols(); ++l)
      if (!(pi(q, l) > 0.0 && pi(q, l) < 1.0)) throw std::invalid_argument("pi entries must lie in (0, 1)");
  if (!std::isfinite(mu)) throw std::invalid_argument("mu must be finite");
  for (double v : {var_a, var_b, var_p, var_q})
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("variances must be finite and nonnegative");
  if (!has_mar_effects(kind) && (var_a != 0.0 || var_p != 0.0))
    throw std::invalid_argument("MCAR parameters must have var_a = var_p = 0");
  if (!has_mnar_effects(kind) && (var_b != 0.0 || var_q != 0.0))
    throw std::invalid_argument("MAR/MCAR parameters must have var_b = var_q = 0");
}

ModelParams ModelParams::with_kind(MissingnessKind new_kind) const {
  ModelParams out = *this;
  out.kind = new_kind;
  if (!has_mnar_effects(new_kind)) out.var_b = out.var_q = 0.0;
  if (!has_mar_effects(new_kind)) out.var_a = out.var_p = 0.0;
  return out;
}

double logistic(double x) {
  if (!std::isfinite(x)) throw std::domain_error("logistic: non-finite argument");
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_logistic(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

CellProbs cell_probs(double pi_ql, double mu, double a, double b, double p, double q) {
  if (!(pi_ql > 0.0 && pi_ql < 1.0)) throw std::domain_error("cell_probs: pi outside (0, 1)");
  const double p1 = pi_ql * logistic(mu + a + b + p + q);
  const double p0 = (1.0 - pi_ql) * logistic(mu + a - b + p - q);
  // 1 - p0 - p1 written as a sum of positive terms.
  const double p_na = pi_ql * logistic(-(mu + a + b + p + q)) + (1.0 - pi_ql) * logistic(-(mu + a - b + p - q));
  return {p0, p1, p_na};
}

namespace {

double gaussian_logpdf_sum(const Vector& x, double var) {
  const double n = static_cast<double>(x.size());
  return -0.5 * n * std::log(2.0 * std::numbers::pi * var) - x.squaredNorm() / (2.0 * var);
}

}  // namespace

double complete_loglik(const CompleteSample& sample, const ModelParams& params) {
  const auto n1 = sample.row_labels.size();
  const auto n2 = sample.col_labels.size();
  const ObservedMatrix& x = sample.x_observed;
  if (x.rows() != n1 || x.cols() != n2) throw std::invalid_argument("complete_loglik: label/matrix size mismatch");
  if (static_cast<std::size_t>(sample.a.size()) != n1 || static_cast<std::size_t>(sample.b.size()) != n1 ||
      static_cast<std::size_t>(sample.p.size()) != n2 || static_cast<std::size_t>(sample.q.size()) != n2)
    throw std::invalid_argument("complete_loglik: latent vector size mismatch");

  double total = 0.0;
  for (int y : sample.row_labels) {
    if (y < 0 || y >= params.nq()) throw std::invalid_argument("complete_loglik: row label out of range");
    total += std::log(params.alpha_rows[y]);
  }
  for (int y : sample.col_labels) {
    if (y < 0 || y >= params.nl()) throw std::invalid_argument("complete_loglik: column label out of range");
    total += std::log(params.alpha_cols[y]);
  }

  const bool mar = has_mar_effects(params.kind);
  const bool mnar = has_mnar_effects(params.kind);
  if (mar) total += gaussian_logpdf_sum(sample.a, params.var_a) + gaussian_logpdf_sum(sample.p, params.var_p);
  if (mnar) total += gaussian_logpdf_sum(sample.b, params.var_b) + gaussian_logpdf_sum(sample.q, params.var_q);

  for (std::size_t i = 0; i < n1; ++i) {
    const double a = mar ? sample.a[i] : 0.0;
    const double b = mnar ? sample.b[i] : 0.0;
    for (std::size_t j = 0; j < n2; ++j) {
      const double p = mar ? sample.p[j] : 0.0;
      const double q = mnar ? sample.q[j] : 0.0;
      const double pi = clamp_probability(params.pi(sample.row_labels[i], sample.col_labels[j]));
      const double u = params.mu + a + b + p + q;
      const double v = params.mu + a - b + p - q;
      switch (x(i, j)) {
        case Cell::One:
          total += std::log(pi) + log_logistic(u);
          break;
        case Cell::Zero:
          total += std::log1p(-pi) + log_logistic(v);
          break;
        case Cell::Missing:
          total += std::log(pi * logistic(-u) + (1.0 - pi) * logistic(-v));
          break;
      }
    }
  }
  return total;
}

}  // namespace lbm
