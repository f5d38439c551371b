#include "lbm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lbm {

namespace {

Labels argmax_rows(const Matrix& tau) {
  Labels out(static_cast<std::size_t>(tau.rows()));
  for (Eigen::Index i = 0; i < tau.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < tau.cols(); ++k)
      if (tau(i, k) > tau(i, best)) best = k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

void check_labels(const Labels& labels, int k, const char* what) {
  for (int l : labels)
    if (l < 0 || l >= k) throw std::invalid_argument(std::string(what) + ": label out of range");
}

/// perm[pred] = truth for one side.
std::vector<int> align_side(const Labels& truth, const Labels& pred, int k) {
  if (truth.size() != pred.size()) throw std::invalid_argument("align_labels: label vectors differ in length");
  check_labels(truth, k, "align_labels");
  check_labels(pred, k, "align_labels");
  Matrix cost = Matrix::Zero(k, k);  // rows: predicted class, cols: truth class
  for (std::size_t i = 0; i < truth.size(); ++i) cost(pred[i], truth[i]) -= 1.0;
  return solve_assignment(cost);
}

double miss_rate(const Labels& truth, const Labels& pred, const std::vector<int>* perm) {
  if (truth.size() != pred.size()) throw std::invalid_argument("l_item: label vectors differ in length");
  if (truth.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int mapped = perm ? (*perm)[pred[i]] : pred[i];
    if (mapped != truth[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

double mse(const Vector& truth, const Vector& estimate) {
  if (truth.size() == 0) return 0.0;
  if (estimate.size() == 0) return truth.squaredNorm() / static_cast<double>(truth.size());
  if (estimate.size() != truth.size()) throw std::invalid_argument("latent_mse: dimension mismatch");
  return (truth - estimate).squaredNorm() / static_cast<double>(truth.size());
}

}  // namespace

LabelAssignment map_assignments(const VariationalState& gamma) {
  return {argmax_rows(gamma.tau_rows), argmax_rows(gamma.tau_cols)};
}

std::vector<int> solve_assignment(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw std::invalid_argument("solve_assignment: cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  // Shortest augmenting paths with row/column potentials, 1-based internals.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j)
    if (match[j] > 0) assignment[match[j] - 1] = j - 1;
  return assignment;
}

Alignment align_labels(const LabelAssignment& truth, const LabelAssignment& pred, int nq, int nl) {
  if (nq < 1 || nl < 1) throw std::invalid_argument("align_labels: class counts must be >= 1");
  return {align_side(truth.rows, pred.rows, nq), align_side(truth.cols, pred.cols, nl)};
}

ItemLoss l_item(const LabelAssignment& truth, const LabelAssignment& pred, int nq, int nl, bool align) {
  ItemLoss loss;
  if (align) {
    const Alignment a = align_labels(truth, pred, nq, nl);
    loss.row = miss_rate(truth.rows, pred.rows, &a.row_perm);
    loss.col = miss_rate(truth.cols, pred.cols, &a.col_perm);
  } else {
    loss.row = miss_rate(truth.rows, pred.rows, nullptr);
    loss.col = miss_rate(truth.cols, pred.cols, nullptr);
  }
  loss.total = loss.row + loss.col - loss.row * loss.col;
  return loss;
}

double param_max_error(const ModelParams& truth, const ModelParams& fitted, const std::vector<int>& row_perm,
                       const std::vector<int>& col_perm) {
  if (truth.pi.rows() != fitted.pi.rows() || truth.pi.cols() != fitted.pi.cols())
    throw std::invalid_argument("param_max_error: class counts differ");
  if (static_cast<Eigen::Index>(row_perm.size()) != fitted.pi.rows() ||
      static_cast<Eigen::Index>(col_perm.size()) != fitted.pi.cols())
    throw std::invalid_argument("param_max_error: permutation sizes differ from the class counts");
  double worst = 0.0;
  for (Eigen::Index q = 0; q < fitted.pi.rows(); ++q)
    for (Eigen::Index l = 0; l < fitted.pi.cols(); ++l)
      worst = std::max(worst, std::abs(truth.pi(row_perm[q], col_perm[l]) - fitted.pi(q, l)));
  return worst;
}

LatentMse latent_mse(const CompleteSample& truth, const VariationalState& gamma) {
  return {mse(truth.a, gamma.nu_a), mse(truth.b, gamma.nu_b), mse(truth.p, gamma.nu_p), mse(truth.q, gamma.nu_q)};
}

}  // namespace lbm
