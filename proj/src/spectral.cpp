#include "lbm/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace lbm {

namespace {

double squared_distance(const Matrix& points, Eigen::Index i, const Matrix& centers, Eigen::Index c) {
  return (points.row(i) - centers.row(c)).squaredNorm();
}

Matrix seed_centers(const Matrix& points, int k, Rng& rng) {
  const Eigen::Index n = points.rows();
  Matrix centers(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.row(0) = points.row(pick(rng));
  Vector d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = squared_distance(points, i, centers, 0);
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = pick(rng);
    if (total > 0.0) {
      double target = uniform01(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0) {
          chosen = i;
          break;
        }
      }
    }
    centers.row(c) = points.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(points, i, centers, c));
  }
  return centers;
}

KMeansResult lloyd(const Matrix& points, Matrix centers, int max_iterations) {
  const Eigen::Index n = points.rows();
  const int k = static_cast<int>(centers.rows());
  KMeansResult r;
  r.labels.assign(n, -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = squared_distance(points, i, centers, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (r.labels[i] != best) {
        r.labels[i] = best;
        changed = true;
      }
    }
    if (!changed) break;

    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(r.labels[i]) += points.row(i);
      ++counts[r.labels[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers.row(c) = sums.row(c) / counts[c];
        continue;
      }
      // Empty cluster: move it onto the point farthest from its center.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = squared_distance(points, i, centers, r.labels[i]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centers.row(c) = points.row(far);
    }
  }
  r.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) r.inertia += squared_distance(points, i, centers, r.labels[i]);
  r.centers = std::move(centers);
  return r;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, int k, Rng& rng, int restarts, int max_iterations) {
  if (k < 1 || points.rows() < 1) throw std::invalid_argument("kmeans: need k >= 1 and at least one point");
  k = std::min<int>(k, static_cast<int>(points.rows()));
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, restarts); ++r) {
    KMeansResult cur = lloyd(points, seed_centers(points, k, rng), max_iterations);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

Labels spectral_clustering(const Matrix& similarity, int k, Rng& rng) {
  const Eigen::Index n = similarity.rows();
  if (similarity.cols() != n) throw std::invalid_argument("spectral_clustering: similarity must be square");
  if (k < 1 || k > n) throw std::invalid_argument("spectral_clustering: k out of range");
  if (k == 1) return Labels(n, 0);

  const Vector degree = similarity.rowwise().sum();
  Vector inv_sqrt(n);
  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < n; ++i) {
    inv_sqrt[i] = degree[i] > 0.0 ? 1.0 / std::sqrt(degree[i]) : 0.0;
    if (degree[i] > 0.0) active.push_back(i);
  }
  Labels labels(n, 0);
  if (active.empty()) return labels;

  const Matrix laplacian = inv_sqrt.asDiagonal() * similarity * inv_sqrt.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> solver(laplacian);
  if (solver.info() != Eigen::Success) throw std::runtime_error("spectral_clustering: eigendecomposition failed");
  const Vector& values = solver.eigenvalues();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return std::abs(values[a]) > std::abs(values[b]); });

  Matrix embedding(static_cast<Eigen::Index>(active.size()), k);
  for (std::size_t r = 0; r < active.size(); ++r)
    for (int c = 0; c < k; ++c) embedding(r, c) = solver.eigenvectors()(active[r], order[c]);

  const KMeansResult km = kmeans(embedding, k, rng);
  std::vector<int> sizes(k, 0);
  for (int l : km.labels) ++sizes[l];
  const int largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  std::fill(labels.begin(), labels.end(), largest);
  for (std::size_t r = 0; r < active.size(); ++r) labels[active[r]] = km.labels[r];
  return labels;
}

SpectralLabels spectral_labels(const ObservedMatrix& x, int nq, int nl, std::uint64_t seed) {
  Matrix dense = Matrix::Zero(static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(x.cols()));
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j)
      if (x(i, j) == Cell::One) dense(i, j) = 1.0;
  Rng rng(seed);
  SpectralLabels out;
  out.rows = spectral_clustering(dense * dense.transpose(), nq, rng);
  out.cols = spectral_clustering(dense.transpose() * dense, nl, rng);
  return out;
}

}  // namespace lbm
