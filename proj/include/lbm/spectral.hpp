#pragma once

#include <cstdint>

#include "lbm/model.hpp"
#include "lbm/random.hpp"

namespace lbm {

struct KMeansResult {
  Labels labels;
  Matrix centers;  // k x dim
  double inertia = 0.0;
};

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs.
KMeansResult kmeans(const Matrix& points, int k, Rng& rng, int restarts = 10, int max_iterations = 100);

/// Spectral clustering of a symmetric nonnegative similarity matrix: embed with
/// the k eigenvectors of D^{-1/2} W D^{-1/2} of largest |eigenvalue|, then k-means.
/// Zero-degree nodes are left out of k-means and joined to the largest cluster.
Labels spectral_clustering(const Matrix& similarity, int k, Rng& rng);

/// Row and column spectral labels from X X^T and X^T X, missing cells read as 0.
struct SpectralLabels {
  Labels rows;
  Labels cols;
};
SpectralLabels spectral_labels(const ObservedMatrix& x, int nq, int nl, std::uint64_t seed);

}  // namespace lbm
