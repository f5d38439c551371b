#pragma once

#include <vector>

#include "lbm/criterion.hpp"

namespace lbm {

struct LabelAssignment {
  Labels rows;
  Labels cols;
};

/// Per-row and per-column argmax of tau, ties to the lowest index.
LabelAssignment map_assignments(const VariationalState& gamma);

/// Minimum-cost assignment for a square cost matrix (Hungarian algorithm).
/// Returns assignment[row] = column.
std::vector<int> solve_assignment(const Matrix& cost);

/// perm[k] is the truth class matched with predicted class k.
struct Alignment {
  std::vector<int> row_perm;
  std::vector<int> col_perm;
};

/// Maximizes the agreement counts, rows and columns independently. Both label
/// sets use classes [0, nq) for rows and [0, nl) for columns.
Alignment align_labels(const LabelAssignment& truth, const LabelAssignment& pred, int nq, int nl);

struct ItemLoss {
  double row = 0.0;
  double col = 0.0;
  double total = 0.0;  // row + col - row * col
};

ItemLoss l_item(const LabelAssignment& truth, const LabelAssignment& pred, int nq, int nl, bool align = true);

/// max_{q,l} |pi_true(perm[q], perm[l]) - pi_fit(q, l)| with perms from align_labels.
double param_max_error(const ModelParams& truth, const ModelParams& fitted, const std::vector<int>& row_perm,
                       const std::vector<int>& col_perm);

struct LatentMse {
  double a = 0.0;
  double b = 0.0;
  double p = 0.0;
  double q = 0.0;
};

/// Mean squared difference between the variational means and the sampled
/// latents. Latent blocks absent from gamma are read as zero.
LatentMse latent_mse(const CompleteSample& truth, const VariationalState& gamma);

}  // namespace lbm
