#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace lbm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Labels = std::vector<int>;

/// Nested missingness mechanisms. MCAR has no propensity latents, MAR keeps the
/// row/column effects (A, P), MNAR adds the value-dependent effects (B, Q).
enum class MissingnessKind { MCAR, MAR, MNAR };

std::string_view to_string(MissingnessKind kind);
MissingnessKind parse_kind(std::string_view text);

/// True when the kind carries the A (row) and P (column) propensity latents.
constexpr bool has_mar_effects(MissingnessKind kind) { return kind != MissingnessKind::MCAR; }
/// True when the kind carries the B (row) and Q (column) latents.
constexpr bool has_mnar_effects(MissingnessKind kind) { return kind == MissingnessKind::MNAR; }

enum class Cell : std::uint8_t { Zero = 0, One = 1, Missing = 2 };

/// Row-major n_rows x n_cols grid of ternary cells.
class ObservedMatrix {
 public:
  ObservedMatrix() = default;
  ObservedMatrix(std::size_t n_rows, std::size_t n_cols, Cell fill = Cell::Missing);
  ObservedMatrix(std::size_t n_rows, std::size_t n_cols, std::vector<Cell> cells);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return cells_.size(); }

  Cell operator()(std::size_t i, std::size_t j) const { return cells_[i * cols_ + j]; }
  void set(std::size_t i, std::size_t j, Cell c) { cells_[i * cols_ + j] = c; }

  std::span<const Cell> cells() const { return cells_; }

  std::size_t count(Cell c) const;
  double missing_fraction() const;
  bool all_missing() const { return count(Cell::Missing) == cells_.size(); }

  bool operator==(const ObservedMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Cell> cells_;
};

/// Block probabilities are kept inside [kPiFloor, 1 - kPiFloor].
inline constexpr double kPiFloor = 1e-6;
double clamp_probability(double p);

/// Model parameters theta. Variances are variances, not standard deviations.
struct ModelParams {
  MissingnessKind kind = MissingnessKind::MNAR;
  Vector alpha_rows;
  Vector alpha_cols;
  Matrix pi;
  double mu = 0.0;
  double var_a = 0.0;
  double var_b = 0.0;
  double var_p = 0.0;
  double var_q = 0.0;

  int nq() const { return static_cast<int>(alpha_rows.size()); }
  int nl() const { return static_cast<int>(alpha_cols.size()); }

  /// Throws std::invalid_argument when an invariant does not hold.
  void validate() const;

  /// Zeroes the variances the kind does not carry and sets the kind.
  ModelParams with_kind(MissingnessKind new_kind) const;
};

/// Ground truth produced by the simulator.
struct CompleteSample {
  Labels row_labels;
  Labels col_labels;
  Vector a, b;  // length n_rows
  Vector p, q;  // length n_cols
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> x_complete;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask;
  ObservedMatrix x_observed;
};

/// 1 / (1 + exp(-x)); throws std::domain_error on non-finite input.
double logistic(double x);
/// log(logistic(x)) without overflow.
double log_logistic(double x);

struct CellProbs {
  double p0;
  double p1;
  double p_na;
};

/// Categorical probabilities of an observed cell given its block and latents.
CellProbs cell_probs(double pi_ql, double mu, double a, double b, double p, double q);

/// log P(X^o, Y1, Y2, A, B, P, Q; theta) at the sampled values.
double complete_loglik(const CompleteSample& sample, const ModelParams& params);

}  // namespace lbm
