#pragma once

#include <string>
#include <vector>

#include "lbm/inference.hpp"

namespace lbm {

/// What stands in for the maximized complete log-likelihood in the ICL.
enum class IclSource {
  Elbo,                // the full variational bound J
  ElboWithoutEntropy,  // J minus the entropy of the mean-field distribution
};

/// Penalty and Gaussian-correction part of the ICL, i.e. ICL minus the likelihood term.
double icl_penalty(MissingnessKind kind, int n1, int n2, int nq, int nl);

/// The three ICL variants. Each throws std::invalid_argument when the fit has another kind.
double icl_nmar(const FitResult& fit, int n1, int n2, int nq, int nl, IclSource source = IclSource::Elbo);
double icl_mar(const FitResult& fit, int n1, int n2, int nq, int nl, IclSource source = IclSource::Elbo);
double icl_mcar(const FitResult& fit, int n1, int n2, int nq, int nl, IclSource source = IclSource::Elbo);

/// Dispatches on the fit's kind.
double icl(const FitResult& fit, int n1, int n2, IclSource source = IclSource::Elbo);

struct SelectionEntry {
  int nq = 0;
  int nl = 0;
  MissingnessKind kind = MissingnessKind::MNAR;
  double icl = 0.0;
  double elbo = 0.0;
  int fit_index = -1;  // index into SelectionResult::fits, -1 on failure
  bool ok = false;
  std::string error;
};

struct SelectionResult {
  SelectionEntry best;
  std::vector<SelectionEntry> table;  // grid order: nq, then nl, then kind
  std::vector<FitResult> fits;
};

class SelectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// True when `a` should be preferred over `b`: higher ICL, then smaller
/// nq + nl, then the simpler missingness kind.
bool prefer(const SelectionEntry& a, const SelectionEntry& b);

/// One multi_start_fit per grid cell; cells run concurrently on cfg.threads workers.
SelectionResult select_model(const ObservedMatrix& x, const std::vector<int>& nq_range,
                             const std::vector<int>& nl_range, const std::vector<MissingnessKind>& kinds,
                             const FitConfig& cfg, IclSource source = IclSource::Elbo);

}  // namespace lbm
