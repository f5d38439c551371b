#include "lbm/selection.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace lbm {

namespace {

double likelihood_term(const FitResult& fit, IclSource source) {
  const double j = fit.elbo();
  return source == IclSource::Elbo ? j : j - entropy(fit.varstate);
}

void check_kind(const FitResult& fit, MissingnessKind expected, const char* what) {
  if (fit.params.kind != expected)
    throw std::invalid_argument(std::string(what) + ": fit has kind " + std::string(to_string(fit.params.kind)));
}

void check_sizes(int n1, int n2, int nq, int nl) {
  if (n1 < 1 || n2 < 1 || nq < 1 || nl < 1) throw std::invalid_argument("icl: sizes must be >= 1");
}

}  // namespace

double icl_penalty(MissingnessKind kind, int n1, int n2, int nq, int nl) {
  check_sizes(n1, n2, nq, nl);
  const double d1 = n1;
  const double d2 = n2;
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  double value = -0.5 * nq * nl * std::log(d1 * d2) - 0.5 * (nq - 1) * std::log(d1) - 0.5 * (nl - 1) * std::log(d2);
  const double gaussian = d1 * log_2pi - std::log(d1) + d2 * log_2pi - std::log(d2);
  switch (kind) {
    case MissingnessKind::MNAR:
      value += gaussian;
      break;
    case MissingnessKind::MAR:
      value += 0.5 * gaussian;
      break;
    case MissingnessKind::MCAR:
      break;
  }
  return value;
}

double icl_nmar(const FitResult& fit, int n1, int n2, int nq, int nl, IclSource source) {
  check_kind(fit, MissingnessKind::MNAR, "icl_nmar");
  return likelihood_term(fit, source) + icl_penalty(MissingnessKind::MNAR, n1, n2, nq, nl);
}

double icl_mar(const FitResult& fit, int n1, int n2, int nq, int nl, IclSource source) {
  check_kind(fit, MissingnessKind::MAR, "icl_mar");
  return likelihood_term(fit, source) + icl_penalty(MissingnessKind::MAR, n1, n2, nq, nl);
}

double icl_mcar(const FitResult& fit, int n1, int n2, int nq, int nl, IclSource source) {
  check_kind(fit, MissingnessKind::MCAR, "icl_mcar");
  return likelihood_term(fit, source) + icl_penalty(MissingnessKind::MCAR, n1, n2, nq, nl);
}

double icl(const FitResult& fit, int n1, int n2, IclSource source) {
  const int nq = fit.params.nq();
  const int nl = fit.params.nl();
  switch (fit.params.kind) {
    case MissingnessKind::MNAR:
      return icl_nmar(fit, n1, n2, nq, nl, source);
    case MissingnessKind::MAR:
      return icl_mar(fit, n1, n2, nq, nl, source);
    case MissingnessKind::MCAR:
      return icl_mcar(fit, n1, n2, nq, nl, source);
  }
  throw std::invalid_argument("icl: unknown kind");
}

bool prefer(const SelectionEntry& a, const SelectionEntry& b) {
  if (a.ok != b.ok) return a.ok;
  const double scale = std::max({1.0, std::abs(a.icl), std::abs(b.icl)});
  if (std::abs(a.icl - b.icl) > 1e-12 * scale) return a.icl > b.icl;
  if (a.nq + a.nl != b.nq + b.nl) return a.nq + a.nl < b.nq + b.nl;
  return a.kind < b.kind;
}

SelectionResult select_model(const ObservedMatrix& x, const std::vector<int>& nq_range,
                             const std::vector<int>& nl_range, const std::vector<MissingnessKind>& kinds,
                             const FitConfig& cfg, IclSource source) {
  if (nq_range.empty() || nl_range.empty() || kinds.empty())
    throw std::invalid_argument("select_model: ranges must be non-empty");
  cfg.validate();

  SelectionResult out;
  for (int nq : nq_range) {
    for (int nl : nl_range) {
      for (MissingnessKind kind : kinds) {
        SelectionEntry e;
        e.nq = nq;
        e.nl = nl;
        e.kind = kind;
        out.table.push_back(e);
      }
    }
  }
  const int n = static_cast<int>(out.table.size());
  std::vector<FitResult> fits(n);

  FitConfig inner = cfg;
  inner.threads = 1;
  const int n1 = static_cast<int>(x.rows());
  const int n2 = static_cast<int>(x.cols());
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int k = next++; k < n; k = next++) {
      SelectionEntry& e = out.table[k];
      try {
        fits[k] = multi_start_fit(x, e.nq, e.nl, e.kind, inner);
        e.elbo = fits[k].elbo();
        e.icl = icl(fits[k], n1, n2, source);
        if (!std::isfinite(e.icl)) throw std::runtime_error("non-finite ICL");
        e.ok = true;
      } catch (const std::exception& ex) {
        e.ok = false;
        e.error = ex.what();
      }
    }
  };
  const int workers = std::min(resolve_threads(cfg.threads), n);
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  int best = -1;
  for (int k = 0; k < n; ++k) {
    if (!out.table[k].ok) continue;
    out.table[k].fit_index = static_cast<int>(out.fits.size());
    out.fits.push_back(std::move(fits[k]));
    if (best < 0 || prefer(out.table[k], out.table[best])) best = k;
  }
  if (best < 0) throw SelectionError("select_model: every grid fit failed");
  out.best = out.table[best];
  return out;
}

}  // namespace lbm
