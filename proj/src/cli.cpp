#include "lbm/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "lbm/inference.hpp"
#include "lbm/io.hpp"
#include "lbm/metrics.hpp"
#include "lbm/selection.hpp"
#include "lbm/simulator.hpp"

namespace lbm {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct Options {
  std::string input;
  std::string output_dir = ".";
  std::string format = "ternary";
  std::string kind = "nmar";
  std::string kinds = "mar,nmar";
  std::string nq_range = "2:4";
  std::string nl_range = "2:4";
  std::string truth;
  std::string fit;
  std::string icl_source = "elbo";
  int nq = 3;
  int nl = 3;
  int inits = 5;
  int max_iters = 500;
  int max_inner = 30;
  int warmup = 15;
  int rows = 100;
  int cols = 100;
  int seeds = 5;
  std::uint64_t seed = 0;
  double tol = 1e-6;
  double risk_tol = 0.005;
  std::optional<double> target_risk;
  std::optional<double> epsilon;
  double mu = 1.0;
  double var_a = 1.0;
  double var_b = 1.0;
  double var_p = 1.0;
  double var_q = 1.0;
  bool deterministic = false;
};

// ---------------------------------------------------------------- JSON

json vec_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v[k]);
  return a;
}

json mat_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
  return a;
}

Vector vec_from(const json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t k = 0; k < a.size(); ++k) v[static_cast<Eigen::Index>(k)] = a[k].get<double>();
  return v;
}

Matrix mat_from(const json& a) {
  if (a.empty()) return Matrix();
  Matrix m(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(a[0].size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != a[0].size()) throw std::runtime_error("ragged matrix in JSON");
    for (std::size_t j = 0; j < a[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[i][j].get<double>();
  }
  return m;
}

json params_json(const ModelParams& p) {
  return json{{"kind", to_string(p.kind)}, {"nq", p.nq()},           {"nl", p.nl()},
              {"alpha_rows", vec_json(p.alpha_rows)}, {"alpha_cols", vec_json(p.alpha_cols)},
              {"pi", mat_json(p.pi)},     {"mu", p.mu},              {"var_a", p.var_a},
              {"var_b", p.var_b},         {"var_p", p.var_p},        {"var_q", p.var_q}};
}

ModelParams params_from(const json& j) {
  ModelParams p;
  p.kind = parse_kind(j.at("kind").get<std::string>());
  p.alpha_rows = vec_from(j.at("alpha_rows"));
  p.alpha_cols = vec_from(j.at("alpha_cols"));
  p.pi = mat_from(j.at("pi"));
  p.mu = j.at("mu").get<double>();
  p.var_a = j.at("var_a").get<double>();
  p.var_b = j.at("var_b").get<double>();
  p.var_p = j.at("var_p").get<double>();
  p.var_q = j.at("var_q").get<double>();
  p.validate();
  return p;
}

json varstate_json(const VariationalState& g) {
  return json{{"tau_rows", mat_json(g.tau_rows)}, {"tau_cols", mat_json(g.tau_cols)},
              {"nu_a", vec_json(g.nu_a)},         {"rho_a", vec_json(g.rho_a)},
              {"nu_b", vec_json(g.nu_b)},         {"rho_b", vec_json(g.rho_b)},
              {"nu_p", vec_json(g.nu_p)},         {"rho_p", vec_json(g.rho_p)},
              {"nu_q", vec_json(g.nu_q)},         {"rho_q", vec_json(g.rho_q)}};
}

VariationalState varstate_from(const json& j) {
  VariationalState g;
  g.tau_rows = mat_from(j.at("tau_rows"));
  g.tau_cols = mat_from(j.at("tau_cols"));
  g.nu_a = vec_from(j.at("nu_a"));
  g.rho_a = vec_from(j.at("rho_a"));
  g.nu_b = vec_from(j.at("nu_b"));
  g.rho_b = vec_from(j.at("rho_b"));
  g.nu_p = vec_from(j.at("nu_p"));
  g.rho_p = vec_from(j.at("rho_p"));
  g.nu_q = vec_from(j.at("nu_q"));
  g.rho_q = vec_from(j.at("rho_q"));
  g.validate();
  return g;
}

json labels_json(const Labels& l) { return json(l); }

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string data = buffer.str();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out += hex[digest[k] >> 4];
    out += hex[digest[k] & 15];
  }
  return out;
}

std::vector<int> parse_range(const std::string& text) {
  std::vector<int> out;
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const int lo = std::stoi(text.substr(0, colon));
    const int hi = std::stoi(text.substr(colon + 1));
    for (int k = lo; k <= hi; ++k) out.push_back(k);
  } else {
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  }
  if (out.empty()) throw std::invalid_argument("empty range: " + text);
  return out;
}

std::vector<MissingnessKind> parse_kinds(const std::string& text) {
  std::vector<MissingnessKind> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_kind(item));
  if (out.empty()) throw std::invalid_argument("empty kind list");
  return out;
}

IclSource parse_icl_source(const std::string& text) {
  if (text == "elbo") return IclSource::Elbo;
  if (text == "elbo-minus-entropy") return IclSource::ElboWithoutEntropy;
  throw std::invalid_argument("unknown ICL source: " + text);
}

// ---------------------------------------------------------------- run context

class Run {
 public:
  Run(std::string command, const Options& opt) : command_(std::move(command)), opt_(opt) {}

  const Options& opt() const { return opt_; }
  fs::path out(const std::string& name) const { return fs::path(opt_.output_dir) / name; }

  void digest(const std::string& path) { digests_[path] = sha256_file(path); }

  template <class F>
  auto timed(const std::string& phase, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      timings_.emplace_back(phase, seconds_since(t0));
    } else {
      auto r = f();
      timings_.emplace_back(phase, seconds_since(t0));
      return r;
    }
  }

  FitConfig fit_config() const {
    FitConfig c;
    c.max_vem_iters = opt_.max_iters;
    c.elbo_rel_tol = opt_.tol;
    c.optimizer.max_inner_iters = opt_.max_inner;
    c.n_inits = opt_.inits;
    c.warmup_iters = opt_.warmup;
    c.seed = opt_.seed;
    c.deterministic = opt_.deterministic;
    c.threads = 0;
    return c;
  }

  json manifest() const {
    json m;
    m["command"] = command_;
    m["version"] = kVersion;
    m["seed"] = opt_.seed;
    json d = json::object();
    for (const auto& [path, hash] : digests_) d[path] = hash;
    m["input_digest"] = d;
    m["config"] = config_json();
    if (!opt_.deterministic) m["timings"] = timings_json();
    return m;
  }

  /// Timings go to a sidecar in deterministic mode so result files stay byte-identical.
  void finish() const {
    if (opt_.deterministic) write_json(out("timings.json"), json{{"command", command_}, {"timings", timings_json()}});
  }

 private:
  static double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  json timings_json() const {
    json t = json::object();
    for (const auto& [phase, s] : timings_) t[phase] = s;
    return t;
  }

  json config_json() const {
    const Options& o = opt_;
    json c{{"format", o.format}};
    if (command_ == "simulate") {
      c["rows"] = o.rows;
      c["cols"] = o.cols;
      c["epsilon"] = o.epsilon ? json(*o.epsilon) : json(nullptr);
      c["mnar"] = {{"mu", o.mu}, {"var_a", o.var_a}, {"var_b", o.var_b}, {"var_p", o.var_p}, {"var_q", o.var_q}};
      return c;
    }
    if (command_ == "fit" || command_ == "select") {
      const FitConfig f = fit_config();
      c["max_vem_iters"] = f.max_vem_iters;
      c["elbo_rel_tol"] = f.elbo_rel_tol;
      c["optimizer"] = {{"max_inner_iters", f.optimizer.max_inner_iters},
                        {"gradient_tol", f.optimizer.gradient_tol},
                        {"history_size", f.optimizer.history_size}};
      c["n_inits"] = f.n_inits;
      c["warmup_iters"] = f.warmup_iters;
      c["deterministic"] = f.deterministic;
      c["icl_source"] = o.icl_source;
      if (command_ == "fit") {
        c["nq"] = o.nq;
        c["nl"] = o.nl;
        c["kind"] = o.kind;
      } else {
        c["nq_range"] = o.nq_range;
        c["nl_range"] = o.nl_range;
        c["kinds"] = o.kinds;
      }
      return c;
    }
    if (command_ == "risk") {
      c["rows"] = o.rows;
      c["cols"] = o.cols;
      c["seeds"] = o.seeds;
      c["risk_tol"] = o.risk_tol;
      c["epsilon"] = o.epsilon ? json(*o.epsilon) : json(nullptr);
      c["target_risk"] = o.target_risk ? json(*o.target_risk) : json(nullptr);
      c["mnar"] = {{"mu", o.mu}, {"var_a", o.var_a}, {"var_b", o.var_b}, {"var_p", o.var_p}, {"var_q", o.var_q}};
    }
    return c;
  }

  std::string command_;
  Options opt_;
  std::map<std::string, std::string> digests_;
  std::vector<std::pair<std::string, double>> timings_;
};

json icl_json(const FitResult& fit, int n1, int n2, IclSource source) {
  json j;
  j["value"] = icl(fit, n1, n2, source);
  j["source"] = source == IclSource::Elbo ? "elbo" : "elbo-minus-entropy";
  j["note"] = fit.params.kind == MissingnessKind::MCAR
                  ? "asymptotic form, o(log n) remainder dropped; MCAR variant has no Gaussian correction (extension)"
                  : "asymptotic form, o(log n) remainder dropped";
  return j;
}

json fit_json(const Run& run, const FitResult& fit, int n1, int n2, IclSource source) {
  json j;
  j["manifest"] = run.manifest();
  j["params"] = params_json(fit.params);
  j["elbo_trace"] = fit.elbo_trace;
  j["icl"] = icl_json(fit, n1, n2, source);
  j["fit"] = {{"elbo", fit.elbo()},          {"converged", fit.converged}, {"diverged", fit.diverged},
              {"degenerate", fit.degenerate}, {"n_iters", fit.n_iters},     {"seed", fit.seed},
              {"guard_hits", fit.guard_hits}, {"n_rows", n1},               {"n_cols", n2}};
  j["varstate"] = varstate_json(fit.varstate);
  return j;
}

// ---------------------------------------------------------------- commands

MatrixFormat input_format(const Options& o) { return parse_format(o.format); }

ObservedMatrix load_input(Run& run) {
  const Options& o = run.opt();
  if (o.input.empty()) throw std::invalid_argument("--input is required");
  run.digest(o.input);
  return run.timed("load", [&] { return load_matrix(o.input, input_format(o)); });
}

MnarEffects effects(const Options& o) { return {o.mu, o.var_a, o.var_b, o.var_p, o.var_q}; }

void cmd_simulate(Run& run) {
  const Options& o = run.opt();
  if (!o.epsilon) throw std::invalid_argument("simulate needs --epsilon");
  const ModelParams params = make_benchmark_params(*o.epsilon, effects(o));
  const CompleteSample s = run.timed("simulate", [&] { return sample_lbm(params, o.rows, o.cols, o.seed); });
  run.timed("write", [&] {
    save_matrix(run.out("matrix.csv"), s.x_observed, input_format(o));
    std::string xc, mask;
    for (Eigen::Index i = 0; i < s.x_complete.rows(); ++i) {
      for (Eigen::Index j = 0; j < s.x_complete.cols(); ++j) {
        if (j > 0) {
          xc += ',';
          mask += ',';
        }
        xc += s.x_complete(i, j) ? '1' : '0';
        mask += s.mask(i, j) ? '1' : '0';
      }
      xc += '\n';
      mask += '\n';
    }
    write_text(run.out("x_complete.csv"), xc);
    write_text(run.out("mask.csv"), mask);
    json t;
    t["manifest"] = run.manifest();
    t["params"] = params_json(params);
    t["row_labels"] = labels_json(s.row_labels);
    t["col_labels"] = labels_json(s.col_labels);
    t["a"] = vec_json(s.a);
    t["b"] = vec_json(s.b);
    t["p"] = vec_json(s.p);
    t["q"] = vec_json(s.q);
    t["missing_fraction"] = s.x_observed.missing_fraction();
    write_json(run.out("truth.json"), t);
  });
}

void cmd_fit(Run& run) {
  const Options& o = run.opt();
  const ObservedMatrix x = load_input(run);
  const FitResult fit =
      run.timed("fit", [&] { return multi_start_fit(x, o.nq, o.nl, parse_kind(o.kind), run.fit_config()); });
  run.timed("write", [&] {
    write_json(run.out("fit.json"),
               fit_json(run, fit, static_cast<int>(x.rows()), static_cast<int>(x.cols()), parse_icl_source(o.icl_source)));
  });
}

json entry_json(const SelectionEntry& e) {
  json j{{"nq", e.nq}, {"nl", e.nl}, {"kind", to_string(e.kind)}, {"ok", e.ok}};
  j["icl"] = e.ok ? json(e.icl) : json(nullptr);
  j["elbo"] = e.ok ? json(e.elbo) : json(nullptr);
  if (!e.ok) j["error"] = e.error;
  return j;
}

void cmd_select(Run& run) {
  const Options& o = run.opt();
  const ObservedMatrix x = load_input(run);
  const IclSource source = parse_icl_source(o.icl_source);
  const SelectionResult sel = run.timed("select", [&] {
    return select_model(x, parse_range(o.nq_range), parse_range(o.nl_range), parse_kinds(o.kinds), run.fit_config(),
                        source);
  });
  run.timed("write", [&] {
    std::string csv = "nq,nl,kind,icl,elbo,ok,error\n";
    json table = json::array();
    for (const SelectionEntry& e : sel.table) {
      csv += std::to_string(e.nq) + "," + std::to_string(e.nl) + "," + std::string(to_string(e.kind)) + "," +
             (e.ok ? num(e.icl) : "") + "," + (e.ok ? num(e.elbo) : "") + "," + (e.ok ? "1" : "0") + ",\"" +
             e.error + "\"\n";
      table.push_back(entry_json(e));
    }
    write_text(run.out("selection.csv"), csv);
    json j;
    j["manifest"] = run.manifest();
    j["best"] = entry_json(sel.best);
    j["table"] = table;
    j["note"] = "ICL in asymptotic form, o(log n) remainder dropped; ties go to smaller nq + nl, then the simpler kind";
    write_json(run.out("selection.json"), j);
    const int n1 = static_cast<int>(x.rows());
    const int n2 = static_cast<int>(x.cols());
    write_json(run.out("best_fit.json"), fit_json(run, sel.fits[sel.best.fit_index], n1, n2, source));
  });
}

void cmd_risk(Run& run) {
  const Options& o = run.opt();
  json j;
  if (!o.input.empty()) {
    if (o.truth.empty()) throw std::invalid_argument("risk with --input needs --truth");
    const ObservedMatrix x = load_input(run);
    run.digest(o.truth);
    const ModelParams truth = params_from(read_json(o.truth).at("params"));
    RiskConfig rc;
    rc.seed = o.seed;
    const RiskResult r = run.timed("risk", [&] { return conditional_bayes_risk(x, truth, rc); });
    j["mode"] = "estimate";
    j["risk"] = r.risk;
    j["exact"] = r.exact;
    j["converged"] = r.converged;
    j["iterations"] = r.iterations;
    if (!r.diagnostic.empty()) j["diagnostic"] = r.diagnostic;
  } else if (o.target_risk) {
    CalibrationConfig cc;
    cc.n_seeds = o.seeds;
    cc.tol = o.risk_tol;
    const CalibrationResult c =
        run.timed("calibrate", [&] { return calibrate_epsilon(*o.target_risk, o.rows, o.cols, effects(o), o.seed, cc); });
    j["mode"] = "calibrate";
    j["target_risk"] = *o.target_risk;
    j["epsilon"] = c.epsilon;
    j["median_risk"] = c.median_risk;
    j["probes"] = c.probes;
  } else if (o.epsilon) {
    CalibrationConfig cc;
    cc.n_seeds = o.seeds;
    const double r =
        run.timed("risk", [&] { return median_benchmark_risk(*o.epsilon, o.rows, o.cols, effects(o), o.seed, cc); });
    j["mode"] = "benchmark";
    j["epsilon"] = *o.epsilon;
    j["median_risk"] = r;
  } else {
    throw std::invalid_argument("risk needs --input with --truth, --target-risk, or --epsilon");
  }
  json out;
  out["manifest"] = run.manifest();
  out["result"] = j;
  write_json(run.out("risk.json"), out);
}

struct LoadedFit {
  ModelParams params;
  VariationalState gamma;
};

LoadedFit load_fit(Run& run) {
  const Options& o = run.opt();
  if (o.fit.empty()) throw std::invalid_argument("--fit is required");
  run.digest(o.fit);
  const json j = read_json(o.fit);
  return {params_from(j.at("params")), varstate_from(j.at("varstate"))};
}

void cmd_eval(Run& run) {
  const Options& o = run.opt();
  if (o.truth.empty()) throw std::invalid_argument("--truth is required");
  const LoadedFit fit = load_fit(run);
  run.digest(o.truth);
  const json t = read_json(o.truth);
  const ModelParams truth = params_from(t.at("params"));
  CompleteSample sample;
  sample.row_labels = t.at("row_labels").get<Labels>();
  sample.col_labels = t.at("col_labels").get<Labels>();
  sample.a = vec_from(t.at("a"));
  sample.b = vec_from(t.at("b"));
  sample.p = vec_from(t.at("p"));
  sample.q = vec_from(t.at("q"));
  if (sample.row_labels.size() != static_cast<std::size_t>(fit.gamma.n_rows()) ||
      sample.col_labels.size() != static_cast<std::size_t>(fit.gamma.n_cols()))
    throw std::invalid_argument("truth and fit have different matrix dimensions");

  const LabelAssignment truth_labels{sample.row_labels, sample.col_labels};
  const LabelAssignment pred = map_assignments(fit.gamma);
  const int kq = std::max(truth.nq(), fit.params.nq());
  const int kl = std::max(truth.nl(), fit.params.nl());
  const ItemLoss loss = l_item(truth_labels, pred, kq, kl, true);
  json m;
  m["l_item"] = loss.total;
  m["row_error"] = loss.row;
  m["col_error"] = loss.col;
  if (truth.nq() == fit.params.nq() && truth.nl() == fit.params.nl()) {
    const Alignment a = align_labels(truth_labels, pred, kq, kl);
    m["pi_max_error"] = param_max_error(truth, fit.params, a.row_perm, a.col_perm);
  } else {
    m["pi_max_error"] = nullptr;
  }
  const LatentMse mse = latent_mse(sample, fit.gamma);
  m["latent_mse"] = {{"a", mse.a}, {"b", mse.b}, {"p", mse.p}, {"q", mse.q}};
  json out;
  out["manifest"] = run.manifest();
  out["metrics"] = m;
  write_json(run.out("eval.json"), out);
}

void cmd_report(Run& run) {
  const LoadedFit fit = load_fit(run);
  const LabelAssignment labels = map_assignments(fit.gamma);
  auto order_csv = [](const Labels& l, const char* name) {
    std::vector<int> idx(l.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return l[a] < l[b]; });
    std::string csv = std::string(name) + ",class\n";
    for (int i : idx) csv += std::to_string(i) + "," + std::to_string(l[i]) + "\n";
    return csv;
  };
  write_text(run.out("row_order.csv"), order_csv(labels.rows, "row"));
  write_text(run.out("col_order.csv"), order_csv(labels.cols, "col"));

  const Matrix& pi = fit.params.pi;
  std::string grid = "row_class";
  for (Eigen::Index l = 0; l < pi.cols(); ++l) grid += ",col_class_" + std::to_string(l);
  grid += "\n";
  for (Eigen::Index q = 0; q < pi.rows(); ++q) {
    grid += std::to_string(q);
    for (Eigen::Index l = 0; l < pi.cols(); ++l) grid += "," + num(pi(q, l));
    grid += "\n";
  }
  write_text(run.out("block_probs.csv"), grid);

  auto scatter = [](const Vector& first, const Vector& second, Eigen::Index n, const char* header, const Labels& l) {
    std::string csv = header;
    for (Eigen::Index i = 0; i < n; ++i) {
      csv += std::to_string(i) + "," + std::to_string(l[i]) + "," + num(first.size() ? first[i] : 0.0) + "," +
             num(second.size() ? second[i] : 0.0) + "\n";
    }
    return csv;
  };
  write_text(run.out("row_propensities.csv"),
             scatter(fit.gamma.nu_a, fit.gamma.nu_b, fit.gamma.n_rows(), "row,class,nu_a,nu_b\n", labels.rows));
  write_text(run.out("col_propensities.csv"),
             scatter(fit.gamma.nu_p, fit.gamma.nu_q, fit.gamma.n_cols(), "col,class,nu_p,nu_q\n", labels.cols));

  json out;
  out["manifest"] = run.manifest();
  out["block_probs"] = mat_json(pi);
  out["row_classes"] = labels_json(labels.rows);
  out["col_classes"] = labels_json(labels.cols);
  write_json(run.out("report.json"), out);
}

// ---------------------------------------------------------------- argument handling

/// Flat key=value config file turned into --key=value arguments.
std::vector<std::string> config_arguments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::vector<std::string> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line is not key=value", number, 0);
    auto strip = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r\"");
      const auto b = s.find_last_not_of(" \t\r\"");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = strip(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    out.push_back("--" + key + "=" + strip(line.substr(eq + 1)));
  }
  return out;
}

/// Rebuilds the argument list as: subcommand, config values, SEED, command line.
/// Later occurrences win, which yields flags > SEED > config file > defaults.
std::vector<std::string> layered_arguments(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  std::vector<std::string> cli(args.begin() + 1, args.end());
  std::string config;
  bool seed_on_cli = false;
  for (std::size_t k = 0; k < cli.size(); ++k) {
    if (cli[k] == "--config" && k + 1 < cli.size()) config = cli[k + 1];
    if (cli[k].rfind("--config=", 0) == 0) config = cli[k].substr(9);
    if (cli[k] == "--seed" || cli[k].rfind("--seed=", 0) == 0) seed_on_cli = true;
  }
  std::vector<std::string> out{args[0]};
  if (!config.empty()) {
    const auto extra = config_arguments(config);
    out.insert(out.end(), extra.begin(), extra.end());
  }
  if (!seed_on_cli) {
    if (const char* env = std::getenv("SEED")) out.push_back(std::string("--seed=") + env);
  }
  out.insert(out.end(), cli.begin(), cli.end());
  return out;
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", "Flat key=value config file (flags take precedence)");
  sub->add_option("--output-dir", o.output_dir, "Directory for result files");
  sub->add_option("--seed", o.seed, "Random seed (env SEED overrides the config file)");
  sub->add_option("--format", o.format, "Matrix format: ternary or votes");
  sub->add_flag("--deterministic", o.deterministic, "Keep timings out of result files");
}

void add_fit_options(CLI::App* sub, Options& o) {
  sub->add_option("--input", o.input, "Input matrix file");
  sub->add_option("--inits", o.inits, "Number of initializations");
  sub->add_option("--tol", o.tol, "Relative ELBO tolerance");
  sub->add_option("--max-iters", o.max_iters, "Maximum VEM iterations");
  sub->add_option("--max-inner", o.max_inner, "Maximum inner quasi-Newton iterations");
  sub->add_option("--warmup", o.warmup, "Warm-up VEM iterations per initialization");
  sub->add_option("--icl-source", o.icl_source, "elbo or elbo-minus-entropy");
}

void add_effects(CLI::App* sub, Options& o) {
  sub->add_option("--rows", o.rows, "Number of rows");
  sub->add_option("--cols", o.cols, "Number of columns");
  sub->add_option("--epsilon", o.epsilon, "Benchmark difficulty epsilon");
  sub->add_option("--mu", o.mu, "Global propensity mu");
  sub->add_option("--var-a", o.var_a, "Variance of A");
  sub->add_option("--var-b", o.var_b, "Variance of B");
  sub->add_option("--var-p", o.var_p, "Variance of P");
  sub->add_option("--var-q", o.var_q, "Variance of Q");
}

void write_failure(const Options& o, const std::string& command, const std::string& what) {
  try {
    fs::create_directories(o.output_dir);
    write_json(fs::path(o.output_dir) / "FAILED.json", json{{"command", command}, {"error", what}, {"version", kVersion}});
  } catch (...) {
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& raw) {
  Options o;
  std::string command;
  CLI::App app{"Latent block model with MNAR missingness: simulate, fit, select, risk, eval, report"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  CLI::App* simulate = app.add_subcommand("simulate", "Simulate a benchmark matrix with ground truth");
  add_common(simulate, o);
  add_effects(simulate, o);

  CLI::App* fit = app.add_subcommand("fit", "Fit one (nq, nl, kind) model");
  add_common(fit, o);
  add_fit_options(fit, o);
  fit->add_option("--nq", o.nq, "Row classes");
  fit->add_option("--nl", o.nl, "Column classes");
  fit->add_option("--kind", o.kind, "mcar, mar or nmar");

  CLI::App* select = app.add_subcommand("select", "ICL grid search over class counts and kinds");
  add_common(select, o);
  add_fit_options(select, o);
  select->add_option("--nq-range", o.nq_range, "Row class counts, lo:hi or a,b,c");
  select->add_option("--nl-range", o.nl_range, "Column class counts, lo:hi or a,b,c");
  select->add_option("--kinds", o.kinds, "Comma-separated kinds");

  CLI::App* risk = app.add_subcommand("risk", "Conditional Bayes risk or epsilon calibration");
  add_common(risk, o);
  add_effects(risk, o);
  risk->add_option("--input", o.input, "Observed matrix (with --truth)");
  risk->add_option("--truth", o.truth, "truth.json from simulate");
  risk->add_option("--target-risk", o.target_risk, "Calibrate epsilon to this risk");
  risk->add_option("--seeds", o.seeds, "Matrices per median risk");
  risk->add_option("--risk-tol", o.risk_tol, "Calibration tolerance");

  CLI::App* eval = app.add_subcommand("eval", "Classification and recovery metrics against the truth");
  add_common(eval, o);
  eval->add_option("--truth", o.truth, "truth.json from simulate")->required();
  eval->add_option("--fit", o.fit, "fit.json from fit or select")->required();

  CLI::App* report = app.add_subcommand("report", "Block summary and propensity scatter data");
  add_common(report, o);
  report->add_option("--fit", o.fit, "fit.json from fit or select")->required();

  std::vector<std::string> args;
  try {
    args = layered_arguments(raw);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  if (!args.empty()) command = args[0];
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    fs::create_directories(o.output_dir);
    fs::remove(fs::path(o.output_dir) / "FAILED.json");
    Run run(command, o);
    if (command == "simulate") cmd_simulate(run);
    else if (command == "fit") cmd_fit(run);
    else if (command == "select") cmd_select(run);
    else if (command == "risk") cmd_risk(run);
    else if (command == "eval") cmd_eval(run);
    else if (command == "report") cmd_report(run);
    run.finish();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    write_failure(o, command, e.what());
    return 1;
  }
  return 0;
}

}  // namespace lbm
