#ifndef CONDSGD_EXPERIMENT_HPP
#define CONDSGD_EXPERIMENT_HPP

// Experiment configuration and the (method x seed) runner behind
// `condsgd run`.
//
// Config files are flat INI: global keys first, then optional sections named
// after a method that override schedule keys for that method only.
//
//   problem = synthetic
//   n = 1500
//   d = 25
//   methods = sgd, csgd-adaptive
//   batch = 16
//   runs = 100
//
//   [csgd-adaptive]
//   eta = 15

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "condsgd/errors.hpp"
#include "condsgd/montecarlo.hpp"
#include "condsgd/optimizer.hpp"
#include "condsgd/problems.hpp"
#include "condsgd/random.hpp"
#include "json.hpp"

namespace condsgd {

inline constexpr const char* kVersion = "0.1.0";

enum class ProblemKind { quadratic, synthetic, adult };
enum class Method { sgd, csgd_equal, csgd_adaptive, polyak };

inline std::string to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::quadratic: return "quadratic";
    case ProblemKind::synthetic: return "synthetic";
    case ProblemKind::adult: return "adult";
  }
  return "?";
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::sgd: return "sgd";
    case Method::csgd_equal: return "csgd-equal";
    case Method::csgd_adaptive: return "csgd-adaptive";
    case Method::polyak: return "polyak";
  }
  return "?";
}

inline std::optional<Method> parse_method(const std::string& s) {
  for (Method m : {Method::sgd, Method::csgd_equal, Method::csgd_adaptive, Method::polyak}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

struct ProblemSpec {
  ProblemKind kind = ProblemKind::synthetic;
  // synthetic
  std::size_t n = 1500;
  std::size_t d = 25;
  std::uint64_t data_seed = 1;
  // adult
  std::string path;
  // quadratic: H = diag(h_max .. h_min), Gamma = noise^2 I, x* = (1, ..., 1)
  std::size_t dim = 25;
  double h_min = 0.1;
  double h_max = 1.0;
  double noise = 1.0;
  double hessian_noise = 0.0;
  // logistic; unset means 1/n
  std::optional<double> lambda;

  friend bool operator==(const ProblemSpec&, const ProblemSpec&) = default;
};

/// Per-method schedule overrides.
struct ScheduleOverride {
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<std::string> gamma;
  std::optional<double> eta;
  std::optional<std::size_t> window;

  friend bool operator==(const ScheduleOverride&, const ScheduleOverride&) = default;
};

struct ExperimentConfig {
  ProblemSpec problem;
  std::vector<Method> methods{Method::sgd, Method::csgd_adaptive};
  double alpha = 1.0;
  double beta = 1.0;
  std::string gamma = "sqrt";  // "sqrt" or a positive constant
  double eta = 10.0;
  std::size_t window = 0;      // 0: unlimited
  std::map<Method, ScheduleOverride> overrides;
  std::size_t batch = 16;
  std::size_t iterations = 1000;
  std::size_t runs = 100;
  std::uint64_t seed = 1;
  std::string output = "condsgd-out";
  std::size_t stride = 0;      // 0: max(1, iterations / 500)
  bool independent_hessian_batch = false;
  unsigned threads = 0;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error(key, "expected a real number, got \"" + v + "\"");
  }
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw config_error(key, "expected a non-negative integer, got \"" + v + "\"");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw config_error(key, "integer out of range: \"" + v + "\"");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw config_error(key, "expected true or false, got \"" + v + "\"");
}

inline std::string format_real(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

inline void check_gamma(const std::string& key, const std::string& v) {
  if (v == "sqrt") return;
  if (!(parse_real(key, v) > 0.0)) throw config_error(key, "must be \"sqrt\" or a constant > 0");
}

inline void check_beta(const std::string& key, double b) {
  if (!(b > 0.5 && b <= 1.0)) throw config_error(key, "must lie in (1/2, 1]");
}

inline void check_alpha(const std::string& key, double a) {
  if (!(a > 0.0)) throw config_error(key, "must be > 0");
}

inline void check_eta(const std::string& key, double e) {
  if (!(e >= 0.0)) throw config_error(key, "must be >= 0");
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  using namespace detail;
  const ProblemSpec& p = c.problem;
  if (p.kind == ProblemKind::synthetic) {
    if (p.n < 1) throw config_error("n", "must be >= 1");
    if (p.d < 1) throw config_error("d", "must be >= 1");
  }
  if (p.kind == ProblemKind::adult && p.path.empty()) throw config_error("path", "required for problem = adult");
  if (p.kind == ProblemKind::quadratic) {
    if (p.dim < 1) throw config_error("dim", "must be >= 1");
    if (!(p.h_min > 0.0)) throw config_error("h_min", "must be > 0");
    if (!(p.h_max >= p.h_min)) throw config_error("h_max", "must be >= h_min");
    if (!(p.noise >= 0.0)) throw config_error("noise", "must be >= 0");
    if (!(p.hessian_noise >= 0.0)) throw config_error("hessian_noise", "must be >= 0");
  }
  if (p.lambda && !(*p.lambda >= 0.0)) throw config_error("lambda", "must be >= 0");
  if (c.methods.empty()) throw config_error("methods", "must name at least one method");
  check_alpha("alpha", c.alpha);
  check_beta("beta", c.beta);
  check_gamma("gamma", c.gamma);
  check_eta("eta", c.eta);
  for (const auto& [m, o] : c.overrides) {
    const std::string sec = to_string(m) + ".";
    if (o.alpha) check_alpha(sec + "alpha", *o.alpha);
    if (o.beta) check_beta(sec + "beta", *o.beta);
    if (o.gamma) check_gamma(sec + "gamma", *o.gamma);
    if (o.eta) check_eta(sec + "eta", *o.eta);
  }
  if (c.batch < 1) throw config_error("batch", "must be >= 1");
  if (c.iterations < 1) throw config_error("iterations", "must be >= 1");
  if (c.runs < 1) throw config_error("runs", "must be >= 1");
}

/// Parses the INI text; every key not listed in the documentation is an error.
inline ExperimentConfig parse_config_string(const std::string& text) {
  namespace pt = boost::property_tree;
  using namespace detail;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw config_error("<file>", e.message() + " at line " + std::to_string(e.line()));
  }

  ExperimentConfig c;
  bool have_problem = false;
  for (const auto& [key, node] : tree) {
    if (!node.empty()) {
      const auto m = parse_method(key);
      if (!m) throw config_error("[" + key + "]", "section must be a method name");
      ScheduleOverride o;
      for (const auto& [k, v] : node) {
        const std::string full = key + "." + k;
        const std::string val = v.data();
        if (k == "alpha") o.alpha = parse_real(full, val);
        else if (k == "beta") o.beta = parse_real(full, val);
        else if (k == "gamma") o.gamma = val;
        else if (k == "eta") o.eta = parse_real(full, val);
        else if (k == "window") o.window = parse_count(full, val);
        else throw config_error(full, "unknown key (sections accept alpha, beta, gamma, eta, window)");
      }
      c.overrides[*m] = o;
      continue;
    }
    const std::string v = node.data();
    ProblemSpec& p = c.problem;
    if (key == "problem") {
      have_problem = true;
      if (v == "quadratic") p.kind = ProblemKind::quadratic;
      else if (v == "synthetic") p.kind = ProblemKind::synthetic;
      else if (v == "adult") p.kind = ProblemKind::adult;
      else throw config_error(key, "must be quadratic, synthetic or adult");
    } else if (key == "n") p.n = parse_count(key, v);
    else if (key == "d") p.d = parse_count(key, v);
    else if (key == "data_seed") p.data_seed = parse_count(key, v);
    else if (key == "path") p.path = v;
    else if (key == "dim") p.dim = parse_count(key, v);
    else if (key == "h_min") p.h_min = parse_real(key, v);
    else if (key == "h_max") p.h_max = parse_real(key, v);
    else if (key == "noise") p.noise = parse_real(key, v);
    else if (key == "hessian_noise") p.hessian_noise = parse_real(key, v);
    else if (key == "lambda") {
      if (v == "auto") p.lambda.reset();
      else p.lambda = parse_real(key, v);
    } else if (key == "methods") {
      c.methods.clear();
      std::istringstream ms(v);
      std::string item;
      std::set<Method> seen;
      while (std::getline(ms, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        const auto m = parse_method(item);
        if (!m) throw config_error(key, "unknown method \"" + item + "\" (sgd, csgd-equal, csgd-adaptive, polyak)");
        if (seen.insert(*m).second) c.methods.push_back(*m);
      }
    } else if (key == "alpha") c.alpha = parse_real(key, v);
    else if (key == "beta") c.beta = parse_real(key, v);
    else if (key == "gamma") c.gamma = v;
    else if (key == "eta") c.eta = parse_real(key, v);
    else if (key == "window") c.window = parse_count(key, v);
    else if (key == "batch") c.batch = parse_count(key, v);
    else if (key == "iterations") c.iterations = parse_count(key, v);
    else if (key == "runs") c.runs = parse_count(key, v);
    else if (key == "seed") c.seed = parse_count(key, v);
    else if (key == "output") c.output = v;
    else if (key == "stride") c.stride = parse_count(key, v);
    else if (key == "independent_hessian_batch") c.independent_hessian_batch = parse_bool(key, v);
    else if (key == "threads") c.threads = static_cast<unsigned>(parse_count(key, v));
    else throw config_error(key, "unknown key");
  }
  if (!have_problem) throw config_error("problem", "required");
  validate(c);
  return c;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_string(ss.str());
}

/// Canonical text form; parse_config_string(serialize_config(c)) == c.
inline std::string serialize_config(const ExperimentConfig& c) {
  using detail::format_real;
  std::ostringstream os;
  const ProblemSpec& p = c.problem;
  os << "problem = " << to_string(p.kind) << '\n'
     << "n = " << p.n << '\n'
     << "d = " << p.d << '\n'
     << "data_seed = " << p.data_seed << '\n';
  if (!p.path.empty()) os << "path = " << p.path << '\n';
  os << "dim = " << p.dim << '\n'
     << "h_min = " << format_real(p.h_min) << '\n'
     << "h_max = " << format_real(p.h_max) << '\n'
     << "noise = " << format_real(p.noise) << '\n'
     << "hessian_noise = " << format_real(p.hessian_noise) << '\n'
     << "lambda = " << (p.lambda ? format_real(*p.lambda) : std::string("auto")) << '\n';
  os << "methods = ";
  for (std::size_t i = 0; i < c.methods.size(); ++i) os << (i ? ", " : "") << to_string(c.methods[i]);
  os << '\n'
     << "alpha = " << format_real(c.alpha) << '\n'
     << "beta = " << format_real(c.beta) << '\n'
     << "gamma = " << c.gamma << '\n'
     << "eta = " << format_real(c.eta) << '\n'
     << "window = " << c.window << '\n'
     << "batch = " << c.batch << '\n'
     << "iterations = " << c.iterations << '\n'
     << "runs = " << c.runs << '\n'
     << "seed = " << c.seed << '\n'
     << "output = " << c.output << '\n'
     << "stride = " << c.stride << '\n'
     << "independent_hessian_batch = " << (c.independent_hessian_batch ? "true" : "false") << '\n'
     << "threads = " << c.threads << '\n';
  for (const auto& [m, o] : c.overrides) {
    os << "\n[" << to_string(m) << "]\n";
    if (o.alpha) os << "alpha = " << format_real(*o.alpha) << '\n';
    if (o.beta) os << "beta = " << format_real(*o.beta) << '\n';
    if (o.gamma) os << "gamma = " << *o.gamma << '\n';
    if (o.eta) os << "eta = " << format_real(*o.eta) << '\n';
    if (o.window) os << "window = " << *o.window << '\n';
  }
  return os.str();
}

/// Effective schedule of a method: globals, then the method's overrides.
inline Schedule schedule_for(const ExperimentConfig& c, Method m) {
  Schedule s;
  s.alpha = c.alpha;
  s.beta = c.beta;
  std::string gamma = c.gamma;
  s.eta = c.eta;
  std::size_t window = c.window;
  if (auto it = c.overrides.find(m); it != c.overrides.end()) {
    const ScheduleOverride& o = it->second;
    if (o.alpha) s.alpha = *o.alpha;
    if (o.beta) s.beta = *o.beta;
    if (o.gamma) gamma = *o.gamma;
    if (o.eta) s.eta = *o.eta;
    if (o.window) window = *o.window;
  }
  if (gamma == "sqrt") {
    s.gamma_rule = GammaRule::sqrt_k;
  } else {
    s.gamma_rule = GammaRule::constant;
    s.gamma_constant = std::stod(gamma);
  }
  s.weighting = m == Method::csgd_adaptive ? Weighting::adaptive : Weighting::equal;
  if (window != 0) s.window = window;
  return s;
}

inline RunOptions run_options_for(const ExperimentConfig& c, Method m) {
  RunOptions o;
  o.n_iters = c.iterations;
  o.stride = c.stride;
  o.conditioning = (m == Method::csgd_equal || m == Method::csgd_adaptive) ? Conditioning::mixture
                                                                           : Conditioning::none;
  o.log_polyak = m == Method::polyak;
  return o;
}

// ---------------------------------------------------------------------------

using ExperimentProblem = std::variant<QuadraticProblem, LogisticProblem>;

inline ExperimentProblem build_problem(const ExperimentConfig& c) {
  const ProblemSpec& p = c.problem;
  if (p.kind == ProblemKind::quadratic) {
    Vector h(p.dim);
    for (std::size_t i = 0; i < p.dim; ++i) {
      const double t = p.dim == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(p.dim - 1);
      h[i] = p.h_max + t * (p.h_min - p.h_max);
    }
    Matrix gamma = (p.noise * p.noise) * Matrix::identity(p.dim);
    return QuadraticProblem(make_ground_truth(std::move(h), std::move(gamma), Vector(p.dim, 1.0)),
                            p.hessian_noise);
  }
  auto data = std::make_shared<Dataset>(p.kind == ProblemKind::synthetic
                                            ? generate_classification_data(p.n, p.d, p.data_seed)
                                            : load_adult_income(p.path));
  const double lambda = p.lambda ? *p.lambda : 1.0 / static_cast<double>(data->n());
  LogisticProblem lp(std::move(data), lambda, c.batch, c.independent_hessian_batch);
  lp.compute_optimum();
  return lp;
}

struct CurvePoint {
  std::size_t k = 0;
  double mean_loss = 0.0;
  double std_loss = 0.0;
};

struct RunFailure {
  std::uint64_t seed = 0;
  std::size_t run = 0;
  std::string message;
};

struct MethodReport {
  Method method = Method::sgd;
  std::vector<CurvePoint> curve;
  std::vector<Trajectory> runs;  // empty trajectories for failed runs
  std::vector<RunFailure> failures;
  double wall_seconds = 0.0;
};

struct RunReport {
  std::vector<MethodReport> methods;
  std::string config_text;
  std::string version = kVersion;
  double f_star = std::numeric_limits<double>::quiet_NaN();
};

/// Mean and sample standard deviation across runs at each logged k.
/// Failed runs (no records) are skipped.
inline std::vector<CurvePoint> aggregate_curves(const std::vector<Trajectory>& runs) {
  const Trajectory* ref = nullptr;
  for (const auto& t : runs)
    if (!t.records.empty()) { ref = &t; break; }
  if (!ref) return {};
  std::vector<CurvePoint> curve(ref->records.size());
  for (std::size_t p = 0; p < curve.size(); ++p) {
    curve[p].k = ref->records[p].k;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& t : runs) {
      if (t.records.empty()) continue;
      sum += t.records[p].loss;
      ++n;
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& t : runs) {
      if (t.records.empty()) continue;
      ss += (t.records[p].loss - mean) * (t.records[p].loss - mean);
    }
    curve[p].mean_loss = mean;
    curve[p].std_loss = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  }
  return curve;
}

/// Runs every (method, seed) cell. Run r of every method uses
/// derive_seed(cfg.seed, r), so methods see the same gradient noise.
inline RunReport run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  const ExperimentProblem problem = build_problem(cfg);
  RunReport rep;
  rep.config_text = serialize_config(cfg);
  std::visit([&](const auto& p) { rep.f_star = p.f_star(); }, problem);

  const std::size_t dim = std::visit([](const auto& p) { return p.dim(); }, problem);
  const Vector x0(dim, 0.0);

  rep.methods.resize(cfg.methods.size());
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    rep.methods[m].method = cfg.methods[m];
    rep.methods[m].runs.resize(cfg.runs);
  }
  std::vector<std::string> errors(cfg.methods.size() * cfg.runs);
  std::vector<double> seconds(cfg.methods.size() * cfg.runs, 0.0);

  parallel_for(cfg.methods.size() * cfg.runs, cfg.threads, [&](std::size_t cell) {
    const std::size_t m = cell / cfg.runs;
    const std::size_t r = cell % cfg.runs;
    const Method method = cfg.methods[m];
    const Schedule s = schedule_for(cfg, method);
    const RunOptions o = run_options_for(cfg, method);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      rep.methods[m].runs[r] = std::visit(
          [&](const auto& p) { return run_trajectory(p, x0, s, derive_seed(cfg.seed, r), o); },
          problem);
    } catch (const divergence_error& e) {
      errors[cell] = e.what();
    }
    seconds[cell] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });

  for (std::size_t m = 0; m < rep.methods.size(); ++m) {
    MethodReport& mr = rep.methods[m];
    for (std::size_t r = 0; r < cfg.runs; ++r) {
      const std::size_t cell = m * cfg.runs + r;
      mr.wall_seconds += seconds[cell];
      if (!errors[cell].empty()) mr.failures.push_back({derive_seed(cfg.seed, r), r, errors[cell]});
    }
    mr.curve = aggregate_curves(mr.runs);
  }
  return rep;
}

namespace detail {

/// Writes `content` to `path` through a temporary file and a rename.
inline void write_atomically(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw io_error("cannot write " + tmp.string());
    os << content;
    if (!os) throw io_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os << std::setprecision(17) << "k,mean_loss,std_loss\n";
  for (const auto& p : curve) os << p.k << ',' << p.mean_loss << ',' << p.std_loss << '\n';
  return os.str();
}

inline nlohmann::json report_json(const RunReport& rep) {
  nlohmann::json j;
  j["version"] = rep.version;
  j["timestamp"] = detail::utc_timestamp();
  j["config"] = rep.config_text;
  j["f_star"] = rep.f_star;
  j["methods"] = nlohmann::json::array();
  for (const auto& m : rep.methods) {
    nlohmann::json jm;
    jm["method"] = to_string(m.method);
    jm["wall_seconds"] = m.wall_seconds;
    jm["curve"] = nlohmann::json::array();
    for (const auto& p : m.curve) jm["curve"].push_back({{"k", p.k}, {"mean_loss", p.mean_loss}, {"std_loss", p.std_loss}});
    jm["failures"] = nlohmann::json::array();
    for (const auto& f : m.failures) jm["failures"].push_back({{"run", f.run}, {"seed", f.seed}, {"error", f.message}});
    j["methods"].push_back(jm);
  }
  return j;
}

/// Writes report.json, curves_<method>.csv and runs/<method>_<r>.csv into `dir`.
inline void write_report(const std::filesystem::path& dir, const RunReport& rep) {
  std::filesystem::create_directories(dir / "runs");
  for (const auto& m : rep.methods) {
    const std::string name = to_string(m.method);
    detail::write_atomically(dir / ("curves_" + name + ".csv"), curve_csv(m.curve));
    for (std::size_t r = 0; r < m.runs.size(); ++r) {
      if (m.runs[r].records.empty()) continue;
      std::ostringstream os;
      write_trajectory_csv(os, m.runs[r]);
      detail::write_atomically(dir / "runs" / (name + "_" + std::to_string(r) + ".csv"), os.str());
    }
  }
  detail::write_atomically(dir / "report.json", report_json(rep).dump(2) + "\n");
}

}  // namespace condsgd

#endif
