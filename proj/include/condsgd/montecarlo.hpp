#ifndef CONDSGD_MONTECARLO_HPP
#define CONDSGD_MONTECARLO_HPP

// Ensembles of independent trajectories and moment comparisons against the
// asymptotic theory.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "condsgd/asymptotics.hpp"
#include "condsgd/errors.hpp"
#include "condsgd/linalg.hpp"
#include "condsgd/optimizer.hpp"
#include "condsgd/problems.hpp"
#include "condsgd/random.hpp"
#include "json.hpp"

namespace condsgd {

struct EnsembleConfig {
  Vector x0;
  std::size_t n_iters = 1;
  Schedule schedule;
  Conditioning conditioning = Conditioning::mixture;
  std::optional<Matrix> fixed_conditioner;
  /// Worker threads; 0 uses the hardware concurrency.
  unsigned threads = 0;
};

struct EnsembleResult {
  std::size_t R = 0;
  std::size_t k_final = 0;
  Matrix rescaled_errors;  // R x d, rows (x_k - x*) / sqrt(alpha_k)
  Vector excess_risks;     // k (F(x_k) - F*)
  std::vector<std::uint64_t> seeds;
};

/// Some trajectories diverged. The seeds that failed are listed.
class ensemble_error : public error {
 public:
  ensemble_error(const std::string& what, std::vector<std::uint64_t> failed)
      : error(what), failed_(std::move(failed)) {}
  const std::vector<std::uint64_t>& failed_seeds() const noexcept { return failed_; }

 private:
  std::vector<std::uint64_t> failed_;
};

inline unsigned worker_count(unsigned requested, std::size_t jobs) {
  unsigned n = requested != 0 ? requested : std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

/// Runs `job(i)` for i in [0, jobs) on a pool of threads. The first
/// exception thrown by any job is rethrown after all workers finish.
template <class Job>
void parallel_for(std::size_t jobs, unsigned threads, Job&& job) {
  const unsigned n = worker_count(threads, jobs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs) return;
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(n);
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

/// R independent trajectories; trajectory i uses derive_seed(master_seed, i).
template <ProblemWithOptimum P>
EnsembleResult run_ensemble(const P& problem, const EnsembleConfig& cfg, std::size_t R,
                            std::uint64_t master_seed) {
  if (R == 0) throw precondition_error("ensemble needs R >= 1");
  if (problem.reference_hessian() == nullptr) {
    throw precondition_error("ensemble needs a problem with known optimum");
  }
  const std::size_t d = problem.dim();
  EnsembleResult ens;
  ens.R = R;
  ens.k_final = cfg.n_iters;
  ens.rescaled_errors = Matrix(R, d);
  ens.excess_risks.assign(R, 0.0);
  ens.seeds.resize(R);
  for (std::size_t i = 0; i < R; ++i) ens.seeds[i] = derive_seed(master_seed, i);
  if (std::set<std::uint64_t>(ens.seeds.begin(), ens.seeds.end()).size() != R) {
    throw error("derived seeds collide");
  }

  RunOptions opt;
  opt.n_iters = cfg.n_iters;
  opt.stride = cfg.n_iters;
  opt.conditioning = cfg.conditioning;
  opt.fixed_conditioner = cfg.fixed_conditioner;
  opt.evaluate_loss = false;

  const double scale = 1.0 / std::sqrt(learning_rate(cfg.n_iters, cfg.schedule));
  const Vector& x_star = problem.x_star();
  const double f_star = problem.f_star();
  std::vector<char> failed(R, 0);

  parallel_for(R, cfg.threads, [&](std::size_t i) {
    try {
      const Trajectory t = run_trajectory(problem, cfg.x0, cfg.schedule, ens.seeds[i], opt);
      const Vector& x = t.final_state.x;
      for (std::size_t j = 0; j < d; ++j) ens.rescaled_errors(i, j) = scale * (x[j] - x_star[j]);
      ens.excess_risks[i] =
          static_cast<double>(cfg.n_iters) * (problem.loss(x) - f_star);
    } catch (const divergence_error&) {
      failed[i] = 1;
    }
  });

  std::vector<std::uint64_t> bad;
  for (std::size_t i = 0; i < R; ++i)
    if (failed[i]) bad.push_back(ens.seeds[i]);
  if (!bad.empty()) {
    throw ensemble_error(std::to_string(bad.size()) + " of " + std::to_string(R) +
                             " trajectories diverged",
                         std::move(bad));
  }
  return ens;
}

/// Unbiased sample covariance of the rows.
inline Matrix empirical_covariance(const Matrix& samples) {
  const std::size_t r = samples.rows();
  const std::size_t d = samples.cols();
  if (r < 2) throw precondition_error("covariance needs at least 2 samples");
  Vector mean(d, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += samples(i, j);
  for (double& m : mean) m /= static_cast<double>(r);
  Matrix cov(d, d);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double da = samples(i, a) - mean[a];
      for (std::size_t b = a; b < d; ++b) cov(a, b) += da * (samples(i, b) - mean[b]);
    }
  const double inv = 1.0 / static_cast<double>(r - 1);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) *= inv;
      cov(b, a) = cov(a, b);
    }
  return cov;
}

/// ||Cov - target||_F / ||target||_F.
inline double relative_frobenius_error(const Matrix& cov, const Matrix& target) {
  require_same_shape(cov, target, "relative_frobenius_error");
  const double tn = frobenius_norm(target);
  if (tn == 0.0) throw precondition_error("target covariance has zero norm");
  return frobenius_norm(cov - target) / tn;
}

/// Relative Frobenius distance between the empirical covariance of the
/// rescaled errors and `target`.
inline double clt_diagnostic(const EnsembleResult& ens, const Matrix& target) {
  if (target.rows() != ens.rescaled_errors.cols() || !target.square()) {
    throw dimension_error("clt_diagnostic: target has the wrong dimension");
  }
  if (frobenius_norm(target) == 0.0) throw precondition_error("target covariance has zero norm");
  return relative_frobenius_error(empirical_covariance(ens.rescaled_errors), target);
}

struct ExcessRiskCheck {
  double emp_mean = 0.0;
  double std_error = 0.0;
  double tr_spec = 0.0;
  double half_tr_spec = 0.0;
};

inline ExcessRiskCheck excess_risk_check(const EnsembleResult& ens, std::span<const double> spectrum) {
  if (ens.excess_risks.empty()) throw precondition_error("empty ensemble");
  ExcessRiskCheck c;
  const double n = static_cast<double>(ens.excess_risks.size());
  c.emp_mean = std::accumulate(ens.excess_risks.begin(), ens.excess_risks.end(), 0.0) / n;
  if (ens.excess_risks.size() > 1) {
    double ss = 0.0;
    for (double v : ens.excess_risks) ss += (v - c.emp_mean) * (v - c.emp_mean);
    c.std_error = std::sqrt(ss / (n - 1.0) / n);
  }
  c.tr_spec = std::accumulate(spectrum.begin(), spectrum.end(), 0.0);
  c.half_tr_spec = 0.5 * c.tr_spec;
  return c;
}

/// Relative gap |a - b| / |b|, infinite when b == 0 and a != 0.
inline double relative_gap(double a, double b) {
  if (b == 0.0) return a == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(a - b) / std::abs(b);
}

struct TraceComparison {
  double trace_a = 0.0;
  double trace_b = 0.0;
  double difference = 0.0;  // trace_b - trace_a
  double std_error = 0.0;
};

/// Compares traces of the empirical covariances of two ensembles. When both
/// were run with the same seeds the standard error is computed from the
/// paired per-trajectory differences; otherwise from independent samples.
inline TraceComparison compare_covariance_traces(const EnsembleResult& a, const EnsembleResult& b) {
  if (a.rescaled_errors.cols() != b.rescaled_errors.cols()) {
    throw dimension_error("compare_covariance_traces: dimension mismatch");
  }
  auto deviations = [](const Matrix& s) {
    const std::size_t r = s.rows();
    const std::size_t d = s.cols();
    Vector mean(d, 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += s(i, j) / static_cast<double>(r);
    Vector dev(r, 0.0);
    const double f = static_cast<double>(r) / static_cast<double>(r - 1);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < d; ++j) dev[i] += f * (s(i, j) - mean[j]) * (s(i, j) - mean[j]);
    return dev;
  };
  auto mean_var = [](const Vector& v) {
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, ss / (n - 1.0)};
  };
  const Vector da = deviations(a.rescaled_errors);
  const Vector db = deviations(b.rescaled_errors);
  TraceComparison c;
  c.trace_a = mean_var(da).first;
  c.trace_b = mean_var(db).first;
  c.difference = c.trace_b - c.trace_a;
  if (a.seeds == b.seeds) {
    Vector diff(da.size());
    for (std::size_t i = 0; i < da.size(); ++i) diff[i] = db[i] - da[i];
    c.std_error = std::sqrt(mean_var(diff).second / static_cast<double>(diff.size()));
  } else {
    c.std_error = std::sqrt(mean_var(da).second / static_cast<double>(da.size()) +
                            mean_var(db).second / static_cast<double>(db.size()));
  }
  return c;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
  }
  return rows;
}

/// Writes `<prefix>rescaled_errors.csv`, `<prefix>excess_risks.csv` and
/// `<prefix>summary.json` into `dir`. `summary` is merged into the JSON.
inline void write_ensemble(const std::filesystem::path& dir, const std::string& prefix,
                           const EnsembleResult& ens, nlohmann::json summary = {}) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / (prefix + "rescaled_errors.csv"));
    if (!os) throw io_error("cannot write ensemble CSV in " + dir.string());
    os.precision(17);
    os << "seed";
    for (std::size_t j = 0; j < ens.rescaled_errors.cols(); ++j) os << ",e" << j;
    os << '\n';
    for (std::size_t i = 0; i < ens.R; ++i) {
      os << ens.seeds[i];
      for (std::size_t j = 0; j < ens.rescaled_errors.cols(); ++j) os << ',' << ens.rescaled_errors(i, j);
      os << '\n';
    }
  }
  {
    std::ofstream os(dir / (prefix + "excess_risks.csv"));
    if (!os) throw io_error("cannot write ensemble CSV in " + dir.string());
    os.precision(17);
    os << "seed,excess_risk\n";
    for (std::size_t i = 0; i < ens.R; ++i) os << ens.seeds[i] << ',' << ens.excess_risks[i] << '\n';
  }
  if (summary.is_null()) summary = nlohmann::json::object();
  summary["R"] = ens.R;
  summary["k_final"] = ens.k_final;
  if (ens.R >= 2) summary["empirical_covariance"] = matrix_to_json(empirical_covariance(ens.rescaled_errors));
  std::ofstream os(dir / (prefix + "summary.json"));
  if (!os) throw io_error("cannot write ensemble summary in " + dir.string());
  os << summary.dump(2) << '\n';
}

}  // namespace condsgd

#endif
