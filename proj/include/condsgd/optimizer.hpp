#ifndef CONDSGD_OPTIMIZER_HPP
#define CONDSGD_OPTIMIZER_HPP

// Plain and conditioned SGD.
//
// Conditioned SGD premultiplies each stochastic gradient by
//   C_k = (Phi_k + I / gamma_{k+1})^{-1},
// where Phi_k is a weighted average of past Hessian estimates. The mixture
// with the identity caps the eigenvalues of C_k at gamma_{k+1}.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "condsgd/errors.hpp"
#include "condsgd/linalg.hpp"
#include "condsgd/problems.hpp"
#include "condsgd/random.hpp"

namespace condsgd {

// ---------------------------------------------------------------------------
// Schedules

enum class GammaRule { sqrt_k, constant };
enum class Weighting { equal, adaptive };

struct Schedule {
  double alpha = 1.0;
  double beta = 1.0;
  GammaRule gamma_rule = GammaRule::sqrt_k;
  double gamma_constant = 1.0;
  double eta = 10.0;
  Weighting weighting = Weighting::equal;
  /// Keep only the most recent `window` Hessian estimates (adaptive weights).
  std::optional<std::size_t> window;

  void validate() const {
    if (!(alpha > 0.0)) throw precondition_error("alpha must be > 0");
    if (!(beta > 0.5 && beta <= 1.0)) throw precondition_error("beta must lie in (1/2, 1]");
    if (gamma_rule == GammaRule::constant && !(gamma_constant > 0.0)) {
      throw precondition_error("constant gamma must be > 0");
    }
    if (!(eta >= 0.0)) throw precondition_error("eta must be >= 0");
    if (window && *window == 0) throw precondition_error("window must be >= 1");
  }
};

/// alpha * k^(-beta).
inline double learning_rate(std::size_t k, const Schedule& s) {
  const double kd = static_cast<double>(k);
  if (s.beta == 1.0) return s.alpha / kd;
  return s.alpha * std::pow(kd, -s.beta);
}

/// Eigenvalue cap gamma_k on the conditioner.
inline double gamma_cap(std::size_t k, const Schedule& s) {
  switch (s.gamma_rule) {
    case GammaRule::sqrt_k:
      return std::sqrt(static_cast<double>(k));
    case GammaRule::constant:
      return s.gamma_constant;
  }
  return std::sqrt(static_cast<double>(k));
}

// ---------------------------------------------------------------------------
// Single steps

inline constexpr double kDivergenceBound = 1e12;

/// x - alpha * g.
inline Vector sgd_step(std::span<const double> x, std::span<const double> g, double alpha_k,
                       std::size_t step = 0) {
  if (x.size() != g.size()) throw dimension_error("sgd_step: dimension mismatch");
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(g[i])) throw divergence_error("non-finite gradient", step);
    out[i] = x[i] - alpha_k * g[i];
  }
  return out;
}

/// x - alpha * C g.
inline Vector conditioned_step(std::span<const double> x, std::span<const double> g,
                               const Matrix& c, double alpha_k, std::size_t step = 0) {
  if (c.rows() != x.size() || c.cols() != g.size()) {
    throw dimension_error("conditioned_step: dimension mismatch");
  }
  Vector dir(x.size());
  matvec_into(c, g, dir);
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] - alpha_k * dir[i];
    if (!std::isfinite(out[i])) throw divergence_error("non-finite iterate", step);
  }
  return out;
}

/// Running mean of the iterates x_1..x_k.
inline Vector polyak_step(std::span<const double> avg, std::span<const double> x_k,
                          std::size_t k) {
  if (k == 0) throw precondition_error("polyak_step: k must be >= 1");
  Vector out(avg.size());
  const double inv = 1.0 / static_cast<double>(k);
  for (std::size_t i = 0; i < avg.size(); ++i) out[i] = avg[i] + (x_k[i] - avg[i]) * inv;
  return out;
}

// ---------------------------------------------------------------------------
// Hessian averaging

struct HessianEntry {
  Vector x;
  Matrix H;
};

/// Past (iterate, Hessian estimate) pairs in step order.
class HessianHistory {
 public:
  explicit HessianHistory(std::optional<std::size_t> window = std::nullopt)
      : window_(window) {}

  void push(std::span<const double> x, const Matrix& h) {
    if (window_ && entries_.size() == *window_) {
      // Recycle the oldest entry's storage.
      HessianEntry e = std::move(entries_.front());
      entries_.pop_front();
      e.x.assign(x.begin(), x.end());
      e.H = h;
      entries_.push_back(std::move(e));
    } else {
      entries_.push_back({Vector(x.begin(), x.end()), h});
    }
  }

  const std::deque<HessianEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::optional<std::size_t> window() const noexcept { return window_; }

 private:
  std::deque<HessianEntry> entries_;
  std::optional<std::size_t> window_;
};

/// Normalized weights nu_j over the history for the current iterate x_k.
/// Adaptive weights are proportional to exp(-eta ||x_j - x_k||_1); the
/// smallest distance is subtracted before exponentiating.
inline void history_weights_into(const HessianHistory& history, std::span<const double> x_k,
                                 const Schedule& s, Vector& weights) {
  const std::size_t m = history.size();
  if (m == 0) throw precondition_error("weighted average of an empty history");
  weights.resize(m);
  if (s.weighting == Weighting::equal || s.eta == 0.0) {
    std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(m));
    return;
  }
  const auto& entries = history.entries();
  double min_dist = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j) {
    weights[j] = l1_distance(entries[j].x, x_k);
    min_dist = std::min(min_dist, weights[j]);
  }
  double sum = 0.0;
  for (double& w : weights) {
    w = std::exp(-s.eta * (w - min_dist));
    sum += w;
  }
  for (double& w : weights) w /= sum;
}

inline Vector history_weights(const HessianHistory& history, std::span<const double> x_k,
                              const Schedule& s) {
  Vector w;
  history_weights_into(history, x_k, s, w);
  return w;
}

/// Phi = sum_j nu_j H_j for precomputed weights; symmetric by construction.
inline void weighted_sum_into(const HessianHistory& history, std::span<const double> weights,
                              Matrix& phi) {
  const auto& entries = history.entries();
  const std::size_t d = entries.front().H.rows();
  phi.resize(d, d);
  phi.fill(0.0);
  for (std::size_t j = 0; j < entries.size(); ++j) {
    const double w = weights[j];
    if (w == 0.0) continue;
    const Matrix& h = entries[j].H;
    for (std::size_t a = 0; a < d; ++a) {
      const double* hrow = h.data() + a * d;
      double* prow = phi.data() + a * d;
      for (std::size_t b = a; b < d; ++b) prow[b] += w * hrow[b];
    }
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < a; ++b) phi(a, b) = phi(b, a);
}

inline Matrix weighted_phi(const HessianHistory& history, std::span<const double> x_k,
                           const Schedule& s) {
  const Vector w = history_weights(history, x_k, s);
  Matrix phi;
  weighted_sum_into(history, w, phi);
  return phi;
}

// ---------------------------------------------------------------------------
// Mixture conditioning

/// Tolerance below which negative eigenvalues of Phi count as rounding.
inline constexpr double kPsdTolerance = 1e-10;

/// Phi with its negative eigenvalues clipped to zero.
inline Matrix project_psd(const Matrix& phi) {
  const SymEigen e = sym_eigen(phi);
  return spectral_apply(e, [](double mu) { return std::max(mu, 0.0); });
}

/// (Phi + I / gamma)^{-1} for a symmetric positive semidefinite Phi.
/// Eigenvalues of the result are 1 / (mu_i + 1/gamma).
inline Matrix mixture_condition(const Matrix& phi, double gamma_next) {
  if (!(gamma_next > 0.0)) throw precondition_error("gamma must be > 0");
  const SymEigen e = sym_eigen(phi);
  const double scale = std::max(1.0, std::abs(e.eigenvalues.back()));
  if (e.eigenvalues.front() < -kPsdTolerance * scale) {
    throw definiteness_error("conditioning average is not positive semidefinite",
                             e.eigenvalues.front());
  }
  const double inv_gamma = 1.0 / gamma_next;
  return spectral_apply(e, [inv_gamma](double mu) { return 1.0 / (std::max(mu, 0.0) + inv_gamma); });
}

/// Buffers for computing C_k repeatedly without allocation.
class Conditioner {
 public:
  /// Writes C = (P(phi) + I/gamma)^{-1} into `c`, where P clips negative
  /// eigenvalues unless `assume_psd`. Returns the smallest eigenvalue of C
  /// when it is available for free, NaN otherwise.
  double compute(const Matrix& phi, double gamma, bool assume_psd, Matrix& c) {
    const double inv_gamma = 1.0 / gamma;
    if (assume_psd) {
      shifted_ = phi;
      for (std::size_t i = 0; i < phi.rows(); ++i) shifted_(i, i) += inv_gamma;
      spd_inverse_into(shifted_, chol_, c);
      return std::numeric_limits<double>::quiet_NaN();
    }
    sym_eigen_into(phi, eigen_, eigen_ws_);
    spectral_apply_into(
        eigen_, [inv_gamma](double mu) { return 1.0 / (std::max(mu, 0.0) + inv_gamma); }, c);
    return 1.0 / (std::max(eigen_.eigenvalues.back(), 0.0) + inv_gamma);
  }

  /// Extreme eigenvalues of a symmetric matrix (used for invariant checks).
  std::pair<double, double> spectrum_bounds(const Matrix& m) {
    sym_eigen_into(m, check_, eigen_ws_);
    return {check_.eigenvalues.front(), check_.eigenvalues.back()};
  }

 private:
  Matrix shifted_;
  Matrix chol_;
  SymEigen eigen_;
  SymEigen check_;
  EigenWorkspace eigen_ws_;
};

// ---------------------------------------------------------------------------
// Trajectories

struct OptimizerState {
  std::size_t k = 0;
  Vector x;
  HessianHistory history;
  Matrix phi;
  Matrix cond;
  Vector polyak_avg;
};

struct TrajectoryRecord {
  std::size_t k = 0;
  double loss = 0.0;
  double dist_to_opt = std::numeric_limits<double>::quiet_NaN();
  double phi_err = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  double cond_min_eig = std::numeric_limits<double>::quiet_NaN();
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;
  OptimizerState final_state;
};

/// Thrown when an iterate becomes non-finite or leaves the divergence bound.
/// Carries the last valid state.
class trajectory_diverged : public divergence_error {
 public:
  trajectory_diverged(const std::string& what, std::size_t step, OptimizerState last)
      : divergence_error(what, step), last_(std::move(last)) {}
  const OptimizerState& last_valid_state() const noexcept { return last_; }

 private:
  OptimizerState last_;
};

enum class Conditioning {
  none,         // plain SGD; no Hessian sampling
  mixture,      // Algorithm 1: averaged Hessians, mixture-regularized inverse
  fixed,        // a constant user-supplied conditioner
};

struct RunOptions {
  std::size_t n_iters = 1;
  /// Logging stride; 0 selects max(1, n_iters / 500).
  std::size_t stride = 0;
  Conditioning conditioning = Conditioning::mixture;
  std::optional<Matrix> fixed_conditioner;
  /// Record loss and distance at the Polyak average instead of the iterate.
  bool log_polyak = false;
  /// Assert the eigenvalue cap and weight normalization at every step.
  bool check_invariants = false;
  /// Skip the loss evaluation at logging points (ensembles only need x_k).
  bool evaluate_loss = true;
};

inline std::size_t effective_stride(const RunOptions& o) {
  return o.stride != 0 ? o.stride : std::max<std::size_t>(1, o.n_iters / 500);
}

namespace detail {

template <StochasticProblem P>
const Vector* optimum_of(const P& p) {
  if constexpr (ProblemWithOptimum<P>) {
    if (p.reference_hessian() != nullptr) return &p.x_star();
  }
  return nullptr;
}

template <StochasticProblem P>
const Matrix* reference_hessian_of(const P& p) {
  if constexpr (ProblemWithOptimum<P>) {
    return p.reference_hessian();
  } else {
    return nullptr;
  }
}

}  // namespace detail

/// Runs plain, fixed-conditioner or mixture-conditioned SGD from x0.
/// Step k uses the gradient at x_{k-1}, the learning rate alpha_k and (for
/// mixture conditioning) C_{k-1} built from Hessians sampled at x_0..x_{k-1}.
template <StochasticProblem P>
Trajectory run_trajectory(const P& problem, std::span<const double> x0, const Schedule& s,
                          std::uint64_t seed, const RunOptions& opt) {
  s.validate();
  const std::size_t d = problem.dim();
  if (x0.size() != d) throw dimension_error("x0 has the wrong dimension");
  if (opt.n_iters == 0) throw precondition_error("n_iters must be >= 1");
  if (opt.conditioning == Conditioning::fixed) {
    if (!opt.fixed_conditioner || opt.fixed_conditioner->rows() != d ||
        opt.fixed_conditioner->cols() != d) {
      throw precondition_error("fixed conditioning needs a d x d conditioner");
    }
  }

  const std::size_t stride = effective_stride(opt);
  const Vector* x_star = detail::optimum_of(problem);
  const Matrix* h_ref = detail::reference_hessian_of(problem);
  const bool mixture = opt.conditioning == Conditioning::mixture;
  const bool running_mean = s.weighting == Weighting::equal && !s.window;
  const bool assume_psd = problem.hessians_psd();

  TrajectoryStreams streams(seed);
  SampleContext ctx;
  Conditioner conditioner;
  Trajectory traj;
  OptimizerState& st = traj.final_state;
  st.x.assign(x0.begin(), x0.end());
  st.polyak_avg = st.x;
  st.history = HessianHistory(mixture && !running_mean ? s.window : std::nullopt);
  if (mixture) {
    st.phi = Matrix(d, d);
    st.cond = Matrix::identity(d);
  } else if (opt.conditioning == Conditioning::fixed) {
    st.cond = *opt.fixed_conditioner;
  }

  Vector g(d);
  Vector dir(d);
  Vector weights;
  Matrix h_sample;
  double last_cond_min = std::numeric_limits<double>::quiet_NaN();
  const auto t0 = std::chrono::steady_clock::now();

  auto log_point = [&](std::size_t k) {
    TrajectoryRecord r;
    r.k = k;
    const Vector& at = opt.log_polyak && k > 0 ? st.polyak_avg : st.x;
    r.loss = opt.evaluate_loss ? problem.loss(at) : std::numeric_limits<double>::quiet_NaN();
    if (x_star) r.dist_to_opt = distance2(at, *x_star);
    if (mixture && h_ref && k > 0) r.phi_err = frobenius_norm(st.phi - *h_ref);
    if (mixture && k > 0) {
      r.cond_min_eig = std::isnan(last_cond_min) ? conditioner.spectrum_bounds(st.cond).first
                                                 : last_cond_min;
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    traj.records.push_back(r);
  };

  log_point(0);
  for (std::size_t k = 0; k < opt.n_iters; ++k) {
    problem.sample_gradient(st.x, streams.gradient, ctx, g);

    const double* step_dir = g.data();
    if (mixture) {
      problem.sample_hessian(st.x, streams.hessian, ctx, h_sample);
      if (running_mean) {
        const double inv = 1.0 / static_cast<double>(k + 1);
        double* p = st.phi.data();
        const double* h = h_sample.data();
        for (std::size_t i = 0; i < st.phi.size(); ++i) p[i] += (h[i] - p[i]) * inv;
      } else {
        st.history.push(st.x, h_sample);
        history_weights_into(st.history, st.x, s, weights);
        if (opt.check_invariants) {
          double sum = 0.0;
          for (double w : weights) {
            if (w < 0.0) throw error("negative averaging weight");
            sum += w;
          }
          if (std::abs(sum - 1.0) > 1e-12) throw error("averaging weights do not sum to 1");
        }
        weighted_sum_into(st.history, weights, st.phi);
      }
      const double gamma = gamma_cap(k + 1, s);
      last_cond_min = conditioner.compute(st.phi, gamma, assume_psd, st.cond);
      if (opt.check_invariants) {
        const auto [lo, hi] = conditioner.spectrum_bounds(st.cond);
        if (!(lo > 0.0) || hi > gamma + 1e-9) {
          throw error("conditioner eigenvalues [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "] violate the cap " + std::to_string(gamma) +
                      " at step " + std::to_string(k + 1));
        }
      }
      matvec_into(st.cond, g, dir);
      step_dir = dir.data();
    } else if (opt.conditioning == Conditioning::fixed) {
      matvec_into(st.cond, g, dir);
      step_dir = dir.data();
    }

    const double alpha = learning_rate(k + 1, s);
    bool bad = false;
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = st.x[i] - alpha * step_dir[i];
      if (!std::isfinite(xi)) bad = true;
      sq += xi * xi;
    }
    if (bad || !(std::sqrt(sq) <= kDivergenceBound)) {
      throw trajectory_diverged(bad ? "non-finite iterate" : "iterate norm exceeded 1e12", k + 1,
                                st);
    }
    for (std::size_t i = 0; i < d; ++i) st.x[i] -= alpha * step_dir[i];
    st.k = k + 1;
    const double inv = 1.0 / static_cast<double>(k + 1);
    for (std::size_t i = 0; i < d; ++i) st.polyak_avg[i] += (st.x[i] - st.polyak_avg[i]) * inv;

    if ((k + 1) % stride == 0 || k + 1 == opt.n_iters) log_point(k + 1);
  }
  return traj;
}

/// Algorithm 1: averaged Hessian estimates, mixture conditioning.
template <StochasticProblem P>
Trajectory run_algorithm1(const P& problem, std::span<const double> x0, std::size_t n_iters,
                          const Schedule& s, std::uint64_t seed, std::size_t stride = 0) {
  RunOptions o;
  o.n_iters = n_iters;
  o.stride = stride;
  o.conditioning = Conditioning::mixture;
  return run_trajectory(problem, x0, s, seed, o);
}

/// Plain SGD with the same gradient stream as run_algorithm1 for equal seeds.
template <StochasticProblem P>
Trajectory run_sgd(const P& problem, std::span<const double> x0, std::size_t n_iters,
                   const Schedule& s, std::uint64_t seed, std::size_t stride = 0) {
  RunOptions o;
  o.n_iters = n_iters;
  o.stride = stride;
  o.conditioning = Conditioning::none;
  return run_trajectory(problem, x0, s, seed, o);
}

/// CSV with header `k,loss,dist_to_opt,phi_err,seconds`; unknown values are
/// written as `nan`.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& t) {
  const auto old = os.precision(17);
  os << "k,loss,dist_to_opt,phi_err,seconds\n";
  for (const auto& r : t.records) {
    os << r.k << ',' << r.loss << ',' << r.dist_to_opt << ',' << r.phi_err << ',' << r.seconds
       << '\n';
  }
  os.precision(old);
}

}  // namespace condsgd

#endif
