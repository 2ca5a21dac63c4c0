#ifndef CONDSGD_VERIFICATION_HPP
#define CONDSGD_VERIFICATION_HPP

// Checks of the asymptotic theory on problems with analytic ground truth:
// Lyapunov residuals, optimality of H^{-1} Gamma H^{-1}, central limit
// behaviour of plain and conditioned SGD and the excess-risk constant.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "condsgd/asymptotics.hpp"
#include "condsgd/linalg.hpp"
#include "condsgd/montecarlo.hpp"
#include "condsgd/optimizer.hpp"
#include "condsgd/problems.hpp"
#include "condsgd/random.hpp"
#include "json.hpp"

namespace condsgd {

// ---------------------------------------------------------------------------
// Random instances

inline Matrix random_gaussian_matrix(std::size_t rows, std::size_t cols, RandomStream& rs) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rs.normal();
  return m;
}

/// R R^T / d + shift I with R standard Gaussian.
inline Matrix random_spd(std::size_t d, RandomStream& rs, double shift = 0.5) {
  const Matrix r = random_gaussian_matrix(d, d, rs);
  Matrix a = (1.0 / static_cast<double>(d)) * (r * transpose(r));
  for (std::size_t i = 0; i < d; ++i) a(i, i) += shift;
  return symmetric_part(a);
}

/// Nonsymmetric K whose symmetric part is SPD: random SPD plus random skew part.
inline Matrix random_stable_operator(std::size_t d, RandomStream& rs) {
  const Matrix s = random_spd(d, rs, 0.25);
  const Matrix g = random_gaussian_matrix(d, d, rs);
  Matrix k = s;
  const double f = 0.5 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) k(i, j) += f * (g(i, j) - g(j, i));
  return k;
}

/// H^{-1} + eps S S^T, with eps halved until the result lies in C_H.
inline Matrix random_admissible_conditioner(const Matrix& h, RandomStream& rs, double eps = 1.0) {
  const std::size_t d = h.rows();
  const Matrix hinv = spd_inverse(h);
  const Matrix s = random_gaussian_matrix(d, d, rs);
  const Matrix sst = symmetric_part(s * transpose(s));
  for (int i = 0; i < 60; ++i, eps *= 0.5) {
    Matrix c = hinv + eps * sst;
    if (membership_C_H(c, h)) return c;
  }
  return hinv;
}

// ---------------------------------------------------------------------------
// Property sweeps

struct SweepResult {
  std::size_t instances = 0;
  double worst = 0.0;  // sweep-specific figure of merit
  double seconds = 0.0;
  bool passed = false;
};

/// Worst normalized Lyapunov residual ||K S + S K^T - D||_F / (1 + ||D||_F)
/// over random stable instances with d in [1, max_dim].
inline SweepResult lyapunov_residual_sweep(std::size_t instances, std::size_t max_dim,
                                           std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  RandomStream rs(seed);
  SweepResult r;
  r.instances = instances;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t d = 1 + rs.index(max_dim);
    const Matrix k = random_stable_operator(d, rs);
    const Matrix b = random_gaussian_matrix(d, d, rs);
    const Matrix dd = symmetric_part(b * transpose(b));
    const Matrix s = solve_lyapunov(k, dd);
    r.worst = std::max(r.worst, lyapunov_residual(k, s, dd) / (1.0 + frobenius_norm(dd)));
  }
  r.passed = r.worst <= 1e-9;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

struct OptimalitySweepResult {
  std::size_t instances = 0;
  double worst_min_eigenvalue = 0.0;  // min over instances of lambda_min(Sigma_C - Sigma_opt)
  double worst_equality_gap = 0.0;    // max ||Sigma_{H^-1} - H^-1 Gamma H^-1||_F
  double seconds = 0.0;
  bool passed = false;
};

/// Sigma_C >= H^{-1} Gamma H^{-1} in the Loewner order for random admissible C
/// and equality at C = H^{-1}.
inline OptimalitySweepResult optimality_sweep(std::size_t instances, std::size_t max_dim,
                                              std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  RandomStream rs(seed);
  OptimalitySweepResult r;
  r.instances = instances;
  r.worst_min_eigenvalue = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t d = 1 + rs.index(max_dim);
    const Matrix h = random_spd(d, rs);
    const Matrix g = random_spd(d, rs);
    const Matrix c = random_admissible_conditioner(h, rs);
    const Matrix opt = optimal_covariance(h, g);
    const Matrix sc = asymptotic_covariance(c, h, g, 1.0, 1.0).sigma;
    r.worst_min_eigenvalue = std::min(r.worst_min_eigenvalue, min_eigenvalue(sc - opt));
    const Matrix so = asymptotic_covariance(spd_inverse(h), h, g, 1.0, 1.0).sigma;
    r.worst_equality_gap = std::max(r.worst_equality_gap, frobenius_norm(so - opt));
  }
  r.passed = r.worst_min_eigenvalue >= -1e-8 && r.worst_equality_gap <= 1e-8;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// Verification problem and CLT targets

/// Hessian-estimate noise level of the verification problem.
inline constexpr double kVerificationHessianNoise = 0.5;

/// Quadratic with H = diag(2, ..., 1) (linearly spaced), Gamma = I (or 0),
/// x* = 0, F* = 0.
inline GroundTruth verification_ground_truth(std::size_t dim, bool zero_noise = false) {
  if (dim == 0) throw precondition_error("dimension must be >= 1");
  Vector h(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    h[i] = dim == 1 ? 2.0 : 2.0 - static_cast<double>(i) / static_cast<double>(dim - 1);
  }
  Matrix gamma = zero_noise ? Matrix(dim, dim) : Matrix::identity(dim);
  return make_ground_truth(std::move(h), std::move(gamma));
}

/// Limiting covariance of (x_k - x*)/sqrt(alpha_k) for plain SGD with
/// alpha_k = alpha / k. Rejects alpha with 2 alpha lambda_min(H) <= 1, where
/// no such limit exists.
inline Matrix plain_sgd_clt_target(const Matrix& h, const Matrix& gamma, double alpha) {
  const double lmin = min_eigenvalue(h);
  if (!(2.0 * alpha * lmin > 1.0)) {
    throw precondition_error("plain SGD with beta = 1 needs 2 alpha lambda_min(H) > 1; got " +
                             std::to_string(2.0 * alpha * lmin));
  }
  return asymptotic_covariance(Matrix::identity(h.rows()), h, gamma, alpha, 1.0).sigma;
}

struct CriterionResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::size_t dim = 2;
  std::size_t trajectories = 5000;
  std::size_t steps = 100000;
  std::uint64_t seed = 1;
  bool zero_noise = false;
  unsigned threads = 0;
};

struct VerificationReport {
  std::vector<CriterionResult> criteria;
  nlohmann::json summary;
  bool all_passed() const {
    return std::all_of(criteria.begin(), criteria.end(), [](const auto& c) { return c.passed; });
  }
};

/// Ensembles of Algorithm 1 and plain SGD on the verification problem,
/// sharing seeds so that both see the same gradient noise.
struct VerificationEnsembles {
  EnsembleResult conditioned;
  EnsembleResult plain;
};

inline EnsembleConfig verification_config(std::size_t dim, std::size_t steps, Conditioning c,
                                          unsigned threads) {
  EnsembleConfig cfg;
  cfg.x0.assign(dim, 1.0);
  cfg.n_iters = steps;
  cfg.schedule.alpha = 1.0;
  cfg.schedule.beta = 1.0;
  cfg.schedule.gamma_rule = GammaRule::sqrt_k;
  cfg.schedule.weighting = Weighting::equal;
  cfg.conditioning = c;
  cfg.threads = threads;
  return cfg;
}

inline VerificationEnsembles run_verification_ensembles(const QuadraticProblem& problem,
                                                        const VerifyOptions& o) {
  VerificationEnsembles e;
  e.conditioned = run_ensemble(
      problem, verification_config(o.dim, o.steps, Conditioning::mixture, o.threads),
      o.trajectories, o.seed);
  e.plain = run_ensemble(problem,
                         verification_config(o.dim, o.steps, Conditioning::none, o.threads),
                         o.trajectories, o.seed);
  return e;
}

inline nlohmann::json criterion_json(const CriterionResult& c) {
  return {{"name", c.name},
          {"passed", c.passed},
          {"value", c.value},
          {"threshold", c.threshold},
          {"detail", c.detail}};
}

/// Runs the Lyapunov, optimality, CLT and excess-risk checks.
inline VerificationReport run_verification_suite(const VerifyOptions& o) {
  if (o.trajectories < 2) {
    throw precondition_error("covariance estimates need at least 2 trajectories");
  }
  if (o.steps < 1) throw precondition_error("steps must be >= 1");
  if (o.dim < 1 || o.dim > kLyapunovMaxDim) throw precondition_error("dim out of range");

  VerificationReport rep;
  auto add = [&](CriterionResult c) { rep.criteria.push_back(std::move(c)); };

  const SweepResult lyap = lyapunov_residual_sweep(200, 20, derive_seed(o.seed, 1001));
  add({"lyapunov_residual", lyap.passed, lyap.worst, 1e-9,
       "worst normalized residual over 200 random stable instances"});

  const OptimalitySweepResult optm = optimality_sweep(100, 10, derive_seed(o.seed, 1002));
  add({"optimal_variance_ordering", optm.passed, optm.worst_min_eigenvalue, -1e-8,
       "min eigenvalue of Sigma_C - H^-1 Gamma H^-1; equality gap " +
           std::to_string(optm.worst_equality_gap)});

  const GroundTruth gt = verification_ground_truth(o.dim, o.zero_noise);
  const QuadraticProblem problem(gt, kVerificationHessianNoise);
  const VerificationEnsembles ens = run_verification_ensembles(problem, o);

  nlohmann::json s;
  s["dim"] = o.dim;
  s["trajectories"] = o.trajectories;
  s["steps"] = o.steps;
  s["seed"] = o.seed;
  s["H"] = matrix_to_json(gt.H);
  s["Gamma"] = matrix_to_json(gt.Gamma);

  if (o.zero_noise) {
    // Without gradient noise the rescaled errors degenerate; check that both
    // methods contract instead.
    const double init = norm2(Vector(o.dim, 1.0));
    auto worst_error = [&](const EnsembleResult& e) {
      // alpha_k = 1/k, so x_k - x* = rescaled / sqrt(k).
      const double scale = 1.0 / std::sqrt(static_cast<double>(o.steps));
      double worst = 0.0;
      for (std::size_t i = 0; i < e.R; ++i) {
        worst = std::max(worst, norm2(e.rescaled_errors.row(i)) * scale);
      }
      return worst;
    };
    // With alpha_k = 1/k and a conditioner close to H^-1 the error decays like 1/k.
    const double bound = 10.0 * init / static_cast<double>(o.steps);
    const double wc = worst_error(ens.conditioned);
    const double wp = worst_error(ens.plain);
    add({"deterministic_contraction_conditioned", wc <= bound, wc, bound,
         "final ||x_k - x*|| for Algorithm 1 without gradient noise"});
    add({"deterministic_contraction_plain", wp <= bound, wp, bound,
         "final ||x_k - x*|| for plain SGD without gradient noise"});
  } else {
    const Matrix target_opt = optimal_covariance(gt.H, gt.Gamma);
    const Matrix target_sgd = plain_sgd_clt_target(gt.H, gt.Gamma, 1.0);
    const double clt_c = clt_diagnostic(ens.conditioned, target_opt);
    const double clt_p = clt_diagnostic(ens.plain, target_sgd);
    add({"clt_conditioned", clt_c <= 0.15, clt_c, 0.15,
         "relative Frobenius error of Algorithm 1 covariance vs H^-1 Gamma H^-1"});
    add({"clt_plain_sgd", clt_p <= 0.15, clt_p, 0.15,
         "relative Frobenius error of plain SGD covariance vs its Lyapunov solution"});

    const TraceComparison tc = compare_covariance_traces(ens.conditioned, ens.plain);
    add({"variance_improvement", tc.difference > 2.0 * tc.std_error, tc.difference,
         2.0 * tc.std_error,
         "trace(plain) - trace(conditioned) against twice its Monte Carlo standard error"});

    const Vector spectrum = excess_risk_spectrum(gt.H, gt.Gamma);
    const ExcessRiskCheck er = excess_risk_check(ens.conditioned, spectrum);
    const double gap_full = relative_gap(er.emp_mean, er.tr_spec);
    const double gap_half = relative_gap(er.emp_mean, er.half_tr_spec);
    const std::string matched = gap_half <= 0.2 && gap_full <= 0.2 ? "both"
                                : gap_half <= 0.2                  ? "half_trace"
                                : gap_full <= 0.2                  ? "trace"
                                                                   : "neither";
    add({"excess_risk_constant", matched != "neither", std::min(gap_full, gap_half), 0.2,
         "empirical mean " + std::to_string(er.emp_mean) + "; matches " + matched});

    s["target_conditioned"] = matrix_to_json(target_opt);
    s["target_plain"] = matrix_to_json(target_sgd);
    s["empirical_conditioned"] = matrix_to_json(empirical_covariance(ens.conditioned.rescaled_errors));
    s["empirical_plain"] = matrix_to_json(empirical_covariance(ens.plain.rescaled_errors));
    s["trace_conditioned"] = tc.trace_a;
    s["trace_plain"] = tc.trace_b;
    s["trace_std_error"] = tc.std_error;
    s["excess_risk"] = {{"emp_mean", er.emp_mean},
                        {"std_error", er.std_error},
                        {"tr_spec", er.tr_spec},
                        {"half_tr_spec", er.half_tr_spec},
                        {"matches", matched}};
  }

  s["criteria"] = nlohmann::json::array();
  for (const auto& c : rep.criteria) s["criteria"].push_back(criterion_json(c));
  s["passed"] = rep.all_passed();
  rep.summary = std::move(s);
  return rep;
}

}  // namespace condsgd

#endif
