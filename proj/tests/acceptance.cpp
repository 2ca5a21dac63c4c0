// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Thresholds are fixed constants below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "condsgd/asymptotics.hpp"
#include "condsgd/experiment.hpp"
#include "condsgd/montecarlo.hpp"
#include "condsgd/verification.hpp"

using namespace condsgd;

namespace {

// Criterion 1
constexpr std::size_t kLyapInstances = 200;
constexpr std::size_t kLyapMaxDim = 20;
constexpr double kLyapTol = 1e-9;
constexpr double kLyapSeconds = 10.0;
// Criterion 2
constexpr std::size_t kOptInstances = 100;
constexpr std::size_t kOptMaxDim = 10;
constexpr double kOptEigTol = -1e-8;
constexpr double kOptEqualityTol = 1e-8;
constexpr double kOptSeconds = 10.0;
// Criteria 3-6
constexpr std::size_t kCltTrajectories = 5000;
constexpr std::size_t kCltSteps = 100000;
constexpr double kCltTol = 0.15;
constexpr double kCltSeconds = 300.0;
constexpr double kVarianceSigmas = 2.0;
constexpr double kExcessTol = 0.2;
constexpr double kExcessSeconds = 60.0;
// Criterion 7
constexpr std::size_t kIdentitySteps = 10000;
constexpr double kIdentitySeconds = 1.0;
// Criterion 8
constexpr std::size_t kPhiSeeds = 50;
constexpr std::size_t kPhiEarly = 100;
constexpr std::size_t kPhiLate = 10000;
constexpr double kPhiRatio = 3.0;
constexpr double kPhiSeconds = 30.0;
// Criterion 9
constexpr int kFdInstances = 20;
constexpr double kFdGradTol = 1e-6;
constexpr double kFdHessTol = 1e-5;
constexpr double kFdSeconds = 5.0;
// Criterion 10
constexpr std::size_t kSynthN = 1500;
constexpr std::size_t kSynthBatch = 16;
constexpr std::size_t kSynthRuns = 100;
constexpr std::size_t kSynthIterations = 1000;
constexpr double kSynthSeconds = 600.0;

constexpr std::uint64_t kMasterSeed = 20240101;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool passed;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double secs) {
  std::printf("%s  [%2d] %-34s %s (%.2f s)\n", o.passed ? "PASS" : "FAIL", id, name.c_str(),
              o.detail.c_str(), secs);
  std::fflush(stdout);
  if (!o.passed) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

void run(int id, const std::string& name, const std::function<Outcome(double&)>& body) {
  const auto t0 = Clock::now();
  Outcome o{false, ""};
  double budget = 0.0;
  try {
    o = body(budget);
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = seconds_since(t0);
  if (o.passed && budget > 0.0 && secs > budget) {
    o.passed = false;
    o.detail += fmt("; runtime exceeds %.0f s", budget);
  }
  report(id, name, o, secs);
}

Dataset random_dataset(std::size_t n, std::size_t d, RandomStream& rs) {
  Dataset data;
  data.features = Matrix(n, d);
  for (std::size_t i = 0; i < data.features.size(); ++i) data.features.data()[i] = rs.normal();
  data.labels.resize(n);
  for (auto& y : data.labels) y = rs.uniform() < 0.5 ? 1 : 0;
  return data;
}

}  // namespace

int main() {
  std::printf("condsgd %s acceptance suite (%u hardware threads)\n", kVersion,
              std::thread::hardware_concurrency());

  run(1, "lyapunov_residual", [](double& budget) {
    budget = kLyapSeconds;
    const SweepResult r = lyapunov_residual_sweep(kLyapInstances, kLyapMaxDim, derive_seed(kMasterSeed, 1));
    return Outcome{r.worst <= kLyapTol,
                   fmt("worst residual/(1+|D|) = %.3e <= %.0e over %.0f instances", r.worst, kLyapTol,
                       static_cast<double>(r.instances))};
  });

  run(2, "optimal_variance_ordering", [](double& budget) {
    budget = kOptSeconds;
    const OptimalitySweepResult r =
        optimality_sweep(kOptInstances, kOptMaxDim, derive_seed(kMasterSeed, 2));
    return Outcome{r.worst_min_eigenvalue >= kOptEigTol && r.worst_equality_gap <= kOptEqualityTol,
                   fmt("min eig(Sigma_C - Sigma_opt) = %.3e >= -1e-8; gap at C = H^-1 = %.3e <= 1e-8",
                       r.worst_min_eigenvalue, r.worst_equality_gap)};
  });

  // Criteria 3-6 share the ensembles on H = diag(2, 1), Gamma = I.
  const GroundTruth gt = verification_ground_truth(2);
  const QuadraticProblem problem(gt, kVerificationHessianNoise);
  const std::uint64_t clt_seed = derive_seed(kMasterSeed, 3);
  EnsembleResult conditioned;
  EnsembleResult plain;

  run(3, "clt_conditioned_sgd", [&](double& budget) {
    budget = kCltSeconds;
    conditioned = run_ensemble(
        problem, verification_config(2, kCltSteps, Conditioning::mixture, 0), kCltTrajectories, clt_seed);
    const Matrix target = optimal_covariance(gt.H, gt.Gamma);
    const double err = clt_diagnostic(conditioned, target);
    const Matrix c = empirical_covariance(conditioned.rescaled_errors);
    return Outcome{err <= kCltTol,
                   fmt("rel. Frobenius error %.4f <= 0.15; diag(cov) = (%.4f, %.4f) vs (0.25, 1)", err,
                       c(0, 0), c(1, 1))};
  });

  run(4, "clt_plain_sgd", [&](double& budget) {
    budget = kCltSeconds;
    plain = run_ensemble(problem, verification_config(2, kCltSteps, Conditioning::none, 0),
                         kCltTrajectories, clt_seed);
    const Matrix target = plain_sgd_clt_target(gt.H, gt.Gamma, 1.0);
    const double err = clt_diagnostic(plain, target);
    const Matrix c = empirical_covariance(plain.rescaled_errors);
    return Outcome{err <= kCltTol,
                   fmt("rel. Frobenius error %.4f <= 0.15; diag(cov) = (%.4f, %.4f) vs (1/3, 1)", err,
                       c(0, 0), c(1, 1))};
  });

  run(5, "variance_improvement", [&](double&) {
    if (conditioned.R == 0 || plain.R == 0) return Outcome{false, "ensembles unavailable"};
    const TraceComparison tc = compare_covariance_traces(conditioned, plain);
    return Outcome{tc.difference > kVarianceSigmas * tc.std_error,
                   fmt("tr(plain) - tr(conditioned) = %.4f > 2 SE = %.4f (tr conditioned %.4f)",
                       tc.difference, kVarianceSigmas * tc.std_error, tc.trace_a)};
  });

  run(6, "excess_risk_constant", [&](double& budget) {
    budget = kExcessSeconds;
    if (conditioned.R == 0) return Outcome{false, "ensemble unavailable"};
    const ExcessRiskCheck er = excess_risk_check(conditioned, excess_risk_spectrum(gt.H, gt.Gamma));
    const double gap_full = relative_gap(er.emp_mean, er.tr_spec);
    const double gap_half = relative_gap(er.emp_mean, er.half_tr_spec);
    const bool full = gap_full <= kExcessTol;
    const bool half = gap_half <= kExcessTol;
    const std::string which = full && half ? "both" : half ? "half trace" : full ? "trace" : "neither";
    return Outcome{full || half,
                   fmt("mean k(F-F*) = %.4f; trace %.4f, half trace %.4f", er.emp_mean, er.tr_spec,
                       er.half_tr_spec) +
                       "; matches " + which};
  });

  run(7, "identity_conditioning_equivalence", [&](double& budget) {
    budget = kIdentitySeconds;
    Schedule s;
    RunOptions fixed;
    fixed.n_iters = kIdentitySteps;
    fixed.stride = 1;
    fixed.conditioning = Conditioning::fixed;
    fixed.fixed_conditioner = Matrix::identity(2);
    RunOptions none = fixed;
    none.conditioning = Conditioning::none;
    none.fixed_conditioner.reset();
    const Vector x0{1.0, 1.0};
    const Trajectory a = run_trajectory(problem, x0, s, derive_seed(kMasterSeed, 7), fixed);
    const Trajectory b = run_trajectory(problem, x0, s, derive_seed(kMasterSeed, 7), none);
    bool same = a.final_state.x == b.final_state.x && a.records.size() == b.records.size();
    std::size_t compared = 0;
    for (std::size_t i = 0; same && i < a.records.size(); ++i, ++compared) {
      same = a.records[i].loss == b.records[i].loss && a.records[i].dist_to_opt == b.records[i].dist_to_opt;
    }
    return Outcome{same, fmt("%.0f logged steps identical: ", static_cast<double>(compared)) +
                             (same ? "yes" : "no")};
  });

  run(8, "phi_convergence", [&](double& budget) {
    budget = kPhiSeconds;
    Schedule s;
    double early = 0.0, late = 0.0;
    for (std::size_t r = 0; r < kPhiSeeds; ++r) {
      const Trajectory t = run_algorithm1(problem, Vector{1.0, 1.0}, kPhiLate, s,
                                          derive_seed(derive_seed(kMasterSeed, 8), r), kPhiEarly);
      for (const auto& rec : t.records) {
        if (rec.k == kPhiEarly) early += rec.phi_err / kPhiSeeds;
        if (rec.k == kPhiLate) late += rec.phi_err / kPhiSeeds;
      }
    }
    const double ratio = early / late;
    return Outcome{ratio >= kPhiRatio,
                   fmt("mean |Phi-H|_F %.4f at k=100, %.4f at k=1e4, ratio %.2f >= 3", early, late, ratio)};
  });

  run(9, "oracle_finite_differences", [](double& budget) {
    budget = kFdSeconds;
    RandomStream rs(derive_seed(kMasterSeed, 9));
    double worst_g = 0.0, worst_h = 0.0;
    for (int t = 0; t < kFdInstances; ++t) {
      const std::size_t d = 1 + rs.index(8);
      const Dataset data = random_dataset(20 + rs.index(40), d, rs);
      Vector w(d);
      rs.fill_normal(w);
      const double lambda = rs.uniform();
      const auto all = all_indices(data);
      const double h = 1e-5;
      const Vector g = logistic_grad_batch(w, data, all, lambda).value;
      const Matrix hess = logistic_hess_batch(w, data, all, lambda).value;
      Vector fd(d);
      Matrix fdh(d, d);
      for (std::size_t j = 0; j < d; ++j) {
        Vector wp = w, wm = w;
        wp[j] += h;
        wm[j] -= h;
        fd[j] = (logistic_loss(wp, data, lambda) - logistic_loss(wm, data, lambda)) / (2 * h);
        const Vector gp = logistic_grad_batch(wp, data, all, lambda).value;
        const Vector gm = logistic_grad_batch(wm, data, all, lambda).value;
        for (std::size_t i = 0; i < d; ++i) fdh(i, j) = (gp[i] - gm[i]) / (2 * h);
      }
      worst_g = std::max(worst_g, distance2(g, fd) / norm2(g));
      worst_h = std::max(worst_h, frobenius_norm(hess - fdh) / frobenius_norm(hess));
    }
    return Outcome{worst_g <= kFdGradTol && worst_h <= kFdHessTol,
                   fmt("worst gradient rel. error %.2e <= 1e-6; Hessian %.2e <= 1e-5", worst_g, worst_h)};
  });

  run(10, "synthetic_logistic_ordering", [](double& budget) {
    budget = kSynthSeconds;
    std::string detail;
    bool ok = true;
    for (std::size_t d : {25u, 50u}) {
      ExperimentConfig c;
      c.problem.kind = ProblemKind::synthetic;
      c.problem.n = kSynthN;
      c.problem.d = d;
      c.methods = {Method::sgd, Method::csgd_adaptive};
      c.batch = kSynthBatch;
      c.runs = kSynthRuns;
      c.iterations = kSynthIterations;
      c.seed = derive_seed(kMasterSeed, 10);
      const RunReport rep = run_experiment(c);
      const double sgd = rep.methods[0].curve.back().mean_loss;
      const double csgd = rep.methods[1].curve.back().mean_loss;
      const bool clean = rep.methods[0].failures.empty() && rep.methods[1].failures.empty();
      ok = ok && clean && csgd <= sgd;
      detail += fmt("d=%.0f: csgd-adaptive %.6f <= sgd %.6f; ", static_cast<double>(d), csgd, sgd);
    }
    detail += fmt("%.0f runs, %.0f iterations", static_cast<double>(kSynthRuns),
                  static_cast<double>(kSynthIterations));
    return Outcome{ok, detail};
  });

  std::printf("%s: %d of 10 criteria failed\n", failures == 0 ? "ALL PASSED" : "FAILED", failures);
  return failures == 0 ? 0 : 1;
}
