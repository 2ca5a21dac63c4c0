#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "condsgd/asymptotics.hpp"
#include "condsgd/montecarlo.hpp"

using namespace condsgd;
using Catch::Approx;

namespace {

EnsembleConfig quick_config(std::size_t d, std::size_t n_iters) {
  EnsembleConfig cfg;
  cfg.x0 = Vector(d, 1.0);
  cfg.n_iters = n_iters;
  cfg.threads = 2;
  return cfg;
}

EnsembleResult with_errors(Matrix rows) {
  EnsembleResult e;
  e.R = rows.rows();
  e.rescaled_errors = std::move(rows);
  e.excess_risks.assign(e.R, 0.0);
  e.seeds.resize(e.R);
  std::iota(e.seeds.begin(), e.seeds.end(), 0);
  return e;
}

}  // namespace

TEST_CASE("empirical covariance", "[montecarlo][covariance]") {
  CHECK(empirical_covariance(Matrix{{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}}) == Matrix(2, 2));
  CHECK(empirical_covariance(Matrix{{1.0, 0.0}, {-1.0, 0.0}}) == (Matrix{{2.0, 0.0}, {0.0, 0.0}}));
  CHECK_THROWS_AS(empirical_covariance(Matrix{{1.0, 0.0}}), precondition_error);

  SECTION("1e5 draws of N(0, Gamma)") {
    const Matrix gamma{{2.0, 0.8}, {0.8, 1.0}};
    const SymEigen e = sym_eigen(gamma);
    const Matrix root = spectral_apply(e, [](double l) { return std::sqrt(l); });
    RandomStream rs(6);
    const std::size_t n = 100000;
    Matrix samples(n, 2);
    Vector z(2);
    for (std::size_t i = 0; i < n; ++i) {
      rs.fill_normal(z);
      const Vector x = root * z;
      samples(i, 0) = x[0];
      samples(i, 1) = x[1];
    }
    const Matrix cov = empirical_covariance(samples);
    CHECK(relative_frobenius_error(cov, gamma) <= 0.05);
    CHECK(asymmetry(cov) == 0.0);
    CHECK(min_eigenvalue(cov) >= 0.0);
  }
}

TEST_CASE("CLT diagnostic", "[montecarlo][clt]") {
  const EnsembleResult e = with_errors(Matrix{{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}});
  // Sample covariance is (2/3) I.
  const Matrix cov = (2.0 / 3.0) * Matrix::identity(2);
  CHECK(clt_diagnostic(e, cov) == Approx(0.0).margin(1e-15));
  CHECK(clt_diagnostic(e, (1.0 / 1.1) * cov) == Approx(0.1).epsilon(1e-12));
  CHECK_THROWS_AS(clt_diagnostic(e, Matrix(2, 2)), precondition_error);
  CHECK_THROWS_AS(clt_diagnostic(e, Matrix::identity(3)), dimension_error);
}

TEST_CASE("ensemble runs", "[montecarlo][ensemble]") {
  const QuadraticProblem q(make_ground_truth({2.0, 1.0}, Matrix::identity(2)), 0.5);
  const EnsembleConfig cfg = quick_config(2, 500);

  SECTION("R = 1 reproduces a single trajectory") {
    const EnsembleResult e = run_ensemble(q, cfg, 1, 99);
    const Trajectory t = run_algorithm1(q, cfg.x0, 500, cfg.schedule, derive_seed(99, 0));
    CHECK(e.seeds == std::vector<std::uint64_t>{derive_seed(99, 0)});
    const double scale = std::sqrt(500.0);
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(e.rescaled_errors(0, j) == scale * (t.final_state.x[j] - q.x_star()[j]));
    }
    CHECK(e.excess_risks[0] == Approx(500.0 * (q.loss(t.final_state.x) - q.f_star())));
  }

  SECTION("same master seed gives the same result for any thread count") {
    EnsembleConfig one = cfg;
    one.threads = 1;
    EnsembleConfig four = cfg;
    four.threads = 4;
    const EnsembleResult a = run_ensemble(q, one, 40, 5);
    const EnsembleResult b = run_ensemble(q, four, 40, 5);
    CHECK(a.rescaled_errors == b.rescaled_errors);
    CHECK(a.excess_risks == b.excess_risks);
    CHECK(a.seeds == b.seeds);
    CHECK(std::set<std::uint64_t>(a.seeds.begin(), a.seeds.end()).size() == 40);
    CHECK(a.rescaled_errors.all_finite());
  }

  SECTION("row order does not change the covariance") {
    const EnsembleResult a = run_ensemble(q, cfg, 60, 8);
    std::vector<std::size_t> perm(60);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::rotate(perm.begin(), perm.begin() + 17, perm.end());
    Matrix shuffled(60, 2);
    for (std::size_t i = 0; i < 60; ++i) {
      shuffled(i, 0) = a.rescaled_errors(perm[i], 0);
      shuffled(i, 1) = a.rescaled_errors(perm[i], 1);
    }
    const Matrix c1 = empirical_covariance(a.rescaled_errors);
    const Matrix c2 = empirical_covariance(shuffled);
    CHECK(max_abs(c1 - c2) <= 1e-14 * max_abs(c1));
  }

  SECTION("zero noise: rescaled errors collapse") {
    const QuadraticProblem z(make_ground_truth({2.0, 1.0}, Matrix(2, 2)), 0.5);
    double prev = std::numeric_limits<double>::infinity();
    double prev_mean = std::numeric_limits<double>::infinity();
    for (std::size_t k : {100u, 1000u, 10000u}) {
      const EnsembleResult e = run_ensemble(z, quick_config(2, k), 20, 3);
      double worst = 0.0;
      for (std::size_t i = 0; i < e.R; ++i) worst = std::max(worst, norm2(e.rescaled_errors.row(i)));
      CHECK(worst < prev);
      prev = worst;
      const ExcessRiskCheck c = excess_risk_check(e, excess_risk_spectrum(z.ground_truth().H,
                                                                          z.ground_truth().Gamma));
      CHECK(c.tr_spec == 0.0);
      CHECK(c.emp_mean < prev_mean);
      prev_mean = c.emp_mean;
    }
    CHECK(prev <= 0.1);
    CHECK(prev_mean <= 1e-3);
  }

  SECTION("unknown optimum is rejected") {
    auto data = std::make_shared<Dataset>(generate_classification_data(50, 2, 1));
    const LogisticProblem p(data, 0.02, 4);
    CHECK_THROWS_AS(run_ensemble(p, cfg, 2, 1), precondition_error);
  }

  SECTION("divergent trajectories are reported by seed") {
    EnsembleConfig bad = cfg;
    bad.conditioning = Conditioning::fixed;
    bad.fixed_conditioner = -1.0 * Matrix::identity(2);
    bad.schedule.beta = 0.51;
    bad.n_iters = 5000;
    try {
      run_ensemble(q, bad, 3, 1);
      FAIL("expected ensemble_error");
    } catch (const ensemble_error& e) {
      CHECK(e.failed_seeds().size() == 3);
    }
  }
}

TEST_CASE("excess risk against the spectrum", "[montecarlo][excess]") {
  SECTION("bookkeeping") {
    EnsembleResult e = with_errors(Matrix(4, 2));
    e.excess_risks = {1.0, 2.0, 3.0, 4.0};
    const ExcessRiskCheck c = excess_risk_check(e, Vector{1.0, 2.0});
    CHECK(c.emp_mean == 2.5);
    CHECK(c.tr_spec == 3.0);
    CHECK(c.half_tr_spec == 1.5);
    // Sample variance 5/3, standard error sqrt(5/12).
    CHECK(c.std_error == Approx(std::sqrt(5.0 / 12.0)));
    const ExcessRiskCheck z = excess_risk_check(e, Vector{0.0, 0.0});
    CHECK(z.tr_spec == 0.0);
    CHECK(z.half_tr_spec == 0.0);
    EnsembleResult empty;
    CHECK_THROWS_AS(excess_risk_check(empty, Vector{1.0}), precondition_error);
  }

  SECTION("H = I, Gamma = I, d = 2, optimal conditioning: mean near half the trace") {
    const QuadraticProblem q(make_ground_truth({1.0, 1.0}, Matrix::identity(2)));
    EnsembleConfig cfg = quick_config(2, 10000);
    cfg.conditioning = Conditioning::fixed;
    cfg.fixed_conditioner = spd_inverse(q.ground_truth().H);
    const EnsembleResult e = run_ensemble(q, cfg, 2000, 17);
    const ExcessRiskCheck c =
        excess_risk_check(e, excess_risk_spectrum(q.ground_truth().H, q.ground_truth().Gamma));
    CHECK(c.tr_spec == Approx(2.0));
    CHECK(relative_gap(c.emp_mean, c.half_tr_spec) <= 0.2);
    CHECK(relative_gap(c.emp_mean, c.tr_spec) > 0.2);
  }

  CHECK(relative_gap(1.1, 1.0) == Approx(0.1));
  CHECK(relative_gap(0.0, 0.0) == 0.0);
  CHECK(std::isinf(relative_gap(1.0, 0.0)));
}

TEST_CASE("trace comparison", "[montecarlo][variance]") {
  const EnsembleResult a = with_errors(Matrix{{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}});
  const EnsembleResult b = with_errors(2.0 * a.rescaled_errors);
  const TraceComparison c = compare_covariance_traces(a, b);
  // tr Cov(a) = 4/3, tr Cov(b) = 16/3.
  CHECK(c.trace_a == Approx(4.0 / 3.0));
  CHECK(c.trace_b == Approx(16.0 / 3.0));
  CHECK(c.difference == Approx(4.0));
  // Paired per-row differences are all 3 * 4/3 = 4: no spread.
  CHECK(c.std_error == Approx(0.0).margin(1e-14));

  EnsembleResult shifted = b;
  for (auto& s : shifted.seeds) s += 100;
  const TraceComparison u = compare_covariance_traces(a, shifted);
  CHECK(u.difference == Approx(4.0));
  CHECK(u.std_error == 0.0);  // every per-row contribution is equal within each ensemble

  const EnsembleResult wide = with_errors(Matrix{{1.0, 0.0, 0.0}, {-1.0, 0.0, 0.0}});
  CHECK_THROWS_AS(compare_covariance_traces(a, wide), dimension_error);
}

TEST_CASE("ensemble files", "[montecarlo][io]") {
  const QuadraticProblem q(make_ground_truth({2.0, 1.0}, Matrix::identity(2)));
  const EnsembleResult e = run_ensemble(q, quick_config(2, 100), 5, 2);
  const auto dir = std::filesystem::temp_directory_path() / "condsgd_test_montecarlo";
  std::filesystem::remove_all(dir);
  nlohmann::json extra;
  extra["clt_diagnostic"] = 0.5;
  write_ensemble(dir, "alg1_", e, extra);

  std::ifstream errs(dir / "alg1_rescaled_errors.csv");
  std::string line;
  std::getline(errs, line);
  CHECK(line == "seed,e0,e1");
  std::size_t rows = 0;
  while (std::getline(errs, line)) ++rows;
  CHECK(rows == 5);

  std::ifstream risks(dir / "alg1_excess_risks.csv");
  std::getline(risks, line);
  CHECK(line == "seed,excess_risk");
  std::getline(risks, line);
  CHECK(line.substr(0, line.find(',')) == std::to_string(e.seeds[0]));

  const nlohmann::json s = nlohmann::json::parse(std::ifstream(dir / "alg1_summary.json"));
  CHECK(s["R"] == 5);
  CHECK(s["k_final"] == 100);
  CHECK(s["clt_diagnostic"] == 0.5);
  CHECK(s["empirical_covariance"].size() == 2);
}

TEST_CASE("parallel_for", "[montecarlo][threads]") {
  std::vector<int> hits(100, 0);
  parallel_for(100, 3, [&](std::size_t i) { hits[i] += 1; });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  CHECK_THROWS_AS(parallel_for(10, 2,
                               [](std::size_t i) {
                                 if (i == 7) throw io_error("boom");
                               }),
                  io_error);
  CHECK(worker_count(8, 3) == 3);
  CHECK(worker_count(2, 100) == 2);
  CHECK(worker_count(0, 100) >= 1);
}

TEST_CASE("Algorithm 1 behaves like the oracle conditioner", "[montecarlo][statistical]") {
  const QuadraticProblem q(make_ground_truth({2.0, 1.0}, Matrix::identity(2)), 0.5);
  const Matrix target = optimal_covariance(q.ground_truth().H, q.ground_truth().Gamma);
  EnsembleConfig alg1 = quick_config(2, 10000);
  EnsembleConfig oracle = alg1;
  oracle.conditioning = Conditioning::fixed;
  oracle.fixed_conditioner = spd_inverse(q.ground_truth().H);
  const double a = clt_diagnostic(run_ensemble(q, alg1, 1000, 41), target);
  const double b = clt_diagnostic(run_ensemble(q, oracle, 1000, 41), target);
  CHECK(std::abs(a - b) <= 0.05);
}
