#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "condsgd/asymptotics.hpp"
#include "condsgd/verification.hpp"

using namespace condsgd;
using Catch::Approx;

namespace {

double dist(const Matrix& a, const Matrix& b) { return frobenius_norm(a - b); }

// Orthogonal factor of a Gram-Schmidt pass over a Gaussian matrix.
Matrix random_orthogonal(std::size_t d, RandomStream& rs) {
  Matrix q = random_gaussian_matrix(d, d, rs);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double p = 0.0;
      for (std::size_t i = 0; i < d; ++i) p += q(i, j) * q(i, k);
      for (std::size_t i = 0; i < d; ++i) q(i, j) -= p * q(i, k);
    }
    double n = 0.0;
    for (std::size_t i = 0; i < d; ++i) n += q(i, j) * q(i, j);
    n = std::sqrt(n);
    for (std::size_t i = 0; i < d; ++i) q(i, j) /= n;
  }
  return q;
}

}  // namespace

TEST_CASE("kappa", "[asymptotics]") {
  CHECK(kappa(1.0, 1.0) == 0.5);
  CHECK(kappa(2.0, 1.0) == 0.25);
  CHECK(kappa(1.0, 0.75) == 0.0);
  CHECK_THROWS_AS(kappa(1.0, 0.5), precondition_error);
  CHECK_THROWS_AS(kappa(-1.0, 1.0), precondition_error);
}

TEST_CASE("solve_lyapunov examples", "[asymptotics][lyapunov]") {
  const Matrix i2 = Matrix::identity(2);
  CHECK(dist(solve_lyapunov(i2, i2), 0.5 * i2) <= 1e-14);
  CHECK(dist(solve_lyapunov(0.5 * i2, i2), i2) <= 1e-14);
  // Decoupled scalar equations 2 k_i s_i = 1.
  CHECK(dist(solve_lyapunov(Matrix::diagonal({1.0, 2.0}), i2), Matrix::diagonal({0.5, 0.25})) <=
        1e-14);

  SECTION("a non-normal operator: upper triangular K") {
    // K = [[1, 1], [0, 1]], D = I. Writing S = [[a, b], [b, c]]:
    //   (2,2): 2c = 1          -> c = 1/2
    //   (1,2): 2b + c = 0      -> b = -1/4
    //   (1,1): 2a + 2b = 1     -> a = 3/4
    const Matrix s = solve_lyapunov(Matrix{{1.0, 1.0}, {0.0, 1.0}}, i2);
    CHECK(dist(s, Matrix{{0.75, -0.25}, {-0.25, 0.5}}) <= 1e-14);
  }

  SECTION("errors") {
    try {
      solve_lyapunov(Matrix::diagonal({1.0, -0.5}), i2);
      FAIL("expected instability_error");
    } catch (const instability_error& e) {
      CHECK(e.eigenvalue() == Approx(-0.5));
    }
    CHECK_THROWS_AS(solve_lyapunov(Matrix::identity(51), Matrix::identity(51)), dimension_error);
    CHECK_THROWS_AS(solve_lyapunov(i2, Matrix::identity(3)), dimension_error);
    CHECK_THROWS_AS(solve_lyapunov(i2, Matrix{{1.0, 1.0}, {0.0, 1.0}}), symmetry_error);
  }
}

TEST_CASE("asymptotic covariance", "[asymptotics]") {
  const Matrix i2 = Matrix::identity(2);
  const AsymptoticCovariance a = asymptotic_covariance(i2, i2, i2, 1.0, 1.0);
  CHECK(dist(a.sigma, i2) <= 1e-14);
  CHECK(a.kappa == 0.5);
  CHECK(a.residual <= 1e-14);
  CHECK(a.C_used == i2);

  const Matrix h = Matrix::diagonal({2.0, 1.0});
  const AsymptoticCovariance b = asymptotic_covariance(spd_inverse(h), h, i2, 1.0, 1.0);
  CHECK(dist(b.sigma, Matrix::diagonal({0.25, 1.0})) <= 1e-14);

  SECTION("plain SGD on a diagonal problem: sigma_i = gamma_i / (2 h_i - 1)") {
    const AsymptoticCovariance c = asymptotic_covariance(i2, h, i2, 1.0, 1.0);
    CHECK(dist(c.sigma, Matrix::diagonal({1.0 / 3.0, 1.0})) <= 1e-14);
  }

  SECTION("beta < 1 drops the kappa shift: sigma_i = gamma_i / (2 h_i)") {
    const AsymptoticCovariance c = asymptotic_covariance(i2, h, i2, 1.0, 0.75);
    CHECK(c.kappa == 0.0);
    CHECK(dist(c.sigma, Matrix::diagonal({0.25, 0.5})) <= 1e-14);
  }

  SECTION("unstable conditioner") {
    CHECK_THROWS_AS(asymptotic_covariance(0.4 * i2, i2, i2, 1.0, 1.0), instability_error);
  }
}

TEST_CASE("optimal covariance", "[asymptotics]") {
  const Matrix g{{2.0, 0.5}, {0.5, 1.0}};
  CHECK(dist(optimal_covariance(Matrix::identity(2), g), g) <= 1e-15);
  CHECK(dist(optimal_covariance(2.0 * Matrix::identity(2), Matrix::identity(2)),
             0.25 * Matrix::identity(2)) <= 1e-15);
  CHECK_THROWS_AS(optimal_covariance(Matrix::diagonal({1.0, -1.0}), g), definiteness_error);

  RandomStream rs(21);
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 1 + rs.index(8);
    const Matrix h = random_spd(d, rs);
    const Matrix gamma = random_spd(d, rs);
    const Matrix lyap = asymptotic_covariance(spd_inverse(h), h, gamma, 1.0, 1.0).sigma;
    CHECK(dist(optimal_covariance(h, gamma), lyap) <= 1e-9);
  }
}

TEST_CASE("membership in the admissible conditioner set", "[asymptotics]") {
  const Matrix h = Matrix::diagonal({2.0, 1.0});
  CHECK(membership_C_H(spd_inverse(h), h));
  CHECK_FALSE(membership_C_H(Matrix(2, 2), h));
  CHECK_FALSE(membership_C_H(0.4 * Matrix::identity(2), Matrix::identity(2)));
  CHECK(membership_C_H(0.6 * Matrix::identity(2), Matrix::identity(2)));
  CHECK_THROWS_AS(membership_C_H(Matrix::identity(3), h), dimension_error);

  RandomStream rs(4);
  for (int t = 0; t < 30; ++t) {
    const std::size_t d = 1 + rs.index(6);
    const Matrix hh = random_spd(d, rs);
    CHECK(membership_C_H(random_admissible_conditioner(hh, rs), hh));
  }
}

TEST_CASE("excess risk spectrum", "[asymptotics]") {
  const Matrix g{{2.0, 0.5}, {0.5, 1.0}};
  const Vector from_identity = excess_risk_spectrum(Matrix::identity(2), g);
  const Vector direct = sym_eigen(g).eigenvalues;
  CHECK(from_identity[0] == Approx(direct[0]));
  CHECK(from_identity[1] == Approx(direct[1]));

  for (double l : excess_risk_spectrum(g, g)) CHECK(l == Approx(1.0));

  const Vector s = excess_risk_spectrum(Matrix::diagonal({4.0, 1.0}), Matrix::identity(2));
  CHECK(s[0] == Approx(0.25));
  CHECK(s[1] == Approx(1.0));

  CHECK_THROWS_AS(excess_risk_spectrum(Matrix::diagonal({1.0, 0.0}), g), definiteness_error);

  SECTION("invariant under a common orthogonal change of basis") {
    RandomStream rs(31);
    for (int t = 0; t < 30; ++t) {
      const std::size_t d = 1 + rs.index(8);
      const Matrix h = random_spd(d, rs);
      const Matrix gamma = random_spd(d, rs);
      const Matrix q = random_orthogonal(d, rs);
      const Vector a = excess_risk_spectrum(h, gamma);
      const Vector b = excess_risk_spectrum(symmetric_part(q * h * transpose(q)),
                                            symmetric_part(q * gamma * transpose(q)));
      for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-9 * std::max(1.0, a.back()));
    }
  }
}

TEST_CASE("Lyapunov residual on random stable instances", "[asymptotics][property]") {
  const SweepResult r = lyapunov_residual_sweep(200, 20, 123);
  CHECK(r.instances == 200);
  CHECK(r.worst <= 1e-9);
  CHECK(r.passed);
}

TEST_CASE("H^-1 is the optimal conditioner", "[asymptotics][property]") {
  const OptimalitySweepResult r = optimality_sweep(100, 10, 321);
  CHECK(r.worst_min_eigenvalue >= -1e-8);
  CHECK(r.worst_equality_gap <= 1e-8);
  CHECK(r.passed);

  SECTION("a different admissible conditioner is strictly worse when Gamma is definite") {
    RandomStream rs(8);
    for (int t = 0; t < 20; ++t) {
      const std::size_t d = 1 + rs.index(6);
      const Matrix h = random_spd(d, rs);
      const Matrix gamma = random_spd(d, rs);
      const Matrix c = random_admissible_conditioner(h, rs, 0.5);
      if (dist(c, spd_inverse(h)) < 1e-6) continue;
      const Matrix delta = asymptotic_covariance(c, h, gamma, 1.0, 1.0).sigma -
                           optimal_covariance(h, gamma);
      CHECK(frobenius_norm(delta) > 1e-8);
    }
  }
}

TEST_CASE("gap to the optimum solves its own Lyapunov equation", "[asymptotics][property]") {
  RandomStream rs(55);
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 1 + rs.index(8);
    const Matrix h = random_spd(d, rs);
    const Matrix gamma = random_spd(d, rs);
    const Matrix c = random_admissible_conditioner(h, rs);
    const Matrix hinv = spd_inverse(h);
    const Matrix delta = asymptotic_covariance(c, h, gamma, 1.0, 1.0).sigma -
                         optimal_covariance(h, gamma);
    Matrix k = c * h;
    for (std::size_t i = 0; i < d; ++i) k(i, i) -= 0.5;
    const Matrix e = c - hinv;
    const Matrix rhs = e * gamma * transpose(e);
    const Matrix lhs = k * delta + delta * transpose(k);
    CHECK(dist(lhs, rhs) <= 1e-8 * std::max(1.0, frobenius_norm(rhs)));
  }
}
