#ifndef CONDSGD_ASYMPTOTICS_HPP
#define CONDSGD_ASYMPTOTICS_HPP

// Limiting covariances of (conditioned) SGD.
//
// With alpha_k = alpha k^(-beta) and a fixed conditioner C, the rescaled
// error (x_k - x*) / sqrt(alpha_k) is asymptotically N(0, Sigma_C) where
//   (CH - kappa I) Sigma_C + Sigma_C (CH - kappa I)^T = C Gamma C^T,
//   kappa = 1/(2 alpha) if beta == 1 and 0 otherwise.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "condsgd/errors.hpp"
#include "condsgd/linalg.hpp"

namespace condsgd {

struct AsymptoticCovariance {
  Matrix sigma;
  double kappa = 0.0;
  double residual = 0.0;
  Matrix C_used;
};

inline double kappa(double alpha, double beta) {
  if (!(alpha > 0.0)) throw precondition_error("alpha must be > 0");
  if (!(beta > 0.5 && beta <= 1.0)) throw precondition_error("beta must lie in (1/2, 1]");
  return beta == 1.0 ? 1.0 / (2.0 * alpha) : 0.0;
}

/// Largest dimension for which the Kronecker-form solve is attempted.
inline constexpr std::size_t kLyapunovMaxDim = 50;

/// ||K S + S K^T - D||_F.
inline double lyapunov_residual(const Matrix& k, const Matrix& sigma, const Matrix& d) {
  return frobenius_norm(k * sigma + sigma * transpose(k) - d);
}

/// Solves K S + S K^T = D through the d^2 x d^2 system
/// (I (x) K + K (x) I) vec(S) = vec(D). Requires the symmetric part of K to
/// be positive definite.
inline Matrix solve_lyapunov(const Matrix& k, const Matrix& d) {
  if (!k.square()) throw dimension_error("Lyapunov operator must be square");
  require_same_shape(k, d, "solve_lyapunov");
  const std::size_t n = k.rows();
  if (n > kLyapunovMaxDim) {
    throw dimension_error("Lyapunov solve limited to d <= " + std::to_string(kLyapunovMaxDim) +
                          ", got " + std::to_string(n));
  }
  Matrix dsym = d;
  symmetrize_checked(dsym);
  const double lmin = min_eigenvalue(symmetric_part(k));
  if (!(lmin > 1e-10)) {
    throw instability_error("Lyapunov operator is not stable: symmetric part has eigenvalue",
                            lmin);
  }

  // Row-major vec: vec(S)[i*n + j] = S(i, j). Then vec(K S) = (K (x) I) vec(S)
  // and vec(S K^T) = (I (x) K) vec(S).
  const Matrix id = Matrix::identity(n);
  const Matrix q = kron(k, id) + kron(id, k);
  const Vector s = solve_linear(q, dsym.entries());
  Matrix sigma(n, n, s);
  return symmetric_part(sigma);
}

/// Sigma_C for the conditioner C under the schedule (alpha, beta).
inline AsymptoticCovariance asymptotic_covariance(const Matrix& c, const Matrix& h,
                                                  const Matrix& gamma, double alpha,
                                                  double beta) {
  require_same_shape(c, h, "asymptotic_covariance");
  require_same_shape(h, gamma, "asymptotic_covariance");
  AsymptoticCovariance out;
  out.kappa = kappa(alpha, beta);
  out.C_used = c;
  Matrix kk = c * h;
  for (std::size_t i = 0; i < kk.rows(); ++i) kk(i, i) -= out.kappa;
  Matrix dd = c * gamma * transpose(c);
  dd = symmetric_part(dd);
  out.sigma = solve_lyapunov(kk, dd);
  out.residual = lyapunov_residual(kk, out.sigma, dd);
  return out;
}

/// H^{-1} Gamma H^{-1}, the smallest attainable limiting covariance.
inline Matrix optimal_covariance(const Matrix& h, const Matrix& gamma) {
  const Matrix hinv = spd_inverse(h);
  return symmetric_part(hinv * gamma * hinv);
}

/// Whether C is invertible and CH - I/2 has a positive definite symmetric part.
inline bool membership_C_H(const Matrix& c, const Matrix& h) {
  if (!c.square()) throw dimension_error("conditioner must be square");
  require_same_shape(c, h, "membership_C_H");
  try {
    (void)LU(c);
  } catch (const singular_error&) {
    return false;
  }
  Matrix m = c * h;
  for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) -= 0.5;
  return min_eigenvalue(symmetric_part(m)) > 0.0;
}

/// Eigenvalues (ascending) of H^{-1/2} Gamma H^{-1/2}.
inline Vector excess_risk_spectrum(const Matrix& h, const Matrix& gamma) {
  const SymEigen eh = sym_eigen(h);
  if (!(eh.eigenvalues.front() > 0.0)) {
    throw definiteness_error("H is not positive definite", eh.eigenvalues.front());
  }
  const Matrix h_inv_sqrt = spectral_apply(eh, [](double l) { return 1.0 / std::sqrt(l); });
  return sym_eigen(symmetric_part(h_inv_sqrt * gamma * h_inv_sqrt)).eigenvalues;
}

}  // namespace condsgd

#endif
