#ifndef CONDSGD_LINALG_HPP
#define CONDSGD_LINALG_HPP

// Dense real linear algebra for small and moderate dimensions.
//
// Matrices are row-major and own their storage. The `*_into` variants write
// into caller-owned buffers and do not allocate once the buffers have the
// right shape; the optimizer loops rely on that.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "condsgd/errors.hpp"

namespace condsgd {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), entries_(rows * cols, fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
      : rows_(rows), cols_(cols), entries_(std::move(entries)) {
    if (entries_.size() != rows_ * cols_) {
      throw dimension_error("matrix entry count " +
                            std::to_string(entries_.size()) + " != " +
                            std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    for (double v : entries_) {
      if (!std::isfinite(v)) throw error("matrix entry is not finite");
    }
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    entries_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw dimension_error("ragged matrix literal");
      for (double v : r) {
        if (!std::isfinite(v)) throw error("matrix entry is not finite");
        entries_.push_back(v);
      }
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
  }

  static Matrix diagonal(std::initializer_list<double> diag) {
    return diagonal(std::span<const double>(diag.begin(), diag.size()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) noexcept {
    return entries_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    return entries_[i * cols_ + j];
  }

  double* data() noexcept { return entries_.data(); }
  const double* data() const noexcept { return entries_.data(); }
  std::span<double> row(std::size_t i) noexcept {
    return {entries_.data() + i * cols_, cols_};
  }
  std::span<const double> row(std::size_t i) const noexcept {
    return {entries_.data() + i * cols_, cols_};
  }
  const std::vector<double>& entries() const noexcept { return entries_; }

  /// Reshape, keeping capacity. Contents are unspecified afterwards.
  void resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    entries_.resize(rows * cols);
  }

  void fill(double v) { std::fill(entries_.begin(), entries_.end(), v); }

  void set_identity(std::size_t n) {
    resize(n, n);
    fill(0.0);
    for (std::size_t i = 0; i < n; ++i) (*this)(i, i) = 1.0;
  }

  bool all_finite() const noexcept {
    return std::all_of(entries_.begin(), entries_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> entries_;
};

// ---------------------------------------------------------------------------
// Elementwise and product operations

inline void require_same_shape(const Matrix& a, const Matrix& b,
                               const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw dimension_error(std::string(what) + ": shape mismatch " +
                          std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " +
                          std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
  }
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "matrix sum");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "matrix difference");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

inline Matrix operator*(double s, const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = s * a.data()[i];
  return out;
}

inline Matrix operator*(const Matrix& a, double s) { return s * a; }

inline void multiply_into(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.rows()) {
    throw dimension_error("matrix product: inner dimensions " +
                          std::to_string(a.cols()) + " and " +
                          std::to_string(b.rows()));
  }
  out.resize(a.rows(), b.cols());
  out.fill(0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data() + k * b.cols();
      double* orow = out.data() + i * out.cols();
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
}

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  Matrix out;
  multiply_into(a, b, out);
  return out;
}

inline void matvec_into(const Matrix& a, std::span<const double> x,
                        std::span<double> out) {
  if (a.cols() != x.size() || a.rows() != out.size()) {
    throw dimension_error("matrix-vector product: dimension mismatch");
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.data() + i * a.cols();
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc += arow[j] * x[j];
    out[i] = acc;
  }
}

inline Vector operator*(const Matrix& a, const Vector& x) {
  Vector out(a.rows());
  matvec_into(a, x, out);
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.entries()) s += v * v;
  return std::sqrt(s);
}

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.entries()) m = std::max(m, std::abs(v));
  return m;
}

inline double trace(const Matrix& a) {
  if (!a.square()) throw dimension_error("trace of non-square matrix");
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, i);
  return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw dimension_error("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double l1_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

inline double distance2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline Matrix outer(std::span<const double> a, std::span<const double> b) {
  Matrix out(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out(i, j) = a[i] * b[j];
  return out;
}

// ---------------------------------------------------------------------------
// Symmetry

/// Relative asymmetry max|m_ij - m_ji| / max|m|. Zero for the zero matrix.
inline double asymmetry(const Matrix& m) {
  const double scale = max_abs(m);
  if (scale == 0.0) return 0.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      worst = std::max(worst, std::abs(m(i, j) - m(j, i)));
  return worst / scale;
}

inline constexpr double kSymmetryTolerance = 1e-12;

/// Replaces m by (m + m^T)/2 in place; throws if the asymmetry exceeds the
/// tolerance or m is not square.
inline void symmetrize_checked(Matrix& m, double tol = kSymmetryTolerance) {
  if (!m.square()) {
    throw dimension_error("expected a square matrix, got " +
                          std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()));
  }
  const double a = asymmetry(m);
  if (a > tol) {
    throw symmetry_error("matrix is not symmetric (relative asymmetry " +
                         std::to_string(a) + ")");
  }
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j) {
      const double s = 0.5 * (m(i, j) + m(j, i));
      m(i, j) = s;
      m(j, i) = s;
    }
}

/// Unconditional (m + m^T)/2.
inline Matrix symmetric_part(const Matrix& m) {
  if (!m.square()) throw dimension_error("symmetric part of non-square matrix");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      out(i, j) = 0.5 * (m(i, j) + m(j, i));
  return out;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)

struct SymEigen {
  Vector eigenvalues;   // ascending
  Matrix eigenvectors;  // columns
};

namespace detail {

/// Diagonalizes the symmetric matrix `a` in place by cyclic Jacobi rotations,
/// accumulating the rotations in `v`. On return the eigenvalues are sorted
/// ascending in `w` and the columns of `v` permuted to match. `a` is
/// destroyed.
inline void jacobi_eigen(Matrix& a, Matrix& v, Vector& w) {
  const std::size_t n = a.rows();
  v.set_identity(n);
  w.resize(n);

  const double norm = frobenius_norm(a);
  const double tol = 1e-12 * norm;
  constexpr int kMaxSweeps = 100;

  int sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
    if (std::sqrt(off) <= tol) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t;
        if (std::abs(theta) > 1e150) {
          t = 0.5 / theta;
        } else {
          t = (theta >= 0.0 ? 1.0 : -1.0) /
              (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (sweep == kMaxSweeps) throw error("Jacobi eigensolver did not converge");

  for (std::size_t i = 0; i < n; ++i) w[i] = a(i, i);

  // Insertion sort on (eigenvalue, column); n is small and often sorted.
  for (std::size_t i = 1; i < n; ++i) {
    std::size_t j = i;
    while (j > 0 && w[j - 1] > w[j]) {
      std::swap(w[j - 1], w[j]);
      for (std::size_t k = 0; k < n; ++k) std::swap(v(k, j - 1), v(k, j));
      --j;
    }
  }
}

}  // namespace detail

/// Reusable buffers for repeated eigendecompositions of same-sized matrices.
struct EigenWorkspace {
  Matrix work;
};

/// Eigendecomposition without the symmetry check; `m` must already be
/// exactly symmetric. Writes into `out`, reusing its storage.
inline void sym_eigen_into(const Matrix& m, SymEigen& out, EigenWorkspace& ws) {
  ws.work = m;
  detail::jacobi_eigen(ws.work, out.eigenvectors, out.eigenvalues);
}

inline SymEigen sym_eigen(const Matrix& m) {
  Matrix sym = m;
  symmetrize_checked(sym);
  SymEigen out;
  EigenWorkspace ws;
  sym_eigen_into(sym, out, ws);
  return out;
}

/// V diag(f(lambda)) V^T written into `out`.
template <class F>
void spectral_apply_into(const SymEigen& e, F&& f, Matrix& out) {
  const std::size_t n = e.eigenvalues.size();
  out.resize(n, n);
  out.fill(0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double fk = f(e.eigenvalues[k]);
    if (fk == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double vik = fk * e.eigenvectors(i, k);
      if (vik == 0.0) continue;
      for (std::size_t j = i; j < n; ++j) out(i, j) += vik * e.eigenvectors(j, k);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) out(i, j) = out(j, i);
}

template <class F>
Matrix spectral_apply(const SymEigen& e, F&& f) {
  Matrix out;
  spectral_apply_into(e, std::forward<F>(f), out);
  return out;
}

inline double min_eigenvalue(const Matrix& m) {
  return sym_eigen(m).eigenvalues.front();
}

inline double max_eigenvalue(const Matrix& m) {
  return sym_eigen(m).eigenvalues.back();
}

// ---------------------------------------------------------------------------
// Factorizations and solves

/// Lower Cholesky factor of an SPD matrix, in place in `l` (upper part
/// zeroed). Throws definiteness_error naming the failing pivot.
inline void cholesky_into(const Matrix& m, Matrix& l) {
  const std::size_t n = m.rows();
  l.resize(n, n);
  l.fill(0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) {
      throw definiteness_error(
          "matrix is not positive definite at pivot " + std::to_string(j), d);
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
}

inline Matrix cholesky(const Matrix& m) {
  Matrix sym = m;
  symmetrize_checked(sym);
  Matrix l;
  cholesky_into(sym, l);
  return l;
}

/// Inverse of an SPD matrix through its Cholesky factor. `l` and `out` are
/// caller buffers; `m` must be exactly symmetric.
inline void spd_inverse_into(const Matrix& m, Matrix& l, Matrix& out) {
  cholesky_into(m, l);
  const std::size_t n = m.rows();
  // out <- L^{-1} (lower triangular), then out <- L^{-T} L^{-1}.
  out.resize(n, n);
  out.fill(0.0);
  for (std::size_t j = 0; j < n; ++j) {
    out(j, j) = 1.0 / l(j, j);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = j; k < i; ++k) s -= l(i, k) * out(k, j);
      out(i, j) = s / l(i, i);
    }
  }
  // (L^{-T} L^{-1})_{ij} = sum_{k >= max(i,j)} Linv(k,i) Linv(k,j)
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = i; k < n; ++k) s += out(k, i) * out(k, j);
      l(i, j) = s;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      out(i, j) = l(i, j);
      out(j, i) = l(i, j);
    }
}

inline Matrix spd_inverse(const Matrix& m) {
  Matrix sym = m;
  symmetrize_checked(sym);
  Matrix l;
  Matrix out;
  spd_inverse_into(sym, l, out);
  return out;
}

/// Partial-pivot LU factorization of a square matrix.
class LU {
 public:
  explicit LU(Matrix a) : lu_(std::move(a)), perm_(lu_.rows()) {
    if (!lu_.square()) throw dimension_error("LU of non-square matrix");
    const std::size_t n = lu_.rows();
    const double threshold = 1e-12 * max_abs(lu_);
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t piv = k;
      double best = std::abs(lu_(k, k));
      for (std::size_t i = k + 1; i < n; ++i) {
        if (std::abs(lu_(i, k)) > best) {
          best = std::abs(lu_(i, k));
          piv = i;
        }
      }
      if (best < threshold || best == 0.0) {
        throw singular_error(
            "matrix is singular to working precision at column " +
                std::to_string(k),
            best);
      }
      if (piv != k) {
        for (std::size_t j = 0; j < n; ++j) std::swap(lu_(k, j), lu_(piv, j));
        std::swap(perm_[k], perm_[piv]);
      }
      const double inv = 1.0 / lu_(k, k);
      for (std::size_t i = k + 1; i < n; ++i) {
        const double f = lu_(i, k) * inv;
        lu_(i, k) = f;
        if (f == 0.0) continue;
        double* irow = lu_.data() + i * n;
        const double* krow = lu_.data() + k * n;
        for (std::size_t j = k + 1; j < n; ++j) irow[j] -= f * krow[j];
      }
    }
  }

  Vector solve(std::span<const double> b) const {
    const std::size_t n = lu_.rows();
    if (b.size() != n) throw dimension_error("LU solve: rhs length mismatch");
    Vector x(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = b[perm_[i]];
      const double* row = lu_.data() + i * n;
      for (std::size_t k = 0; k < i; ++k) s -= row[k] * x[k];
      x[i] = s;
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = x[i];
      const double* row = lu_.data() + i * n;
      for (std::size_t k = i + 1; k < n; ++k) s -= row[k] * x[k];
      x[i] = s / row[i];
    }
    return x;
  }

 private:
  Matrix lu_;
  std::vector<std::size_t> perm_;
};

inline Vector solve_linear(const Matrix& a, std::span<const double> b) {
  if (!a.square()) throw dimension_error("solve_linear: matrix not square");
  return LU(a).solve(b);
}

// ---------------------------------------------------------------------------

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double aij = a(i, j);
      for (std::size_t k = 0; k < b.rows(); ++k)
        for (std::size_t l = 0; l < b.cols(); ++l)
          out(i * b.rows() + k, j * b.cols() + l) = aij * b(k, l);
    }
  return out;
}

/// True iff B - A is positive semidefinite up to `tol` (Loewner order A <= B).
inline bool psd_order(const Matrix& a, const Matrix& b, double tol) {
  require_same_shape(a, b, "psd_order");
  return min_eigenvalue(b - a) >= -tol;
}

// ---------------------------------------------------------------------------
// Plain-text serialization: "rows cols" then one row per line.

inline void write_matrix(std::ostream& os, const Matrix& m) {
  const auto old_precision = os.precision(17);
  os << m.rows() << ' ' << m.cols() << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) os << ' ';
      os << m(i, j);
    }
    os << '\n';
  }
  os.precision(old_precision);
}

inline Matrix read_matrix(std::istream& is) {
  std::size_t rows = 0;
  std::size_t cols = 0;
  if (!(is >> rows >> cols)) throw io_error("matrix header \"rows cols\" missing");
  std::vector<double> entries(rows * cols);
  for (double& v : entries) {
    if (!(is >> v)) throw io_error("matrix body truncated");
  }
  return Matrix(rows, cols, std::move(entries));
}

}  // namespace condsgd

#endif
