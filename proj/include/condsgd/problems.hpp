#ifndef CONDSGD_PROBLEMS_HPP
#define CONDSGD_PROBLEMS_HPP

// Stochastic objective oracles.
//
// A problem exposes the true objective F, a stochastic gradient generator and
// a stochastic Hessian generator. Generators draw from a caller-supplied
// RandomStream and write into caller buffers; problems themselves hold no
// mutable state and may be shared between threads.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "condsgd/errors.hpp"
#include "condsgd/linalg.hpp"
#include "condsgd/random.hpp"

namespace condsgd {

struct GradientSample {
  Vector value;
  std::vector<std::size_t> batch_indices;
};

struct HessianSample {
  Matrix value;
};

/// Per-step scratch shared between the gradient and the Hessian draw of a
/// single step. The Hessian generator reads the batch the gradient drew.
struct SampleContext {
  std::vector<std::size_t> batch;
  std::vector<std::size_t> hessian_batch;
  Vector noise;
  Matrix scratch;
};

template <class P>
concept StochasticProblem =
    requires(const P& p, std::span<const double> x, RandomStream& rs,
             SampleContext& ctx, std::span<double> g, Matrix& h) {
      { p.dim() } -> std::convertible_to<std::size_t>;
      { p.loss(x) } -> std::convertible_to<double>;
      p.sample_gradient(x, rs, ctx, g);
      p.sample_hessian(x, rs, ctx, h);
      { p.hessians_psd() } -> std::convertible_to<bool>;
    };

/// Problems whose minimizer and minimum value are known (analytically or by
/// a deterministic solve).
template <class P>
concept ProblemWithOptimum = StochasticProblem<P> && requires(const P& p) {
  { p.x_star() } -> std::convertible_to<const Vector&>;
  { p.f_star() } -> std::convertible_to<double>;
  { p.reference_hessian() } -> std::convertible_to<const Matrix*>;
};

// ---------------------------------------------------------------------------
// Linear-Gaussian quadratic

/// Minimizer, Hessian at the minimizer, gradient-noise covariance and
/// minimum value of a problem with known asymptotics.
struct GroundTruth {
  Vector x_star;
  Matrix H;
  Matrix Gamma;
  double F_star = 0.0;

  void validate() const {
    const std::size_t d = x_star.size();
    if (d == 0) throw dimension_error("ground truth: empty minimizer");
    if (H.rows() != d || H.cols() != d || Gamma.rows() != d || Gamma.cols() != d) {
      throw dimension_error("ground truth: H and Gamma must be " +
                            std::to_string(d) + "x" + std::to_string(d));
    }
    if (min_eigenvalue(H) <= 0.0) {
      throw definiteness_error("ground truth: H is not positive definite",
                               min_eigenvalue(H));
    }
    const double gmin = min_eigenvalue(Gamma);
    if (gmin < -1e-12 * std::max(1.0, max_abs(Gamma))) {
      throw definiteness_error("ground truth: Gamma is not positive semidefinite", gmin);
    }
  }
};

/// F(x) = F* + (x - x*)^T H (x - x*) / 2, gradient H(x - x*) + w with
/// w ~ N(0, Gamma), Hessian generator H + hessian_noise * S where S is the
/// symmetric part of a standard Gaussian matrix.
class QuadraticProblem {
 public:
  explicit QuadraticProblem(GroundTruth gt, double hessian_noise = 0.0)
      : gt_(std::move(gt)), hessian_noise_(hessian_noise) {
    gt_.validate();
    symmetrize_checked(gt_.H);
    symmetrize_checked(gt_.Gamma);
    if (hessian_noise_ < 0.0) throw precondition_error("hessian_noise must be >= 0");
    // Gamma = L L^T with L = V sqrt(max(lambda, 0)).
    const SymEigen e = sym_eigen(gt_.Gamma);
    const std::size_t d = dim();
    noise_factor_ = Matrix(d, d);
    for (std::size_t k = 0; k < d; ++k) {
      const double s = std::sqrt(std::max(e.eigenvalues[k], 0.0));
      for (std::size_t i = 0; i < d; ++i) noise_factor_(i, k) = e.eigenvectors(i, k) * s;
    }
    noiseless_ = max_abs(noise_factor_) == 0.0;
  }

  std::size_t dim() const noexcept { return gt_.x_star.size(); }
  const GroundTruth& ground_truth() const noexcept { return gt_; }
  const Vector& x_star() const noexcept { return gt_.x_star; }
  double f_star() const noexcept { return gt_.F_star; }
  const Matrix* reference_hessian() const noexcept { return &gt_.H; }
  bool hessians_psd() const noexcept { return hessian_noise_ == 0.0; }
  double hessian_noise() const noexcept { return hessian_noise_; }

  double loss(std::span<const double> x) const {
    const std::size_t d = dim();
    double q = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double hi = 0.0;
      for (std::size_t j = 0; j < d; ++j) hi += gt_.H(i, j) * (x[j] - gt_.x_star[j]);
      q += (x[i] - gt_.x_star[i]) * hi;
    }
    return gt_.F_star + 0.5 * q;
  }

  Vector full_gradient(std::span<const double> x) const {
    Vector diff(dim());
    for (std::size_t i = 0; i < dim(); ++i) diff[i] = x[i] - gt_.x_star[i];
    return gt_.H * diff;
  }

  void sample_gradient(std::span<const double> x, RandomStream& rs,
                       SampleContext& ctx, std::span<double> out) const {
    const std::size_t d = dim();
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += gt_.H(i, j) * (x[j] - gt_.x_star[j]);
      out[i] = s;
    }
    if (noiseless_) return;
    ctx.noise.resize(d);
    rs.fill_normal(ctx.noise);
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += noise_factor_(i, j) * ctx.noise[j];
      out[i] += s;
    }
  }

  void sample_hessian(std::span<const double>, RandomStream& rs, SampleContext&,
                      Matrix& out) const {
    out = gt_.H;
    if (hessian_noise_ == 0.0) return;
    const std::size_t d = dim();
    for (std::size_t i = 0; i < d; ++i) {
      out(i, i) += hessian_noise_ * rs.normal();
      for (std::size_t j = i + 1; j < d; ++j) {
        const double s = hessian_noise_ * std::sqrt(0.5) * rs.normal();
        out(i, j) += s;
        out(j, i) += s;
      }
    }
  }

  GradientSample gradient(std::span<const double> x, RandomStream& rs) const {
    SampleContext ctx;
    GradientSample g{Vector(dim()), {}};
    sample_gradient(x, rs, ctx, g.value);
    return g;
  }

 private:
  GroundTruth gt_;
  double hessian_noise_;
  Matrix noise_factor_;
  bool noiseless_ = false;
};

/// Ground truth with diagonal H, the given Gamma, x* and F* = 0.
inline GroundTruth make_ground_truth(Vector h_diagonal, Matrix gamma,
                                     std::optional<Vector> x_star = std::nullopt) {
  GroundTruth gt;
  gt.x_star = x_star ? std::move(*x_star) : Vector(h_diagonal.size(), 0.0);
  gt.H = Matrix::diagonal(h_diagonal);
  gt.Gamma = std::move(gamma);
  gt.F_star = 0.0;
  gt.validate();
  return gt;
}

// ---------------------------------------------------------------------------
// Logistic-regression ERM

struct Dataset {
  Matrix features;          // n x d
  std::vector<int> labels;  // n values in {0, 1}
  std::string name;

  std::size_t n() const noexcept { return features.rows(); }
  std::size_t d() const noexcept { return features.cols(); }

  void validate() const {
    if (n() == 0 || d() == 0) throw dimension_error("dataset must have n >= 1 and d >= 1");
    if (labels.size() != n()) {
      throw dimension_error("dataset: " + std::to_string(labels.size()) +
                            " labels for " + std::to_string(n()) + " rows");
    }
    if (!features.all_finite()) throw error("dataset: non-finite feature");
    for (int y : labels) {
      if (y != 0 && y != 1) throw error("dataset: label outside {0,1}");
    }
  }
};

namespace detail {

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) noexcept {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void check_weights(std::span<const double> w, const Dataset& data) {
  if (w.size() != data.d()) {
    throw dimension_error("weight vector has length " + std::to_string(w.size()) +
                          ", dataset has d = " + std::to_string(data.d()));
  }
}

inline void check_batch(std::span<const std::size_t> batch, const Dataset& data) {
  if (batch.empty()) throw precondition_error("empty mini-batch");
  for (std::size_t i : batch) {
    if (i >= data.n()) {
      throw precondition_error("batch index " + std::to_string(i) +
                               " out of range for n = " + std::to_string(data.n()));
    }
  }
}

inline void logistic_grad_into(std::span<const double> w, const Dataset& data,
                               std::span<const std::size_t> batch, double lambda,
                               std::span<double> out) {
  const std::size_t d = data.d();
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i : batch) {
    const auto xi = data.features.row(i);
    const double r = sigmoid(dot(xi, w)) - data.labels[i];
    for (std::size_t j = 0; j < d; ++j) out[j] += r * xi[j];
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t j = 0; j < d; ++j) out[j] = out[j] * inv_b + lambda * w[j];
}

inline void logistic_hess_into(std::span<const double> w, const Dataset& data,
                               std::span<const std::size_t> batch, double lambda,
                               Matrix& out) {
  const std::size_t d = data.d();
  out.resize(d, d);
  out.fill(0.0);
  for (std::size_t i : batch) {
    const auto xi = data.features.row(i);
    const double p = sigmoid(dot(xi, w));
    const double c = p * (1.0 - p);
    for (std::size_t a = 0; a < d; ++a) {
      const double ca = c * xi[a];
      double* orow = out.data() + a * d;
      for (std::size_t b = a; b < d; ++b) orow[b] += ca * xi[b];
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      out(a, b) *= inv_b;
      out(b, a) = out(a, b);
    }
    out(a, a) += lambda;
  }
}

}  // namespace detail

/// Mean negative log-likelihood plus (lambda/2)||w||^2.
inline double logistic_loss(std::span<const double> w, const Dataset& data, double lambda) {
  detail::check_weights(w, data);
  double s = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const double z = dot(data.features.row(i), w);
    s += data.labels[i] == 1 ? detail::softplus(-z) : detail::softplus(z);
  }
  return s / static_cast<double>(data.n()) + 0.5 * lambda * dot(w, w);
}

inline GradientSample logistic_grad_batch(std::span<const double> w, const Dataset& data,
                                          std::span<const std::size_t> batch,
                                          double lambda) {
  detail::check_weights(w, data);
  detail::check_batch(batch, data);
  GradientSample g{Vector(data.d()), {batch.begin(), batch.end()}};
  detail::logistic_grad_into(w, data, batch, lambda, g.value);
  return g;
}

inline HessianSample logistic_hess_batch(std::span<const double> w, const Dataset& data,
                                         std::span<const std::size_t> batch, double lambda) {
  detail::check_weights(w, data);
  detail::check_batch(batch, data);
  HessianSample h;
  detail::logistic_hess_into(w, data, batch, lambda, h.value);
  return h;
}

inline std::vector<std::size_t> all_indices(const Dataset& data) {
  std::vector<std::size_t> idx(data.n());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

struct NewtonResult {
  Vector x;
  double f = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
};

/// Damped full-batch Newton from w = 0 until ||grad|| <= tol.
inline NewtonResult logistic_newton(const Dataset& data, double lambda, double tol = 1e-12,
                                    int max_iter = 200) {
  data.validate();
  const auto idx = all_indices(data);
  const std::size_t d = data.d();
  NewtonResult r;
  r.x.assign(d, 0.0);
  r.f = logistic_loss(r.x, data, lambda);
  Vector g(d);
  Matrix h;
  for (; r.iterations < max_iter; ++r.iterations) {
    detail::logistic_grad_into(r.x, data, idx, lambda, g);
    r.grad_norm = norm2(g);
    if (r.grad_norm <= tol) return r;
    detail::logistic_hess_into(r.x, data, idx, lambda, h);
    const Vector step = solve_linear(h, g);
    Vector trial(d);
    if (dot(g, step) <= 1e-10) {
      // Full step without line search inside the quadratic-convergence region.
      for (std::size_t j = 0; j < d; ++j) r.x[j] -= step[j];
      r.f = logistic_loss(r.x, data, lambda);
      continue;
    }
    double t = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      for (std::size_t j = 0; j < d; ++j) trial[j] = r.x[j] - t * step[j];
      const double ft = logistic_loss(trial, data, lambda);
      if (ft <= r.f) {
        improved = ft < r.f || t == 1.0;
        r.x = trial;
        r.f = ft;
        break;
      }
    }
    if (!improved) {
      // Rounding floor reached; accept if the gradient is already negligible.
      detail::logistic_grad_into(r.x, data, idx, lambda, g);
      r.grad_norm = norm2(g);
      if (r.grad_norm <= 1e-9) return r;
      throw error("Newton solve stalled with gradient norm " + std::to_string(r.grad_norm));
    }
  }
  detail::logistic_grad_into(r.x, data, idx, lambda, g);
  r.grad_norm = norm2(g);
  if (r.grad_norm <= 1e-9) return r;
  throw error("Newton solve did not converge");
}

/// Mini-batch logistic ERM oracle. Batches are drawn uniformly with
/// replacement; by default the Hessian reuses the gradient's batch.
class LogisticProblem {
 public:
  LogisticProblem(std::shared_ptr<const Dataset> data, double lambda, std::size_t batch_size,
                  bool independent_hessian_batch = false)
      : data_(std::move(data)),
        lambda_(lambda),
        batch_size_(batch_size),
        independent_hessian_batch_(independent_hessian_batch) {
    if (!data_) throw precondition_error("logistic problem: null dataset");
    data_->validate();
    if (batch_size_ == 0) throw precondition_error("batch size must be >= 1");
    if (lambda_ < 0.0) throw precondition_error("lambda must be >= 0");
  }

  std::size_t dim() const noexcept { return data_->d(); }
  const Dataset& data() const noexcept { return *data_; }
  double lambda() const noexcept { return lambda_; }
  std::size_t batch_size() const noexcept { return batch_size_; }
  bool hessians_psd() const noexcept { return true; }

  double loss(std::span<const double> w) const { return logistic_loss(w, *data_, lambda_); }

  Vector full_gradient(std::span<const double> w) const {
    Vector g(dim());
    detail::logistic_grad_into(w, *data_, all_indices(*data_), lambda_, g);
    return g;
  }

  Matrix full_hessian(std::span<const double> w) const {
    Matrix h;
    detail::logistic_hess_into(w, *data_, all_indices(*data_), lambda_, h);
    return h;
  }

  void sample_gradient(std::span<const double> w, RandomStream& rs, SampleContext& ctx,
                       std::span<double> out) const {
    draw_batch(rs, ctx.batch);
    detail::logistic_grad_into(w, *data_, ctx.batch, lambda_, out);
  }

  void sample_hessian(std::span<const double> w, RandomStream& rs, SampleContext& ctx,
                      Matrix& out) const {
    if (independent_hessian_batch_) {
      draw_batch(rs, ctx.hessian_batch);
      detail::logistic_hess_into(w, *data_, ctx.hessian_batch, lambda_, out);
    } else {
      detail::logistic_hess_into(w, *data_, ctx.batch, lambda_, out);
    }
  }

  /// Solves for the minimizer once; later calls are no-ops.
  void compute_optimum() {
    if (optimum_) return;
    NewtonResult r = logistic_newton(*data_, lambda_);
    optimum_ = Optimum{r.x, r.f, full_hessian(r.x)};
  }

  bool has_optimum() const noexcept { return optimum_.has_value(); }

  const Vector& x_star() const {
    if (!optimum_) throw precondition_error("logistic optimum not computed");
    return optimum_->x;
  }
  double f_star() const {
    if (!optimum_) throw precondition_error("logistic optimum not computed");
    return optimum_->f;
  }
  const Matrix* reference_hessian() const noexcept {
    return optimum_ ? &optimum_->hessian : nullptr;
  }

 private:
  struct Optimum {
    Vector x;
    double f;
    Matrix hessian;
  };

  void draw_batch(RandomStream& rs, std::vector<std::size_t>& batch) const {
    batch.resize(batch_size_);
    for (auto& i : batch) i = rs.index(data_->n());
  }

  std::shared_ptr<const Dataset> data_;
  double lambda_;
  std::size_t batch_size_;
  bool independent_hessian_batch_;
  std::optional<Optimum> optimum_;
};

// ---------------------------------------------------------------------------
// Data generation and ingestion

/// Population standardization of every column (mean 0, variance 1).
/// Constant columns become zero.
inline void standardize_columns(Matrix& x) {
  const std::size_t n = x.rows();
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(n);
    const double inv_sd = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
    for (std::size_t i = 0; i < n; ++i) x(i, j) = (x(i, j) - mean) * inv_sd;
  }
}

/// Standard normal features, column-standardized; labels Bernoulli(pi(w_true, i))
/// with w_true uniform on the sphere of radius 2.
inline Dataset generate_classification_data(std::size_t n, std::size_t d, std::uint64_t seed) {
  if (n == 0 || d == 0) throw precondition_error("n and d must be >= 1");
  RandomStream rs(seed);
  Dataset data;
  data.features = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) data.features(i, j) = rs.normal();
  standardize_columns(data.features);

  Vector w_true(d);
  rs.fill_normal(w_true);
  const double scale = 2.0 / norm2(w_true);
  for (double& v : w_true) v *= scale;

  data.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = detail::sigmoid(dot(data.features.row(i), w_true));
    data.labels[i] = rs.uniform() < p ? 1 : 0;
  }
  data.name = "synthetic-n" + std::to_string(n) + "-d" + std::to_string(d) + "-s" +
              std::to_string(seed);
  return data;
}

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Reads the Adult Income census CSV: 14 feature columns and the income
/// class last. Rows containing "?" are dropped, categorical columns get
/// ordinal codes in sorted order of their categories, every feature column
/// is standardized. Label 1 is ">50K" (a trailing "." is accepted).
inline Dataset load_adult_income(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());

  std::vector<std::vector<std::string>> rows;
  std::size_t width = 0;
  std::string line;
  bool first = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv(line);
    if (first) {
      first = false;
      if (!detail::parse_number(fields.front())) continue;  // header row
    }
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw io_error("line " + std::to_string(line_no) + ": expected " +
                     std::to_string(width) + " fields, got " + std::to_string(fields.size()));
    }
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw io_error(path.string() + ": no data rows");
  if (width < 2) throw io_error(path.string() + ": need at least one feature and a label");

  std::erase_if(rows, [](const std::vector<std::string>& r) {
    return std::any_of(r.begin(), r.end(),
                       [](const std::string& f) { return f == "?" || f.empty(); });
  });
  if (rows.empty()) throw io_error(path.string() + ": every row has missing values");

  const std::size_t d = width - 1;
  std::vector<bool> categorical(d, false);
  std::vector<std::map<std::string, double>> codes(d);
  for (std::size_t j = 0; j < d; ++j) {
    for (const auto& r : rows) {
      if (!detail::parse_number(r[j])) {
        categorical[j] = true;
        break;
      }
    }
    if (categorical[j]) {
      std::set<std::string> levels;
      for (const auto& r : rows) levels.insert(r[j]);
      double c = 0.0;
      for (const auto& l : levels) codes[j][l] = c++;
    }
  }

  Dataset data;
  data.features = Matrix(rows.size(), d);
  data.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      data.features(i, j) = categorical[j] ? codes[j].at(rows[i][j])
                                           : *detail::parse_number(rows[i][j]);
    }
    std::string label = rows[i][d];
    if (!label.empty() && label.back() == '.') label.pop_back();
    if (label == ">50K") {
      data.labels[i] = 1;
    } else if (label == "<=50K") {
      data.labels[i] = 0;
    } else {
      throw io_error("unknown income class \"" + rows[i][d] + "\"");
    }
  }
  standardize_columns(data.features);
  data.name = "adult-income";
  data.validate();
  return data;
}

/// Writes `<stem>.features.txt` (matrix text format) and `<stem>.labels.txt`.
inline void write_dataset(const std::filesystem::path& stem, const Dataset& data) {
  std::ofstream f(stem.string() + ".features.txt");
  std::ofstream l(stem.string() + ".labels.txt");
  if (!f || !l) throw io_error("cannot write dataset cache at " + stem.string());
  write_matrix(f, data.features);
  for (int y : data.labels) l << y << '\n';
}

inline Dataset read_dataset(const std::filesystem::path& stem) {
  std::ifstream f(stem.string() + ".features.txt");
  std::ifstream l(stem.string() + ".labels.txt");
  if (!f || !l) throw io_error("cannot read dataset cache at " + stem.string());
  Dataset data;
  data.features = read_matrix(f);
  int y = 0;
  while (l >> y) data.labels.push_back(y);
  data.name = stem.filename().string();
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------
// Growth-condition diagnostic

struct GrowthConstants {
  double L_hat = 0.0;
  double sigma2_hat = 0.0;
};

/// Least-squares fit of the sampled mean of ||g(x)||^2 against 2(F(x) - F*)
/// over the probe points. Slope is L_hat, intercept sigma2_hat.
template <ProblemWithOptimum P>
GrowthConstants estimate_growth_constants(const P& problem,
                                          std::span<const Vector> probe_points,
                                          std::size_t samples_per_point, RandomStream& rs) {
  if (samples_per_point == 0) throw precondition_error("samples_per_point must be >= 1");
  std::vector<double> xs;
  std::vector<double> ys;
  SampleContext ctx;
  Vector g(problem.dim());
  for (const Vector& x : probe_points) {
    double mean_sq = 0.0;
    for (std::size_t s = 0; s < samples_per_point; ++s) {
      problem.sample_gradient(x, rs, ctx, g);
      mean_sq += dot(g, g);
    }
    xs.push_back(2.0 * (problem.loss(x) - problem.f_star()));
    ys.push_back(mean_sq / static_cast<double>(samples_per_point));
  }

  const double x_scale = xs.empty() ? 0.0
                                    : std::abs(*std::max_element(xs.begin(), xs.end(),
                                          [](double a, double b) { return std::abs(a) < std::abs(b); }));
  std::vector<double> levels = xs;
  std::sort(levels.begin(), levels.end());
  std::size_t distinct = levels.empty() ? 0 : 1;
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (levels[i] - levels[i - 1] > 1e-12 * std::max(1.0, x_scale)) ++distinct;
  }
  if (distinct < 2) {
    throw precondition_error("growth-constant fit needs at least 2 distinct F levels");
  }

  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  GrowthConstants out;
  out.L_hat = sxy / sxx;
  out.sigma2_hat = my - out.L_hat * mx;
  return out;
}

/// Probe points x* + t v along the top eigenvector v of `hessian`.
inline std::vector<Vector> growth_probe_points(const Vector& x_star, const Matrix& hessian,
                                               std::span<const double> offsets) {
  const SymEigen e = sym_eigen(hessian);
  const std::size_t d = x_star.size();
  std::vector<Vector> pts;
  for (double t : offsets) {
    Vector p = x_star;
    for (std::size_t i = 0; i < d; ++i) p[i] += t * e.eigenvectors(i, d - 1);
    pts.push_back(std::move(p));
  }
  return pts;
}

}  // namespace condsgd

#endif
