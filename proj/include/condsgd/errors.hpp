#ifndef CONDSGD_ERRORS_HPP
#define CONDSGD_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace condsgd {

/// Base class of every exception thrown by the library.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class dimension_error : public error {
 public:
  using error::error;
};

class symmetry_error : public error {
 public:
  using error::error;
};

/// A factorization that needs positive definiteness met a non-positive pivot.
class definiteness_error : public error {
 public:
  definiteness_error(const std::string& what, double pivot)
      : error(what + " (pivot " + std::to_string(pivot) + ")"), pivot_(pivot) {}
  double pivot() const noexcept { return pivot_; }

 private:
  double pivot_;
};

class singular_error : public error {
 public:
  singular_error(const std::string& what, double pivot)
      : error(what + " (pivot magnitude " + std::to_string(pivot) + ")"),
        pivot_(pivot) {}
  double pivot() const noexcept { return pivot_; }

 private:
  double pivot_;
};

/// Lyapunov operator whose symmetric part is not positive definite.
class instability_error : public error {
 public:
  instability_error(const std::string& what, double eigenvalue)
      : error(what + " (eigenvalue " + std::to_string(eigenvalue) + ")"),
        eigenvalue_(eigenvalue) {}
  double eigenvalue() const noexcept { return eigenvalue_; }

 private:
  double eigenvalue_;
};

/// Iterate became non-finite or exceeded the divergence bound.
class divergence_error : public error {
 public:
  divergence_error(const std::string& what, std::size_t step)
      : error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class precondition_error : public error {
 public:
  using error::error;
};

class io_error : public error {
 public:
  using error::error;
};

/// Invalid experiment configuration. `key()` names the offending entry.
class config_error : public error {
 public:
  config_error(std::string key, const std::string& constraint)
      : error(key + ": " + constraint), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace condsgd

#endif
