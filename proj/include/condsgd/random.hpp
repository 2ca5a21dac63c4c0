#ifndef CONDSGD_RANDOM_HPP
#define CONDSGD_RANDOM_HPP

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace condsgd {

/// SplitMix64 finalizer. Fixed so derived seeds agree across platforms.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the i-th independent stream under `master`.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// A random stream: 64-bit Mersenne twister plus a cached standard normal.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }

  void fill_normal(std::span<double> out) {
    for (double& v : out) v = normal_(engine_);
  }

  double uniform() { return uniform_(engine_); }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// The pair of streams one trajectory consumes. Gradient noise and Hessian
/// noise are drawn from separate streams so that runs with and without
/// Hessian sampling see the same gradient noise.
struct TrajectoryStreams {
  explicit TrajectoryStreams(std::uint64_t seed)
      : gradient(splitmix64(seed)), hessian(splitmix64(seed ^ 0x5bd1e9955bd1e995ULL)) {}

  RandomStream gradient;
  RandomStream hessian;
};

}  // namespace condsgd

#endif
