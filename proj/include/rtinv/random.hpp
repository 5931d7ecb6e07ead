#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace rtinv {

/// Named RNG streams. Every random draw in the library comes from
/// `derive_seed(master, stream, index)`, so results do not depend on thread
/// count or evaluation order.
enum class Stream : std::uint64_t {
  dataset = 1,        // index = experiment k: source location, then noise
  sgd_sampling = 2,   // index = 0
  initial_guess = 3,  // index = 0
  ensemble = 4,       // index = trajectory id (+ sweep offset)
  cost_table = 5,     // index = sample size N
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// seed = splitmix64(master ⊕ splitmix64(stream·2⁴⁰ + index)).
inline std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index) noexcept {
  const std::uint64_t tag = (static_cast<std::uint64_t>(stream) << 40) + index;
  return splitmix64(master ^ splitmix64(tag));
}

/// mt19937_64 with portable uniform/normal draws (the std distributions are
/// implementation-defined, which would break bit-exact reruns across toolchains).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform on {0, …, n−1}.
  std::uint64_t index(std::uint64_t n) {
    // Rejection keeps the draw exactly uniform.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box–Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rtinv
