#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "volt/common.hpp"

namespace volt {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Deterministic random source. The engine sequence is pinned by the standard
/// (std::mt19937_64); the distribution transforms are implemented here rather
/// than with std:: distributions, whose algorithms vary across library
/// implementations. Same seed, same platform-independent stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    if (n <= 0) throw NumericError("uniform_int: n must be positive");
    return static_cast<int>(uniform() * n) % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Independent stream derived from this generator's seed (not its current
  /// position), so per-sample streams are stable regardless of consumption
  /// order.
  Rng fork(std::uint64_t stream) const {
    return Rng(detail::splitmix64(seed_ ^ detail::splitmix64(stream)));
  }

  /// Engine + transform state, round-trippable byte-for-byte.
  std::string state() const {
    std::ostringstream os;
    os << seed_ << ' ' << engine_ << ' ' << (has_spare_ ? 1 : 0);
    if (has_spare_) {
      os << ' ';
      os.precision(17);
      os << spare_;
    }
    return os.str();
  }

  void restore(const std::string& s) {
    std::istringstream is(s);
    int spare_flag = 0;
    is >> seed_ >> engine_ >> spare_flag;
    has_spare_ = spare_flag != 0;
    if (has_spare_) is >> spare_;
    if (!is) throw FormatError("Rng::restore: malformed state string");
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace volt
