#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dcc {

// Deterministic RNG. mt19937_64 has a standard-fixed bit stream; all
// distributions are derived here by hand so sequences never depend on the
// standard library's (unspecified) distribution implementations.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n) {
    std::uint64_t k =
        static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; stateless per call (two uniforms consumed, no cached spare).
  double normal(double mean, double sd) {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sd * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Derived generator whose seed mixes in `salt`. Used to hand independent
  // streams to sub-tasks without consuming this stream.
  Rng split(std::uint64_t salt) const { return Rng(mix(seed_ ^ salt)); }

  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace dcc
