#pragma once

// Seeded random streams. All draws are derived from mt19937_64 output with
// explicit bit manipulation instead of std distributions, so two runs with
// the same seed produce identical bytes on any platform.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace drce {

namespace detail {

// splitmix64 finalizer; used to mix substream labels into a master seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Derives an independent substream seed from a master seed and up to three
/// labels (e.g. unit id, stage, replica).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a = 0,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = detail::mix64(master ^ 0x5851f42d4c957f2dull);
  s = detail::mix64(s ^ detail::mix64(a + 1));
  s = detail::mix64(s ^ detail::mix64(b + 2));
  s = detail::mix64(s ^ detail::mix64(c + 3));
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  /// Uniform double in [0, 1), 53 random bits.
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  /// Exponential with the given rate; uses -log1p(-u) so u == 0 is safe.
  double exponential(double rate) {
    if (!(rate > 0.0)) throw std::invalid_argument("exponential: rate <= 0");
    return -std::log1p(-uniform01()) / rate;
  }

  /// Standard normal via Box-Muller (consumes two uniforms per draw).
  double normal() {
    double u1 = uniform01();
    while (u1 == 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Uniform index in {0, ..., n-1}.
  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("index: n == 0");
    auto k = static_cast<std::size_t>(uniform01() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  /// Inverse-CDF draw from a weight vector (weights need not be normalized
  /// exactly; the last bucket absorbs rounding residue).
  std::size_t categorical(std::span<const double> weights) {
    if (weights.empty()) throw std::invalid_argument("categorical: empty");
    double total = 0.0;
    for (double w : weights) total += w;
    const double xi = uniform01() * total;
    double cum = 0.0;
    for (std::size_t j = 0; j + 1 < weights.size(); ++j) {
      cum += weights[j];
      if (xi < cum) return j;
    }
    return weights.size() - 1;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace drce
