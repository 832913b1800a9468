#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>

namespace cmclab {

// Hand-rolled generator and distributions: std:: distribution algorithms are
// implementation-defined, and reruns must be byte-identical across toolchains.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Derives an independent substream seed from (base, stream, purpose).
/// Paths are reproducible in isolation: path i's streams depend only on
/// the base seed, i, and the purpose tag, never on other paths.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream,
                              std::uint64_t purpose) {
  std::uint64_t s = base;
  s ^= splitmix64(stream) + 0x9e3779b97f4a7c15ull;
  std::uint64_t t = s + (purpose << 1 | 1);
  return splitmix64(t);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1); never returns an exact endpoint.
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Exponential holding time; strictly positive.
  double exponential(double rate) {
    if (!(rate > 0.0)) throw std::invalid_argument("exponential: rate <= 0");
    return -std::log(uniform_open()) / rate;
  }

  /// Box-Muller, cosine branch only (one normal per two uniforms, no state).
  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Index i with probability w[i] / sum(w). Weights must be >= 0, sum > 0.
  std::size_t categorical(std::span<const double> w) {
    double total = 0.0;
    for (double v : w) total += v;
    if (!(total > 0.0)) throw std::invalid_argument("categorical: zero mass");
    double u = uniform() * total;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
      u -= w[i];
      if (u < 0.0) return i;
    }
    return w.size() - 1;
  }

 private:
  std::uint64_t state_;
};

}  // namespace cmclab
