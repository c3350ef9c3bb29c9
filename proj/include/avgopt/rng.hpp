#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>

namespace avgopt {

/// xoshiro256++ with splitmix64 seeding. A self-contained generator keeps
/// run records reproducible across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) {
      // splitmix64
      x += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      word = z ^ (z >> 31);
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Index sampled from an (approximately normalized) probability vector.
  int categorical(std::span<const double> probs) {
    if (probs.empty()) throw std::invalid_argument("categorical: empty distribution");
    double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

}  // namespace avgopt
