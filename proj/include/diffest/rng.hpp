#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "diffest/common.hpp"

namespace diffest {

// SplitMix64. Bit-stable everywhere, unlike <random> distributions.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_.next(); }

  // Uniform in [0,1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller. Two uniforms per draw, no cached state.
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1], keeps log finite
    double u2 = uniform();
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0,n). Multiply-shift bound, bias is negligible here.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  SplitMix64 eng_;
};

// Independent child streams for named components and indexed workers.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
  SplitMix64 m(root ^ fnv1a64(tag));
  return m.next();
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  SplitMix64 m(root + 0x9E3779B97F4A7C15ULL * (index + 1));
  return m.next();
}

}  // namespace diffest
