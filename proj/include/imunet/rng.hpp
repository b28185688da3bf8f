#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "imunet/errors.hpp"

namespace imunet {

inline constexpr double kPi = 3.14159265358979323846;

// splitmix64-style mixer used to derive independent seeds for different
// consumers (noise channels, weight init, shuffling, ...) from one user seed,
// so no two purposes ever share a stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic random source. mt19937_64 output is pinned by the standard;
// the distributions are hand-rolled because the std:: ones are
// implementation-defined and would break byte-identical reruns.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; one draw per call keeps replay trivial.
  double gaussian() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  // Uniform integer in [0, n); modulo rejection keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ContractError("Rng::below: n must be positive");
    std::uint64_t reject_under = (0 - n) % n;  // == 2^64 mod n
    std::uint64_t v = engine_();
    while (v < reject_under) v = engine_();
    return v % n;
  }

 private:
  std::mt19937_64 engine_;
};

// Fisher-Yates shuffle driven by Rng::below (std::shuffle is not portable
// across standard-library implementations).
template <typename T>
void shuffle(std::vector<T>& values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::swap(values[i - 1], values[static_cast<std::size_t>(rng.below(i))]);
  }
}

}  // namespace imunet
