/// @file rng.hpp
/// @brief Deterministic random number utilities.
///
/// All stochastic choices in the library (parameter init, collocation
/// sampling) flow through this header so runs are reproducible from a single
/// seed. Uniform doubles are produced by an explicit bit mapping
/// (x >> 11) * 2^-53 instead of std::uniform_real_distribution, whose output
/// is implementation-defined and would break cross-toolchain determinism.

#pragma once

#include <cstdint>
#include <random>

namespace gnflow {

/// splitmix64 step; used to derive independent sub-seeds from a master seed
/// (e.g. one stream for weights, one per collocation block).
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Thin wrapper over std::mt19937_64 with portable uniform conversions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// Uniform on [0, 1).
  double uniform() {
    return double(gen_() >> 11) * 0x1.0p-53;
  }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace gnflow
