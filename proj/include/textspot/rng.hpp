#pragma once
#include <cstdint>
#include <cmath>

namespace textspot {

// Deterministic PRNG (splitmix64 core). We avoid std:: distributions on
// purpose: their output is implementation-defined, and datasets, parameter
// init, and fuzz tests must reproduce bit-exactly everywhere.
struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ULL) : state(seed) {}

  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Derive an independent stream, e.g. one per image index.
  Rng fork(uint64_t stream) const {
    return Rng(mix(state ^ mix(stream + 0x632be59bd9b4e019ULL)));
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int randint(int n) { return n <= 1 ? 0 : int(next_u64() % uint64_t(n)); }

  // Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool coin(double p = 0.5) { return uniform() < p; }
};

}  // namespace textspot
