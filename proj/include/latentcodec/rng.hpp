#pragma once

#include <cmath>
#include <random>

// Deterministic scalar samplers over std::mt19937_64. The distributions in
// <random> are not guaranteed to produce identical streams across standard
// library implementations, so anything that feeds coded bytes or trained
// weights goes through these instead.

namespace lc::rng {

// Uniform on [0, 1) using the top 53 bits of the generator.
inline double uniform01(std::mt19937_64& g) {
  return double(g() >> 11) / 9007199254740992.0;  // 2^53
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

// Standard normal via Box-Muller; one draw per call, no cached spare, so
// the stream position is a simple function of the call count.
inline double normal(std::mt19937_64& g) {
  double u1 = uniform01(g);
  double u2 = uniform01(g);
  double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  return r * std::cos(6.283185307179586 * u2);
}

inline double normal(std::mt19937_64& g, double mean, double stddev) {
  return mean + stddev * normal(g);
}

}  // namespace lc::rng
