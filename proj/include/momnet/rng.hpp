// Seeded random helpers. Distribution sampling is written out explicitly so
// streams are identical across standard libraries; everything downstream that
// claims byte-identical reruns depends on that.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace momnet {

using Rng = std::mt19937_64;

// Uniform in [0, 1) using the top 53 bits of the generator output.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Standard normal via Box-Muller (one value per call; the pair's second
// member is discarded to keep the stream position simple).
inline double normal01(Rng& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace momnet
