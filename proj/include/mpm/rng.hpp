#ifndef MPM_RNG_HPP
#define MPM_RNG_HPP

#include <cmath>
#include <cstdint>

namespace mpm {

/// Counter-based generator: every draw is a pure function of (seed, stream,
/// counter), so parallel fills are bit-identical regardless of scheduling.
namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  std::uint64_t h = splitmix64(seed ^ 0x5851f42d4c957f2dULL);
  h = splitmix64(h ^ stream);
  return splitmix64(h ^ counter);
}

/// Uniform in the open interval (0, 1).
inline double uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return (static_cast<double>(hash(seed, stream, counter) >> 11) + 0.5) * 0x1.0p-53;
}

/// One standard normal pair via Box-Muller.
inline void normal_pair(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter,
                        double& n1, double& n2) {
  const double u1 = uniform(seed, stream, 2 * counter);
  const double u2 = uniform(seed, stream, 2 * counter + 1);
  const double rad = std::sqrt(-2.0 * std::log(u1));
  const double ang = 2.0 * M_PI * u2;
  n1 = rad * std::cos(ang);
  n2 = rad * std::sin(ang);
}

inline double normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  double n1, n2;
  normal_pair(seed, stream, counter, n1, n2);
  return n1;
}

} // namespace rng
} // namespace mpm

#endif
