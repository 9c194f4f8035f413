#ifndef MPM_PHANTOM_HPP
#define MPM_PHANTOM_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "mpm/volume.hpp"

namespace mpm {

/// One line of an acquisition protocol: series metadata plus its echo times.
struct ProtocolSeries {
  ContrastMeta meta;
  std::vector<double> te;  // seconds, strictly increasing
};

/// The default MPM protocol: PDw 6deg / T1w 21deg / MTw 6deg, TR 25 ms,
/// echoes at multiples of 2.3 ms (8/8/6 per series).
std::vector<ProtocolSeries> default_protocol();

/// Ground-truth quantitative fields plus a label partition of the grid:
/// background, gm, wm, csf and vessels.
struct PhantomTruth {
  Grid3 grid;
  Eigen::ArrayXd m0, r1, r2s, mtsat;
  Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> labels;
  std::map<std::string, Eigen::Array<bool, Eigen::Dynamic, 1>> masks;

  /// Log-intercepts and decay implied by the truth fields under a protocol
  /// (background voxels carry placeholder zeros).
  ParameterMaps parameter_maps(const std::vector<ProtocolSeries>& protocol,
                               const std::optional<Eigen::ArrayXd>& b1 = std::nullopt) const;
};

/// Piecewise-smooth nested-ellipsoid phantom with three tissue classes,
/// +-10% smooth within-class modulation and a few thin high-decay tubes.
PhantomTruth make_phantom_maps(const Grid3& grid, std::uint64_t seed);

/// Forward-simulates a dataset: per-TE signal fields pulled into each
/// series' native space, then Rician-corrupted (sigma 0 = noise-free).
Dataset simulate_dataset(const PhantomTruth& truth, const std::vector<ProtocolSeries>& protocol,
                         const std::vector<double>& sigma, const std::vector<RigidTransform>& poses,
                         const std::optional<Eigen::ArrayXd>& b1, std::uint64_t seed);

/// Small seeded rigid poses (identity for series 0), rotations about the
/// volume centre.
std::vector<RigidTransform> random_motion(const Grid3& grid, std::size_t count, std::uint64_t seed,
                                          double max_translation_mm = 1.5,
                                          double max_rotation_deg = 2.0);

} // namespace mpm

#endif
