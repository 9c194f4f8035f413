#ifndef MPM_LOGLINEAR_HPP
#define MPM_LOGLINEAR_HPP

#include <Eigen/Dense>

#include "mpm/volume.hpp"

namespace mpm {

struct LoglinearConfig {
  bool weighted = false;     // u = s^2 delta-method weights instead of u = 1
  double r_max = 2000.0;     // decay clamp, 1/s
  double floor_scale = 1e-6; // intensity floor = floor_scale * per-series mean
};

struct LoglinearResult {
  ParameterMaps maps;
  /// 1 where the voxel had < 2 usable echoes, a series with no usable echo,
  /// or a singular decay system; such voxels carry fallback values.
  Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> flagged;
};

/// Per-voxel least squares on log-transformed echoes across all contrasts
/// with one shared decay. The (C+1)x(C+1) normal equations have arrow
/// structure and are solved in closed form. Misaligned series are pulled
/// onto the recon grid once before the log transform.
LoglinearResult fit_loglinear(const Dataset& d, bool weighted = false,
                              const LoglinearConfig& config = {});

} // namespace mpm

#endif
