#ifndef MPM_NIFTI_HPP
#define MPM_NIFTI_HPP

#include <Eigen/Dense>
#include <string>

#include "mpm/volume.hpp"

namespace mpm {

/// Volume read from a NIfTI-1 file; the 4th dimension, when present, holds
/// channels (one column each).
struct NiftiVolume {
  Grid3 grid;
  Eigen::ArrayXXd data;  // voxels x channels

  Eigen::ArrayXd scalar() const {
    if (data.cols() != 1) throw DataError("expected a single-channel volume");
    return data.col(0);
  }
};

/// Single-file little-endian NIfTI-1 subset: magic "n+1", dtypes
/// uint8/int16/float32/float64, up to 4 dims. Anything else is rejected
/// with a precise message.
NiftiVolume read_volume(const std::string& path);

/// Always emits float32, 352-byte header (vox_offset 352), sform from the
/// grid spacing.
void write_volume(const std::string& path, const Eigen::ArrayXXd& data, const Grid3& grid);
void write_volume(const std::string& path, const Eigen::ArrayXd& data, const Grid3& grid);

} // namespace mpm

#endif
