#ifndef MPM_VOLUME_HPP
#define MPM_VOLUME_HPP

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpm/errors.hpp"

namespace mpm {

/// 3D voxel lattice. Fields over a grid are stored flattened with x fastest:
/// index = x + nx*(y + ny*z). Spacing is in mm/voxel.
struct Grid3 {
  Eigen::Array3i dims{0, 0, 0};
  Eigen::Array3d spacing{1.0, 1.0, 1.0};

  Grid3() = default;
  Grid3(int nx, int ny, int nz, double sx = 1.0, double sy = 1.0, double sz = 1.0)
      : dims(nx, ny, nz), spacing(sx, sy, sz) {}

  std::ptrdiff_t voxels() const {
    return static_cast<std::ptrdiff_t>(dims[0]) * dims[1] * dims[2];
  }
  std::ptrdiff_t index(int x, int y, int z) const {
    return x + static_cast<std::ptrdiff_t>(dims[0]) * (y + static_cast<std::ptrdiff_t>(dims[1]) * z);
  }
  bool valid() const {
    return (dims > 0).all() && (spacing > 0.0).all() && spacing.isFinite().all();
  }
  bool operator==(const Grid3& o) const {
    return (dims == o.dims).all() && (spacing == o.spacing).all();
  }
  bool operator!=(const Grid3& o) const { return !(*this == o); }
};

/// Scalar field over a grid.
struct Volume {
  Grid3 grid;
  Eigen::ArrayXd data;

  Volume() = default;
  Volume(const Grid3& g, double fill = 0.0) : grid(g), data(Eigen::ArrayXd::Constant(g.voxels(), fill)) {}
  Volume(const Grid3& g, Eigen::ArrayXd values) : grid(g), data(std::move(values)) {}
};

/// One magnitude image at a known echo time (seconds).
struct EchoVolume {
  double te = 0.0;
  Eigen::ArrayXd data;
};

enum class Contrast { PDw, T1w, MTw };

std::string to_string(Contrast c);
Contrast contrast_from_string(const std::string& s);

/// Acquisition metadata for one weighted series. Angles in radians, times in
/// seconds; sidecar files may carry degrees/ms and are converted at load.
struct ContrastMeta {
  Contrast kind = Contrast::PDw;
  double flip_angle = 0.0;
  double tr = 0.0;
  bool mt_prepulse = false;
};

/// Rigid pose of a series: maps reconstruction-grid world coordinates (mm)
/// to the series' native-grid world coordinates. Identity by default.
struct RigidTransform {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();

  static RigidTransform identity() { return {}; }
  /// Build from 3 translations (mm) and 3 rotation parameters (radians) via
  /// the matrix exponential of the skew matrix, rotating about `centre` (mm).
  static RigidTransform from_params(const Eigen::Vector3d& translation_mm,
                                    const Eigen::Vector3d& rotation_rad,
                                    const Eigen::Vector3d& centre = Eigen::Vector3d::Zero());
  RigidTransform inverse() const;
  bool is_identity(double tol = 0.0) const;
  /// Rotation block orthonormal within tol and det = +1.
  bool valid(double tol = 1e-10) const;
};

struct ContrastSeries {
  ContrastMeta meta;
  std::vector<EchoVolume> echoes;
  double sigma = 0.0;               // noise S.D. of this series
  RigidTransform pose;              // recon world -> native world
  Grid3 native_grid;
};

struct Dataset {
  Grid3 recon_grid;
  std::vector<ContrastSeries> series;
  std::optional<Eigen::ArrayXd> b1_map;                 // on recon_grid, dimensionless
  std::map<std::string, Eigen::Array<bool, Eigen::Dynamic, 1>> masks;  // on recon_grid

  int contrasts() const { return static_cast<int>(series.size()); }
};

/// Fitted maps: columns 0..C-1 are the log-intercepts theta_c, column C is
/// the shared decay r (R2*, 1/s).
struct ParameterMaps {
  Grid3 grid;
  Eigen::ArrayXXd values;  // voxels x (C+1)

  ParameterMaps() = default;
  ParameterMaps(const Grid3& g, int contrasts)
      : grid(g), values(Eigen::ArrayXXd::Zero(g.voxels(), contrasts + 1)) {}

  int channels() const { return static_cast<int>(values.cols()); }
  int contrasts() const { return channels() - 1; }
  auto theta(int c) { return values.col(c); }
  auto theta(int c) const { return values.col(c); }
  auto decay() { return values.col(values.cols() - 1); }
  auto decay() const { return values.col(values.cols() - 1); }
};

/// Checks every documented invariant and reports violations with their
/// location. Pure; an empty result means the dataset is fit-ready.
std::vector<std::string> validate_dataset(const Dataset& d);

} // namespace mpm

#endif
