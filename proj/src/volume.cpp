#include "mpm/volume.hpp"

#include <cmath>
#include <sstream>

namespace mpm {

std::string to_string(Contrast c) {
  switch (c) {
    case Contrast::PDw: return "PDw";
    case Contrast::T1w: return "T1w";
    case Contrast::MTw: return "MTw";
  }
  return "?";
}

Contrast contrast_from_string(const std::string& s) {
  if (s == "PDw" || s == "pdw") return Contrast::PDw;
  if (s == "T1w" || s == "t1w") return Contrast::T1w;
  if (s == "MTw" || s == "mtw") return Contrast::MTw;
  throw DataError("unknown contrast kind '" + s + "' (expected PDw, T1w or MTw)");
}

RigidTransform RigidTransform::from_params(const Eigen::Vector3d& translation_mm,
                                           const Eigen::Vector3d& rotation_rad,
                                           const Eigen::Vector3d& centre) {
  Eigen::Matrix3d skew;
  skew << 0, -rotation_rad.z(), rotation_rad.y(),
      rotation_rad.z(), 0, -rotation_rad.x(),
      -rotation_rad.y(), rotation_rad.x(), 0;
  // Rodrigues form of expm(skew).
  const double angle = rotation_rad.norm();
  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  if (angle > 0) {
    rot += std::sin(angle) / angle * skew +
           (1.0 - std::cos(angle)) / (angle * angle) * (skew * skew);
  }
  RigidTransform t;
  t.m.topLeftCorner<3, 3>() = rot;
  t.m.topRightCorner<3, 1>() = translation_mm + centre - rot * centre;
  return t;
}

RigidTransform RigidTransform::inverse() const {
  const Eigen::Matrix3d rot = m.topLeftCorner<3, 3>();
  const Eigen::Vector3d trans = m.topRightCorner<3, 1>();
  RigidTransform t;
  t.m.topLeftCorner<3, 3>() = rot.transpose();
  t.m.topRightCorner<3, 1>() = -rot.transpose() * trans;
  return t;
}

bool RigidTransform::is_identity(double tol) const {
  return (m - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() <= tol;
}

bool RigidTransform::valid(double tol) const {
  if (!m.allFinite()) return false;
  if (m(3, 0) != 0 || m(3, 1) != 0 || m(3, 2) != 0 || m(3, 3) != 1) return false;
  const Eigen::Matrix3d rot = m.topLeftCorner<3, 3>();
  if ((rot * rot.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rot.determinant() - 1.0) <= tol;
}

namespace {

std::string at_series(std::size_t i) {
  std::ostringstream os;
  os << " @ series " << i;
  return os.str();
}

} // namespace

std::vector<std::string> validate_dataset(const Dataset& d) {
  std::vector<std::string> out;
  if (!d.recon_grid.valid()) out.push_back("recon grid dims must be >= 1 and spacings > 0");
  if (d.series.empty()) out.push_back("dataset must contain at least one contrast series");

  for (std::size_t i = 0; i < d.series.size(); ++i) {
    const ContrastSeries& s = d.series[i];
    if (!s.native_grid.valid()) out.push_back("native grid invalid" + at_series(i));
    if (!(s.sigma > 0.0) || !std::isfinite(s.sigma)) out.push_back("sigma must be > 0" + at_series(i));
    if (!(s.meta.flip_angle > 0.0 && s.meta.flip_angle < M_PI / 2))
      out.push_back("flip angle must be in (0, pi/2)" + at_series(i));
    if (!(s.meta.tr > 0.0)) out.push_back("tr must be > 0" + at_series(i));
    if (s.meta.mt_prepulse != (s.meta.kind == Contrast::MTw))
      out.push_back("mt_prepulse must be set exactly for MTw" + at_series(i));
    if (!s.pose.valid()) out.push_back("pose rotation not orthonormal with det +1" + at_series(i));
    if (s.echoes.empty()) out.push_back("series has no echoes" + at_series(i));
    for (std::size_t e = 0; e < s.echoes.size(); ++e) {
      const EchoVolume& echo = s.echoes[e];
      if (!(echo.te > 0.0))
        out.push_back("echo time must be > 0 @ series " + std::to_string(i) + " echo " + std::to_string(e));
      if (echo.data.size() != s.native_grid.voxels())
        out.push_back("echo data size does not match native grid @ series " + std::to_string(i) +
                      " echo " + std::to_string(e));
      else if (!echo.data.isFinite().all())
        out.push_back("echo data contains non-finite values @ series " + std::to_string(i) +
                      " echo " + std::to_string(e));
      if (e > 0 && !(s.echoes[e].te > s.echoes[e - 1].te)) {
        out.push_back("echo times not strictly increasing" + at_series(i));
        break;
      }
    }
  }

  if (d.b1_map) {
    if (d.b1_map->size() != d.recon_grid.voxels())
      out.push_back("b1 map size does not match recon grid");
    else if (!((*d.b1_map) > 0.0).all() || !d.b1_map->isFinite().all())
      out.push_back("b1 map values must be finite and > 0");
  }
  for (const auto& [name, mask] : d.masks) {
    if (mask.size() != d.recon_grid.voxels())
      out.push_back("mask '" + name + "' size does not match recon grid");
  }
  return out;
}

} // namespace mpm
