#include "mpm/projection.hpp"

#include <cmath>

namespace mpm {

namespace {

Eigen::Matrix4d vox_to_world(const Grid3& g) {
  Eigen::Matrix4d s = Eigen::Matrix4d::Identity();
  s(0, 0) = g.spacing[0];
  s(1, 1) = g.spacing[1];
  s(2, 2) = g.spacing[2];
  return s;
}

Eigen::Matrix4d world_to_vox(const Grid3& g) {
  Eigen::Matrix4d s = Eigen::Matrix4d::Identity();
  s(0, 0) = 1.0 / g.spacing[0];
  s(1, 1) = 1.0 / g.spacing[1];
  s(2, 2) = 1.0 / g.spacing[2];
  return s;
}

VoxelAffine compose(const Grid3& in_grid, const Eigen::Matrix4d& out_world_to_in_world,
                    const Grid3& out_grid) {
  const Eigen::Matrix4d full = world_to_vox(in_grid) * out_world_to_in_world * vox_to_world(out_grid);
  return full.topRows<3>();
}

struct Corner {
  std::ptrdiff_t base;
  int x0, y0, z0, x1, y1, z1;
  double fx, fy, fz;
};

inline void locate(const Grid3& g, double x, double y, double z, Corner& c) {
  const double fx0 = std::floor(x), fy0 = std::floor(y), fz0 = std::floor(z);
  c.fx = x - fx0;
  c.fy = y - fy0;
  c.fz = z - fz0;
  auto clampi = [](double v, int n) {
    return v < 0 ? 0 : (v > n - 1 ? n - 1 : static_cast<int>(v));
  };
  c.x0 = clampi(fx0, g.dims[0]);
  c.y0 = clampi(fy0, g.dims[1]);
  c.z0 = clampi(fz0, g.dims[2]);
  c.x1 = clampi(fx0 + 1, g.dims[0]);
  c.y1 = clampi(fy0 + 1, g.dims[1]);
  c.z1 = clampi(fz0 + 1, g.dims[2]);
}

} // namespace

VoxelAffine pull_voxel_map(const Grid3& recon, const RigidTransform& pose, const Grid3& native) {
  return compose(recon, pose.inverse().m, native);
}

VoxelAffine resample_voxel_map(const Grid3& native, const RigidTransform& pose, const Grid3& recon) {
  return compose(native, pose.m, recon);
}

bool is_identity_map(const VoxelAffine& a, const Grid3& in, const Grid3& out) {
  if ((in.dims != out.dims).any()) return false;
  VoxelAffine id = VoxelAffine::Zero();
  id(0, 0) = id(1, 1) = id(2, 2) = 1.0;
  return (a - id).cwiseAbs().maxCoeff() <= 1e-12;
}

Eigen::ArrayXd pull_affine(const Eigen::ArrayXd& f, const Grid3& in_grid,
                           const VoxelAffine& map, const Grid3& out_grid) {
  if (is_identity_map(map, in_grid, out_grid)) return f;
  Eigen::ArrayXd out(out_grid.voxels());
  const int nx = out_grid.dims[0], ny = out_grid.dims[1], nz = out_grid.dims[2];
#pragma omp parallel for collapse(2) schedule(static)
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      std::ptrdiff_t o = out_grid.index(0, y, z);
      for (int x = 0; x < nx; ++x, ++o) {
        const Eigen::Vector4d v(x, y, z, 1.0);
        const Eigen::Vector3d p = map * v;
        Corner c;
        locate(in_grid, p.x(), p.y(), p.z(), c);
        const double gx = 1.0 - c.fx, gy = 1.0 - c.fy, gz = 1.0 - c.fz;
        const double v00 = gx * f[in_grid.index(c.x0, c.y0, c.z0)] + c.fx * f[in_grid.index(c.x1, c.y0, c.z0)];
        const double v10 = gx * f[in_grid.index(c.x0, c.y1, c.z0)] + c.fx * f[in_grid.index(c.x1, c.y1, c.z0)];
        const double v01 = gx * f[in_grid.index(c.x0, c.y0, c.z1)] + c.fx * f[in_grid.index(c.x1, c.y0, c.z1)];
        const double v11 = gx * f[in_grid.index(c.x0, c.y1, c.z1)] + c.fx * f[in_grid.index(c.x1, c.y1, c.z1)];
        out[o] = gz * (gy * v00 + c.fy * v10) + c.fz * (gy * v01 + c.fy * v11);
      }
    }
  }
  return out;
}

Eigen::ArrayXd push_affine(const Eigen::ArrayXd& g, const Grid3& out_grid,
                           const VoxelAffine& map, const Grid3& in_grid) {
  if (is_identity_map(map, in_grid, out_grid)) return g;
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(in_grid.voxels());
  const int nx = out_grid.dims[0], ny = out_grid.dims[1], nz = out_grid.dims[2];
  // Serial scatter: exact adjoint and bit-stable regardless of thread count.
  std::ptrdiff_t o = 0;
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x, ++o) {
        const double gv = g[o];
        if (gv == 0.0) continue;
        const Eigen::Vector4d v(x, y, z, 1.0);
        const Eigen::Vector3d p = map * v;
        Corner c;
        locate(in_grid, p.x(), p.y(), p.z(), c);
        const double gx = 1.0 - c.fx, gy = 1.0 - c.fy, gz = 1.0 - c.fz;
        acc[in_grid.index(c.x0, c.y0, c.z0)] += gv * gx * gy * gz;
        acc[in_grid.index(c.x1, c.y0, c.z0)] += gv * c.fx * gy * gz;
        acc[in_grid.index(c.x0, c.y1, c.z0)] += gv * gx * c.fy * gz;
        acc[in_grid.index(c.x1, c.y1, c.z0)] += gv * c.fx * c.fy * gz;
        acc[in_grid.index(c.x0, c.y0, c.z1)] += gv * gx * gy * c.fz;
        acc[in_grid.index(c.x1, c.y0, c.z1)] += gv * c.fx * gy * c.fz;
        acc[in_grid.index(c.x0, c.y1, c.z1)] += gv * gx * c.fy * c.fz;
        acc[in_grid.index(c.x1, c.y1, c.z1)] += gv * c.fx * c.fy * c.fz;
      }
    }
  }
  return acc;
}

Eigen::ArrayXd pull(const Eigen::ArrayXd& f, const Grid3& recon, const RigidTransform& pose,
                    const Grid3& native) {
  return pull_affine(f, recon, pull_voxel_map(recon, pose, native), native);
}

Eigen::ArrayXd push(const Eigen::ArrayXd& g, const Grid3& native, const RigidTransform& pose,
                    const Grid3& recon) {
  return push_affine(g, native, pull_voxel_map(recon, pose, native), recon);
}

Eigen::Array<bool, Eigen::Dynamic, 1> pull_mask(const Eigen::Array<bool, Eigen::Dynamic, 1>& mask,
                                                const Grid3& recon, const RigidTransform& pose,
                                                const Grid3& native) {
  Eigen::ArrayXd m = mask.cast<double>();
  Eigen::ArrayXd pulled = pull(m, recon, pose, native);
  return pulled > 0.5;
}

} // namespace mpm
