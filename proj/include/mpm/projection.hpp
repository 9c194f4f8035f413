#ifndef MPM_PROJECTION_HPP
#define MPM_PROJECTION_HPP

#include <Eigen/Dense>

#include "mpm/volume.hpp"

namespace mpm {

/// 3x4 affine taking output-grid voxel coordinates to input-grid voxel
/// coordinates: in_vox = A * (out_vox, 1). Composed from both grids'
/// voxel-to-world scalings and the world-space map between them.
using VoxelAffine = Eigen::Matrix<double, 3, 4>;

/// Voxel map used when sampling a recon-grid field at native voxel centres.
VoxelAffine pull_voxel_map(const Grid3& recon, const RigidTransform& pose, const Grid3& native);
/// Voxel map used when resampling a native-grid image onto the recon grid.
VoxelAffine resample_voxel_map(const Grid3& native, const RigidTransform& pose, const Grid3& recon);

bool is_identity_map(const VoxelAffine& a, const Grid3& in, const Grid3& out);

/// Trilinear sampling of `f` (on `in_grid`) at transformed out-grid voxel
/// centres. Out-of-field samples use replicate (Neumann) extension.
Eigen::ArrayXd pull_affine(const Eigen::ArrayXd& f, const Grid3& in_grid,
                           const VoxelAffine& map, const Grid3& out_grid);

/// Exact discrete adjoint of pull_affine: <pull(f), g> == <f, push(g)>.
Eigen::ArrayXd push_affine(const Eigen::ArrayXd& g, const Grid3& out_grid,
                           const VoxelAffine& map, const Grid3& in_grid);

/// Projection of a recon-grid field into a series' native space.
Eigen::ArrayXd pull(const Eigen::ArrayXd& f, const Grid3& recon, const RigidTransform& pose,
                    const Grid3& native);

/// Adjoint of pull: accumulates a native-space field back onto the recon grid.
Eigen::ArrayXd push(const Eigen::ArrayXd& g, const Grid3& native, const RigidTransform& pose,
                    const Grid3& recon);

/// Nearest-equivalent transfer of a boolean mask (trilinear then > 0.5).
Eigen::Array<bool, Eigen::Dynamic, 1> pull_mask(const Eigen::Array<bool, Eigen::Dynamic, 1>& mask,
                                                const Grid3& recon, const RigidTransform& pose,
                                                const Grid3& native);

} // namespace mpm

#endif
