#ifndef MPM_SOLVER_HPP
#define MPM_SOLVER_HPP

#include <Eigen/Dense>

#include "mpm/diffops.hpp"
#include "mpm/volume.hpp"

namespace mpm {

struct SolverConfig {
  double cg_tol = 1e-4;     // relative residual
  int cg_max_iter = 100;
  int vcycles = 2;
  int pre_sweeps = 2;
  int post_sweeps = 2;
  int coarsest_dim = 4;     // stop coarsening once any dim <= this
  int max_levels = 6;
};

/// Newton system H = H_d + L (x) diag(lambda). The data Hessian is stored as
/// per-voxel symmetric arrow blocks, columns [A_11..A_CC | A_1r..A_Cr | A_rr].
/// riw = nullptr means a uniform inverse weight (Tikhonov / substitute).
struct NewtonSystem {
  Grid3 grid;
  Eigen::ArrayXXd hess;            // voxels x (2C+1)
  Eigen::VectorXd lambda;          // C+1
  const Eigen::ArrayXd* riw = nullptr;
  double riw_uniform = 1.0;

  int contrasts() const { return (static_cast<int>(hess.cols()) - 1) / 2; }
  int channels() const { return contrasts() + 1; }

  /// H x, matrix-free.
  Eigen::ArrayXXd apply(const Eigen::ArrayXXd& x) const;
};

struct SolveReport {
  double vcycle_residual = 0.0;  // relative, after the warm-start cycles
  int cg_iterations = 0;
  double cg_residual = 0.0;      // relative, final
};

/// Plain conjugate gradients from x0; stops at ||Hx-g||/||g|| < cg_tol.
Eigen::ArrayXXd cg_solve(const NewtonSystem& sys, const Eigen::ArrayXXd& g,
                         const Eigen::ArrayXXd& x0, const SolverConfig& cfg,
                         int* iterations = nullptr, double* final_residual = nullptr);

/// Approximate solve of the substitute system (H_d + L~ (x) diag(lambda)),
/// L~ = (1/min w) sum_i G_i^T G_i, by full-weighting/trilinear V-cycles with
/// a red-black block Gauss-Seidel smoother and a dense coarsest solve.
Eigen::ArrayXXd vcycle_substitute(const NewtonSystem& sys, const Eigen::ArrayXXd& g,
                                  const SolverConfig& cfg, double* final_residual = nullptr);

/// V-cycle warm start on the substitute system followed by CG on the true
/// system.
std::pair<Eigen::ArrayXXd, SolveReport> solve_newton_system(const NewtonSystem& sys,
                                                            const Eigen::ArrayXXd& g,
                                                            const SolverConfig& cfg);

/// Transfer operators (exposed for the adjointness property tests):
/// prolongation is trilinear, restriction is its transpose scaled by 1/8.
Grid3 mg_coarsen(const Grid3& fine);
Eigen::ArrayXd mg_prolong(const Eigen::ArrayXd& coarse_field, const Grid3& coarse, const Grid3& fine);
Eigen::ArrayXd mg_restrict(const Eigen::ArrayXd& fine_field, const Grid3& fine, const Grid3& coarse);

} // namespace mpm

#endif
