#ifndef MPM_DIFFOPS_HPP
#define MPM_DIFFOPS_HPP

#include <Eigen/Dense>

#include "mpm/volume.hpp"

namespace mpm {

enum class RegMode { none, tikhonov, jtv };

RegMode reg_mode_from_string(const std::string& s);
std::string to_string(RegMode m);

/// Regularisation settings: one factor per channel, decay channel last.
struct RegConfig {
  RegMode mode = RegMode::none;
  Eigen::VectorXd lambda;  // size C+1, all >= 0

  static RegConfig none() { return {}; }
  /// Intercept channels share one factor, the decay channel gets its own.
  static RegConfig make(RegMode mode, int contrasts, double lambda_intercept, double lambda_decay) {
    RegConfig cfg;
    cfg.mode = mode;
    cfg.lambda = Eigen::VectorXd::Constant(contrasts + 1, lambda_intercept);
    if (mode == RegMode::none) cfg.lambda.setZero();
    else cfg.lambda[contrasts] = lambda_decay;
    return cfg;
  }
};

/// Floor applied to the closed-form weights: flat regions give w = 0 and an
/// unbounded 1/w curvature otherwise.
constexpr double kWeightFloor = 1e-5;

/// Per-voxel bound weights coupling all channels.
struct WeightMap {
  Grid3 grid;
  Eigen::ArrayXd w;
};

/// All six one-sided differences (+x,-x,+y,-y,+z,-z) at every voxel, each
/// scaled by 1/spacing and 1/sqrt(2) so forward+backward count one lattice
/// edge once. Out-of-bounds differences are 0 (replicate boundary).
Eigen::ArrayXXd grad_apply(const Eigen::ArrayXd& f, const Grid3& grid);

/// Exact discrete adjoint of grad_apply.
Eigen::ArrayXd grad_adjoint(const Eigen::ArrayXXd& g, const Grid3& grid);

/// Per-voxel lambda-weighted squared gradient norm over all channels:
/// q_i = sum_c lambda_c |G_i theta_c|^2.
Eigen::ArrayXd jtv_quadratic(const ParameterMaps& maps, const RegConfig& cfg);

/// Closed-form weight update w_i = max(floor, sqrt(q_i)) and the JTV value
/// sum_i w_i (the bound evaluated at the updated weights).
std::pair<double, WeightMap> jtv_energy_and_weights(const ParameterMaps& maps, const RegConfig& cfg);

/// Accumulates lambda * L x into out, where L is the weighted membrane
/// operator sum_i riw_i G_i^T G_i. Pass riw = nullptr for a uniform
/// inverse weight.
void membrane_accumulate(const Eigen::ArrayXd& x, const Grid3& grid, const Eigen::ArrayXd* riw,
                         double riw_uniform, double lambda, Eigen::ArrayXd& out);

/// Diagonal of the membrane operator L (lambda = 1).
Eigen::ArrayXd membrane_diag(const Grid3& grid, const Eigen::ArrayXd* riw, double riw_uniform);

/// Channelwise lambda_c L theta_c. Weighted form uses riw = 1/w; with
/// weights absent this is the Tikhonov (uniform membrane) prior operator.
Eigen::ArrayXXd membrane_apply(const ParameterMaps& maps, const WeightMap* weights,
                               const RegConfig& cfg);

} // namespace mpm

#endif
