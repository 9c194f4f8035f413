#ifndef MPM_MAP_FIT_HPP
#define MPM_MAP_FIT_HPP

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "mpm/diffops.hpp"
#include "mpm/solver.hpp"
#include "mpm/volume.hpp"

namespace mpm {

struct FitConfig {
  RegConfig reg;
  int max_outer = 30;
  int max_newton_per_outer = 1;
  double objective_tol = 1e-6;   // relative decrease per outer iteration
  SolverConfig solver;
  double r_max = 2000.0;
  int max_halvings = 10;
  double gradient_tol = 1e-10;   // stationarity shortcut, relative to 1+|objective|
};

struct ObjectiveParts {
  double total = 0.0;
  double data = 0.0;
  double prior_quad = 0.0;    // quadratic part 1/2 sum_c lambda_c theta^T L theta
  double prior_weight = 0.0;  // 1/2 sum_i w_i (JTV bound only)
};

struct FitReport {
  std::vector<double> objective;   // bound objective per outer iteration (+ final)
  std::vector<double> data_term;
  std::vector<double> prior_term;
  std::vector<int> cg_iterations;
  std::string status;              // stationary | converged | max_outer | stalled
  int outer_iterations = 0;
  double wall_seconds = 0.0;
};

/// Negative log-likelihood pieces at the given maps. Weights are required in
/// JTV mode and ignored otherwise; total = data + prior_quad + prior_weight.
ObjectiveParts objective(const ParameterMaps& maps, const Dataset& d, const WeightMap* weights,
                         const FitConfig& cfg);

/// Data-term gradient plus prior gradient, and the Fisher-scoring data
/// Hessian as per-voxel arrow blocks (see NewtonSystem for the layout).
std::pair<Eigen::ArrayXXd, Eigen::ArrayXXd> grad_and_fisher(const ParameterMaps& maps,
                                                            const Dataset& d,
                                                            const WeightMap* weights,
                                                            const FitConfig& cfg);

/// Nonlinear MAP fit: alternates closed-form JTV weight updates with Fisher
/// -scoring Newton steps (V-cycle warm start + CG), guarded by a halving line
/// search that accepts only objective decrease. Tikhonov mode keeps uniform
/// weights; none mode is plain maximum likelihood.
std::pair<ParameterMaps, FitReport> fit_map(const Dataset& d, const FitConfig& cfg,
                                            const std::optional<ParameterMaps>& init = std::nullopt);

} // namespace mpm

#endif
