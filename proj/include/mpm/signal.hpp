#ifndef MPM_SIGNAL_HPP
#define MPM_SIGNAL_HPP

#include <Eigen/Dense>

#include "mpm/projection.hpp"
#include "mpm/volume.hpp"

namespace mpm {

/// Steady-state spoiled gradient-echo signal. MT saturation enters as a
/// multiplicative (1 - delta) on the longitudinal magnetisation per TR
/// (simulator convention); delta = 0 for PDw/T1w.
inline double ernst_signal(double m0, double alpha_eff, double tr, double r1, double te,
                           double r2s, double mtsat = 0.0) {
  const double e1 = std::exp(-tr * r1);
  return m0 * std::sin(alpha_eff) * (1.0 - e1) /
         (1.0 - std::cos(alpha_eff) * (1.0 - mtsat) * e1) * (1.0 - mtsat) * std::exp(-te * r2s);
}

/// Predicted echo exp(Psi theta_c - te Psi r) on the series' native grid:
/// both maps are pulled through the projection first, then exponentiated.
/// An identity pose reduces to exp(theta_c - te r) voxelwise.
Eigen::ArrayXd predict_echo(const ParameterMaps& maps, int contrast, double te,
                            const RigidTransform& pose, const Grid3& native_grid);

/// Derived quantitative maps. Voxels where a denominator vanishes are NaN
/// and cleared in `defined`.
struct QuantMaps {
  Grid3 grid;
  Eigen::ArrayXd r1;      // 1/s
  Eigen::ArrayXd a;       // apparent proton density, arbitrary units
  Eigen::ArrayXd mtsat;   // dimensionless saturation (empty if no MTw series)
  Eigen::Array<bool, Eigen::Dynamic, 1> defined;
  bool has_mtsat = false;
};

/// Rational-approximation inversion of the variable-flip-angle pair
/// (plus the optional MT-weighted series) into R1, PD and MTsat maps.
/// Requires exactly one PDw and one T1w series; effective angles are
/// b1 * nominal where a B1 map is present.
QuantMaps compute_quantitative_maps(const ParameterMaps& maps, const Dataset& d);

} // namespace mpm

#endif
