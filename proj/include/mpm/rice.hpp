#ifndef MPM_RICE_HPP
#define MPM_RICE_HPP

#include <Eigen/Dense>
#include <cstdint>

#include "mpm/volume.hpp"

namespace mpm {

/// ln I0(z), numerically stable for all z >= 0: power series below the
/// crossover, scaled asymptotic expansion above it. The two branches agree
/// to ~1e-13 at the switch point.
double log_bessel_i0(double z);
constexpr double kLogI0Crossover = 100.0;

/// Rice log-density ln p(x | nu, sigma). Exact -inf at x = 0.
double rice_logpdf(double x, double nu, double sigma);

/// Magnitude of (nu + n1) + i n2 with n1, n2 ~ N(0, sigma^2), drawn from the
/// counter-based generator: same seed gives a bit-identical field.
Eigen::ArrayXd rice_sample(const Eigen::ArrayXd& nu, double sigma, std::uint64_t seed,
                           std::uint64_t stream = 0);

struct RiceMixtureConfig {
  int max_iter = 1000;
  double tol = 1e-6;  // relative loglik change
};

/// Two-class Rice mixture with a shared sigma: class 0 is background
/// (nu near 0), class 1 is tissue.
struct RiceMixtureFit {
  double sigma = 0.0;
  Eigen::Array2d nu{0.0, 0.0};
  Eigen::Array2d pi{0.5, 0.5};
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// EM fit of the two-class shared-sigma Rice mixture to the intensities of a
/// first-echo volume; sigma is the series noise estimate. Initialisation is
/// deterministic: Otsu split, background Rayleigh MLE for sigma.
RiceMixtureFit fit_rice_mixture(const Eigen::ArrayXd& intensities,
                                const RiceMixtureConfig& config = {});

} // namespace mpm

#endif
