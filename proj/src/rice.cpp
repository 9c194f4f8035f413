#include "mpm/rice.hpp"

#include <cmath>
#include <limits>

#include "mpm/rng.hpp"

namespace mpm {

double log_bessel_i0(double z) {
  if (z < 0.0) z = -z;
  if (z < kLogI0Crossover) {
    // I0(z) = sum_k (z^2/4)^k / (k!)^2, all terms positive.
    const double q = 0.25 * z * z;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k < 500; ++k) {
      term *= q / (static_cast<double>(k) * k);
      sum += term;
      if (term < sum * 1e-18) break;
    }
    return std::log(sum);
  }
  // I0(z) ~ e^z / sqrt(2 pi z) * (1 + 1/(8z) + 9/(2!(8z)^2) + ...),
  // a_k = a_{k-1} * (2k-1)^2 / (8k).
  double coef = 1.0, sum = 1.0;
  for (int k = 1; k <= 7; ++k) {
    coef *= (2.0 * k - 1.0) * (2.0 * k - 1.0) / (8.0 * k);
    sum += coef / std::pow(z, k);
  }
  return z - 0.5 * std::log(2.0 * M_PI * z) + std::log(sum);
}

double rice_logpdf(double x, double nu, double sigma) {
  if (!(sigma > 0.0)) throw NumericError("rice_logpdf: sigma must be > 0");
  if (x < 0.0) return -std::numeric_limits<double>::infinity();
  if (x == 0.0) return -std::numeric_limits<double>::infinity();
  const double s2 = sigma * sigma;
  return std::log(x / s2) + log_bessel_i0(x * nu / s2) - (x * x + nu * nu) / (2.0 * s2);
}

Eigen::ArrayXd rice_sample(const Eigen::ArrayXd& nu, double sigma, std::uint64_t seed,
                           std::uint64_t stream) {
  if (!(sigma > 0.0)) throw NumericError("rice_sample: sigma must be > 0");
  Eigen::ArrayXd out(nu.size());
  const std::ptrdiff_t n = nu.size();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double n1, n2;
    rng::normal_pair(seed, stream, static_cast<std::uint64_t>(i), n1, n2);
    out[i] = std::hypot(nu[i] + sigma * n1, sigma * n2);
  }
  return out;
}

namespace {

// Log-density without the ln(x/sigma^2) factor common to both classes;
// finite at x = 0 so responsibilities stay well-defined there.
inline double rice_logkernel(double x, double nu, double s2) {
  return log_bessel_i0(x * nu / s2) - (x * x + nu * nu) / (2.0 * s2);
}

double otsu_threshold(const Eigen::ArrayXd& x) {
  const double lo = x.minCoeff(), hi = x.maxCoeff();
  if (!(hi > lo)) throw NumericError(
      "fit_rice_mixture: volume has (near-)zero intensity variance; supply sigma manually");
  constexpr int kBins = 256;
  Eigen::ArrayXd hist = Eigen::ArrayXd::Zero(kBins);
  const double scale = kBins / (hi - lo);
  for (std::ptrdiff_t i = 0; i < x.size(); ++i) {
    int b = static_cast<int>((x[i] - lo) * scale);
    hist[std::min(b, kBins - 1)] += 1.0;
  }
  hist /= static_cast<double>(x.size());
  Eigen::ArrayXd centres = lo + (Eigen::ArrayXd::LinSpaced(kBins, 0.5, kBins - 0.5)) / scale;
  const double total_mean = (hist * centres).sum();
  double w0 = 0.0, sum0 = 0.0, best = -1.0, thresh = 0.5 * (lo + hi);
  for (int b = 0; b + 1 < kBins; ++b) {
    w0 += hist[b];
    sum0 += hist[b] * centres[b];
    const double w1 = 1.0 - w0;
    if (w0 <= 0.0 || w1 <= 0.0) continue;
    const double m0 = sum0 / w0, m1 = (total_mean - sum0) / w1;
    const double between = w0 * w1 * (m1 - m0) * (m1 - m0);
    if (between > best) {
      best = between;
      thresh = centres[b] + 0.5 / scale;
    }
  }
  return thresh;
}

} // namespace

RiceMixtureFit fit_rice_mixture(const Eigen::ArrayXd& intensities, const RiceMixtureConfig& config) {
  if (intensities.size() < 10000)
    throw DataError("fit_rice_mixture: need at least 1e4 voxels for a reliable noise estimate");

  // Exact zeros (masked/quantised voxels) carry no usable noise information.
  std::vector<double> kept;
  kept.reserve(intensities.size());
  for (std::ptrdiff_t i = 0; i < intensities.size(); ++i)
    if (intensities[i] > 0.0 && std::isfinite(intensities[i])) kept.push_back(intensities[i]);
  Eigen::Map<const Eigen::ArrayXd> x(kept.data(), static_cast<std::ptrdiff_t>(kept.size()));
  const std::ptrdiff_t n = x.size();
  if (n < 10000)
    throw DataError("fit_rice_mixture: fewer than 1e4 positive finite voxels");

  // Deterministic init: Otsu split; sigma from background Rayleigh MLE.
  const double thresh = otsu_threshold(x);
  double sum2_bg = 0.0, sum2_fg = 0.0;
  std::ptrdiff_t n_bg = 0;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (x[i] <= thresh) { sum2_bg += x[i] * x[i]; ++n_bg; }
    else sum2_fg += x[i] * x[i];
  }
  const std::ptrdiff_t n_fg = n - n_bg;
  if (n_bg == 0 || n_fg == 0)
    throw NumericError("fit_rice_mixture: degenerate Otsu split; supply sigma manually");

  RiceMixtureFit fit;
  double s2 = 0.5 * sum2_bg / static_cast<double>(n_bg);
  // Background is modelled as pure noise (Rayleigh); the foreground level
  // comes from moment matching on E[x^2] = nu^2 + 2 sigma^2.
  fit.nu[0] = 0.0;
  fit.nu[1] = std::sqrt(std::max(0.0, sum2_fg / static_cast<double>(n_fg) - 2.0 * s2));
  fit.pi[0] = static_cast<double>(n_bg) / static_cast<double>(n);
  fit.pi[1] = static_cast<double>(n_fg) / static_cast<double>(n);

  const double sum_logx = x.log().sum();
  double prev_ll = -std::numeric_limits<double>::infinity();
  constexpr double kMinWeight = 1e-8;

  for (int iter = 1; iter <= config.max_iter; ++iter) {
    const double lpi0 = std::log(fit.pi[0]), lpi1 = std::log(fit.pi[1]);
    double ll = 0.0, n0 = 0.0, m2_0 = 0.0, m2_1 = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : ll, n0, m2_0, m2_1)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const double l0 = lpi0 + rice_logkernel(x[i], fit.nu[0], s2);
      const double l1 = lpi1 + rice_logkernel(x[i], fit.nu[1], s2);
      const double m = std::max(l0, l1);
      const double w0 = std::exp(l0 - m), w1 = std::exp(l1 - m);
      const double z = w0 + w1;
      const double g0 = w0 / z;
      ll += m + std::log(z);
      n0 += g0;
      m2_0 += g0 * x[i] * x[i];
      m2_1 += (1.0 - g0) * x[i] * x[i];
    }
    ll += sum_logx - static_cast<double>(n) * std::log(s2);
    fit.loglik = ll;
    fit.iterations = iter;

    const double n1 = static_cast<double>(n) - n0;
    if (n0 < kMinWeight * n || n1 < kMinWeight * n)
      throw NumericError("fit_rice_mixture: a mixture class collapsed; supply sigma manually");

    if (std::isfinite(prev_ll) &&
        std::abs(ll - prev_ll) < config.tol * std::abs(prev_ll)) {
      fit.converged = true;
      break;
    }
    prev_ll = ll;

    // M-step: foreground level by moment matching at the current sigma,
    // then the pooled second-moment fixed point for sigma.
    fit.nu[1] = std::sqrt(std::max(0.0, m2_1 / n1 - 2.0 * s2));
    const double s2_new = (m2_0 + m2_1 - n1 * fit.nu[1] * fit.nu[1]) / (2.0 * static_cast<double>(n));
    if (!(s2_new > 0.0) || !std::isfinite(s2_new))
      throw NumericError("fit_rice_mixture: sigma update became degenerate; supply sigma manually");
    s2 = s2_new;
    fit.pi[0] = n0 / static_cast<double>(n);
    fit.pi[1] = n1 / static_cast<double>(n);
  }

  fit.sigma = std::sqrt(s2);

  // Guard against splitting a single-class (pure noise) volume: the extra
  // component can overfit a Rayleigh by a few nats while dragging sigma down.
  // Keep the mixture only if it beats the one-class Rayleigh MLE by the BIC
  // margin for its two extra parameters.
  const double s2_rayleigh = 0.5 * x.square().sum() / static_cast<double>(n);
  double ll_rayleigh = sum_logx - static_cast<double>(n) * std::log(s2_rayleigh);
  ll_rayleigh += (-0.5 / s2_rayleigh) * x.square().sum();
  if (fit.loglik - ll_rayleigh < std::log(static_cast<double>(n))) {
    fit.sigma = std::sqrt(s2_rayleigh);
    fit.nu = Eigen::Array2d(0.0, 0.0);
    fit.pi = Eigen::Array2d(1.0 - 1e-9, 1e-9);
    fit.loglik = ll_rayleigh;
    fit.converged = true;
  }
  return fit;
}

} // namespace mpm
