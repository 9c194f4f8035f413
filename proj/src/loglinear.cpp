#include "mpm/loglinear.hpp"

#include <cmath>

#include "mpm/projection.hpp"

namespace mpm {

LoglinearResult fit_loglinear(const Dataset& d, bool weighted, const LoglinearConfig& config) {
  LoglinearConfig cfg = config;
  cfg.weighted = weighted || config.weighted;
  const auto diagnostics = validate_dataset(d);
  if (!diagnostics.empty()) throw DataError("fit_loglinear: invalid dataset: " + diagnostics.front());

  const Grid3& grid = d.recon_grid;
  const std::ptrdiff_t n = grid.voxels();
  const int C = d.contrasts();

  Eigen::ArrayXXd a_cc = Eigen::ArrayXXd::Zero(n, C);
  Eigen::ArrayXXd a_cr = Eigen::ArrayXXd::Zero(n, C);
  Eigen::ArrayXXd b_c = Eigen::ArrayXXd::Zero(n, C);
  Eigen::ArrayXd a_rr = Eigen::ArrayXd::Zero(n);
  Eigen::ArrayXd b_r = Eigen::ArrayXd::Zero(n);
  Eigen::ArrayXi usable = Eigen::ArrayXi::Zero(n);
  Eigen::ArrayXd floor_c(C);

  for (int c = 0; c < C; ++c) {
    const ContrastSeries& s = d.series[c];
    const VoxelAffine map = resample_voxel_map(s.native_grid, s.pose, grid);
    // Per-series intensity floor from the native data (resampling preserves
    // the mean up to interpolation).
    double mean = 0.0;
    for (const EchoVolume& e : s.echoes) mean += e.data.mean();
    mean /= static_cast<double>(s.echoes.size());
    const double floor = cfg.floor_scale * mean;
    floor_c[c] = std::max(floor, 1e-300);

    for (const EchoVolume& echo : s.echoes) {
      Eigen::ArrayXd v = pull_affine(echo.data, s.native_grid, map, grid);
      const double t = echo.te;
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        const double si = v[i];
        if (!(si > floor_c[c])) continue;  // floored echoes get zero weight
        const double u = cfg.weighted ? si * si : 1.0;
        const double y = std::log(si);
        a_cc(i, c) += u;
        a_cr(i, c) -= u * t;
        b_c(i, c) += u * y;
        a_rr[i] += u * t * t;
        b_r[i] -= u * t * y;
        ++usable[i];
      }
    }
  }

  LoglinearResult out;
  out.maps = ParameterMaps(grid, C);
  out.flagged = Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>::Zero(n);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    bool bad = usable[i] < 2;
    double schur = a_rr[i], rhs = b_r[i];
    for (int c = 0; c < C; ++c) {
      if (a_cc(i, c) <= 0.0) { bad = true; continue; }
      schur -= a_cr(i, c) * a_cr(i, c) / a_cc(i, c);
      rhs -= a_cr(i, c) * b_c(i, c) / a_cc(i, c);
    }
    double r = 0.0;
    if (!bad && schur > 1e-30 * a_rr[i]) {
      r = rhs / schur;
    } else if (!bad) {
      // Usable data but no decay information (e.g. one echo per voxel).
      bad = true;
    }
    r = std::min(std::max(r, 0.0), cfg.r_max);
    for (int c = 0; c < C; ++c) {
      if (a_cc(i, c) > 0.0)
        out.maps.values(i, c) = (b_c(i, c) - a_cr(i, c) * r) / a_cc(i, c);
      else
        out.maps.values(i, c) = std::log(floor_c[c]);
    }
    out.maps.values(i, C) = r;
    if (bad) out.flagged[i] = 1;
  }
  return out;
}

} // namespace mpm
