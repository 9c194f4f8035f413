#include "mpm/diffops.hpp"

#include <cmath>

namespace mpm {

RegMode reg_mode_from_string(const std::string& s) {
  if (s == "none" || s == "log") return RegMode::none;
  if (s == "tikhonov" || s == "tkh") return RegMode::tikhonov;
  if (s == "jtv") return RegMode::jtv;
  throw DataError("unknown regularisation mode '" + s + "'");
}

std::string to_string(RegMode m) {
  switch (m) {
    case RegMode::none: return "none";
    case RegMode::tikhonov: return "tikhonov";
    case RegMode::jtv: return "jtv";
  }
  return "?";
}

Eigen::ArrayXXd grad_apply(const Eigen::ArrayXd& f, const Grid3& grid) {
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(grid.voxels(), 6);
  const double cx = 1.0 / (grid.spacing[0] * M_SQRT2);
  const double cy = 1.0 / (grid.spacing[1] * M_SQRT2);
  const double cz = 1.0 / (grid.spacing[2] * M_SQRT2);
  const std::ptrdiff_t sy = nx, sz = static_cast<std::ptrdiff_t>(nx) * ny;
#pragma omp parallel for collapse(2) schedule(static)
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      std::ptrdiff_t i = grid.index(0, y, z);
      for (int x = 0; x < nx; ++x, ++i) {
        const double v = f[i];
        if (x + 1 < nx) out(i, 0) = (f[i + 1] - v) * cx;
        if (x > 0) out(i, 1) = (f[i - 1] - v) * cx;
        if (y + 1 < ny) out(i, 2) = (f[i + sy] - v) * cy;
        if (y > 0) out(i, 3) = (f[i - sy] - v) * cy;
        if (z + 1 < nz) out(i, 4) = (f[i + sz] - v) * cz;
        if (z > 0) out(i, 5) = (f[i - sz] - v) * cz;
      }
    }
  }
  return out;
}

Eigen::ArrayXd grad_adjoint(const Eigen::ArrayXXd& g, const Grid3& grid) {
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(grid.voxels());
  const double cx = 1.0 / (grid.spacing[0] * M_SQRT2);
  const double cy = 1.0 / (grid.spacing[1] * M_SQRT2);
  const double cz = 1.0 / (grid.spacing[2] * M_SQRT2);
  const std::ptrdiff_t sy = nx, sz = static_cast<std::ptrdiff_t>(nx) * ny;
  std::ptrdiff_t i = 0;
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x, ++i) {
        if (x + 1 < nx) { out[i + 1] += g(i, 0) * cx; out[i] -= g(i, 0) * cx; }
        if (x > 0) { out[i - 1] += g(i, 1) * cx; out[i] -= g(i, 1) * cx; }
        if (y + 1 < ny) { out[i + sy] += g(i, 2) * cy; out[i] -= g(i, 2) * cy; }
        if (y > 0) { out[i - sy] += g(i, 3) * cy; out[i] -= g(i, 3) * cy; }
        if (z + 1 < nz) { out[i + sz] += g(i, 4) * cz; out[i] -= g(i, 4) * cz; }
        if (z > 0) { out[i - sz] += g(i, 5) * cz; out[i] -= g(i, 5) * cz; }
      }
    }
  }
  return out;
}

Eigen::ArrayXd jtv_quadratic(const ParameterMaps& maps, const RegConfig& cfg) {
  const Grid3& grid = maps.grid;
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  Eigen::ArrayXd q = Eigen::ArrayXd::Zero(grid.voxels());
  const double hx = 1.0 / (2.0 * grid.spacing[0] * grid.spacing[0]);
  const double hy = 1.0 / (2.0 * grid.spacing[1] * grid.spacing[1]);
  const double hz = 1.0 / (2.0 * grid.spacing[2] * grid.spacing[2]);
  const std::ptrdiff_t sy = nx, sz = static_cast<std::ptrdiff_t>(nx) * ny;
  for (int c = 0; c < maps.channels(); ++c) {
    const double lam = cfg.lambda[c];
    if (lam == 0.0) continue;
    const auto f = maps.values.col(c);
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < nz; ++z) {
      for (int y = 0; y < ny; ++y) {
        std::ptrdiff_t i = grid.index(0, y, z);
        for (int x = 0; x < nx; ++x, ++i) {
          const double v = f[i];
          double acc = 0.0;
          if (x + 1 < nx) { const double d = f[i + 1] - v; acc += d * d * hx; }
          if (x > 0) { const double d = f[i - 1] - v; acc += d * d * hx; }
          if (y + 1 < ny) { const double d = f[i + sy] - v; acc += d * d * hy; }
          if (y > 0) { const double d = f[i - sy] - v; acc += d * d * hy; }
          if (z + 1 < nz) { const double d = f[i + sz] - v; acc += d * d * hz; }
          if (z > 0) { const double d = f[i - sz] - v; acc += d * d * hz; }
          q[i] += lam * acc;
        }
      }
    }
  }
  return q;
}

std::pair<double, WeightMap> jtv_energy_and_weights(const ParameterMaps& maps, const RegConfig& cfg) {
  WeightMap wm;
  wm.grid = maps.grid;
  wm.w = jtv_quadratic(maps, cfg).sqrt().max(kWeightFloor);
  return {wm.w.sum(), std::move(wm)};
}

void membrane_accumulate(const Eigen::ArrayXd& field, const Grid3& grid, const Eigen::ArrayXd* riw,
                         double riw_uniform, double lambda, Eigen::ArrayXd& out) {
  if (lambda == 0.0) return;
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  // Edge coefficient between voxels i,n along axis a: (riw_i + riw_n)/(2 h_a^2).
  const double hx = lambda / (2.0 * grid.spacing[0] * grid.spacing[0]);
  const double hy = lambda / (2.0 * grid.spacing[1] * grid.spacing[1]);
  const double hz = lambda / (2.0 * grid.spacing[2] * grid.spacing[2]);
  const std::ptrdiff_t sy = nx, sz = static_cast<std::ptrdiff_t>(nx) * ny;
  const double* rw = riw ? riw->data() : nullptr;
  const double* f = field.data();
  double* o = out.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      std::ptrdiff_t i = grid.index(0, y, z);
      for (int x = 0; x < nx; ++x, ++i) {
        const double v = f[i];
        const double ri = rw ? rw[i] : riw_uniform;
        double acc = 0.0;
        if (x + 1 < nx) acc += (ri + (rw ? rw[i + 1] : riw_uniform)) * hx * (v - f[i + 1]);
        if (x > 0) acc += (ri + (rw ? rw[i - 1] : riw_uniform)) * hx * (v - f[i - 1]);
        if (y + 1 < ny) acc += (ri + (rw ? rw[i + sy] : riw_uniform)) * hy * (v - f[i + sy]);
        if (y > 0) acc += (ri + (rw ? rw[i - sy] : riw_uniform)) * hy * (v - f[i - sy]);
        if (z + 1 < nz) acc += (ri + (rw ? rw[i + sz] : riw_uniform)) * hz * (v - f[i + sz]);
        if (z > 0) acc += (ri + (rw ? rw[i - sz] : riw_uniform)) * hz * (v - f[i - sz]);
        o[i] += acc;
      }
    }
  }
}

Eigen::ArrayXd membrane_diag(const Grid3& grid, const Eigen::ArrayXd* riw, double riw_uniform) {
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  Eigen::ArrayXd diag = Eigen::ArrayXd::Zero(grid.voxels());
  const double hx = 1.0 / (2.0 * grid.spacing[0] * grid.spacing[0]);
  const double hy = 1.0 / (2.0 * grid.spacing[1] * grid.spacing[1]);
  const double hz = 1.0 / (2.0 * grid.spacing[2] * grid.spacing[2]);
  const std::ptrdiff_t sy = nx, sz = static_cast<std::ptrdiff_t>(nx) * ny;
  const double* rw = riw ? riw->data() : nullptr;
#pragma omp parallel for collapse(2) schedule(static)
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      std::ptrdiff_t i = grid.index(0, y, z);
      for (int x = 0; x < nx; ++x, ++i) {
        const double ri = rw ? rw[i] : riw_uniform;
        double acc = 0.0;
        if (x + 1 < nx) acc += (ri + (rw ? rw[i + 1] : riw_uniform)) * hx;
        if (x > 0) acc += (ri + (rw ? rw[i - 1] : riw_uniform)) * hx;
        if (y + 1 < ny) acc += (ri + (rw ? rw[i + sy] : riw_uniform)) * hy;
        if (y > 0) acc += (ri + (rw ? rw[i - sy] : riw_uniform)) * hy;
        if (z + 1 < nz) acc += (ri + (rw ? rw[i + sz] : riw_uniform)) * hz;
        if (z > 0) acc += (ri + (rw ? rw[i - sz] : riw_uniform)) * hz;
        diag[i] = acc;
      }
    }
  }
  return diag;
}

Eigen::ArrayXXd membrane_apply(const ParameterMaps& maps, const WeightMap* weights,
                               const RegConfig& cfg) {
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(maps.values.rows(), maps.values.cols());
  if (cfg.mode == RegMode::none) return out;
  Eigen::ArrayXd riw;
  const Eigen::ArrayXd* riw_ptr = nullptr;
  if (weights) {
    riw = weights->w.inverse();
    riw_ptr = &riw;
  }
  for (int c = 0; c < maps.channels(); ++c) {
    Eigen::ArrayXd chan = Eigen::ArrayXd::Zero(maps.values.rows());
    Eigen::ArrayXd xc = maps.values.col(c);
    membrane_accumulate(xc, maps.grid, riw_ptr, 1.0, cfg.lambda[c], chan);
    out.col(c) = chan;
  }
  return out;
}

} // namespace mpm
