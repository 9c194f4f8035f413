#include "mpm/solver.hpp"

#include <cmath>
#include <vector>

#include "mpm/errors.hpp"

namespace mpm {

Eigen::ArrayXXd NewtonSystem::apply(const Eigen::ArrayXXd& x) const {
  const int C = contrasts();
  const int K = channels();
  Eigen::ArrayXXd out(x.rows(), K);
  out.col(K - 1) = hess.col(2 * C) * x.col(K - 1);
  for (int c = 0; c < C; ++c) {
    out.col(c) = hess.col(c) * x.col(c) + hess.col(C + c) * x.col(K - 1);
    out.col(K - 1) += hess.col(C + c) * x.col(c);
  }
  for (int c = 0; c < K; ++c) {
    Eigen::ArrayXd chan = out.col(c);
    Eigen::ArrayXd xc = x.col(c);
    membrane_accumulate(xc, grid, riw, riw_uniform, lambda[c], chan);
    out.col(c) = chan;
  }
  return out;
}

namespace {

inline double dot(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b) { return (a * b).sum(); }

/// Solves (B + diag(add)) s = rhs for one arrow block: diagonal acc[c], last
/// row/col acr[c], corner arr. Channels without information stay at zero.
inline void arrow_solve(const double* acc, const double* acr, double arr, const double* add,
                        double add_r, const double* rhs, double* sol, int C) {
  double schur = arr + add_r;
  double srhs = rhs[C];
  for (int c = 0; c < C; ++c) {
    const double a = acc[c] + add[c];
    if (a > 0.0) {
      schur -= acr[c] * acr[c] / a;
      srhs -= acr[c] * rhs[c] / a;
    }
  }
  const double sr = schur > 0.0 ? srhs / schur : 0.0;
  sol[C] = sr;
  for (int c = 0; c < C; ++c) {
    const double a = acc[c] + add[c];
    sol[c] = a > 0.0 ? (rhs[c] - acr[c] * sr) / a : 0.0;
  }
}

/// One multigrid level of the substitute system. The coarse membrane is a
/// mass-lumped Galerkin operator: each edge along axis a carries the
/// restricted transverse masses tf_b tf_c of the other two axes (all ones on
/// the finest level), which keeps it consistent with the entrywise
/// full-weighting used for the H_d blocks.
struct MgLevel {
  Grid3 grid;
  Eigen::ArrayXXd hess;
  Eigen::ArrayXd mdiag;                 // membrane diagonal at lambda = 1, riw = 1
  std::array<Eigen::ArrayXd, 3> tf;     // per-axis transverse factor vectors
};

/// lambda * membrane(u) accumulated into out on one level.
void level_membrane_accumulate(const MgLevel& lvl, double riw, double lambda,
                               const Eigen::ArrayXd& field, Eigen::ArrayXd& out) {
  if (lambda == 0.0) return;
  const Grid3& grid = lvl.grid;
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  const double ex = lambda * riw / (grid.spacing[0] * grid.spacing[0]);
  const double ey = lambda * riw / (grid.spacing[1] * grid.spacing[1]);
  const double ez = lambda * riw / (grid.spacing[2] * grid.spacing[2]);
  const std::ptrdiff_t sy = nx, sz = static_cast<std::ptrdiff_t>(nx) * ny;
  const double* f = field.data();
  const double* fx = lvl.tf[0].data();
  const double* fy = lvl.tf[1].data();
  const double* fz = lvl.tf[2].data();
  double* o = out.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      std::ptrdiff_t i = grid.index(0, y, z);
      const double cxe = ex * fy[y] * fz[z];
      for (int x = 0; x < nx; ++x, ++i) {
        const double v = f[i];
        double acc = 0.0;
        if (x + 1 < nx) acc += cxe * (v - f[i + 1]);
        if (x > 0) acc += cxe * (v - f[i - 1]);
        const double cye = ey * fx[x] * fz[z];
        if (y + 1 < ny) acc += cye * (v - f[i + sy]);
        if (y > 0) acc += cye * (v - f[i - sy]);
        const double cze = ez * fx[x] * fy[y];
        if (z + 1 < nz) acc += cze * (v - f[i + sz]);
        if (z > 0) acc += cze * (v - f[i - sz]);
        o[i] += acc;
      }
    }
  }
}

/// H_d u + membrane(u) on one level, uniform inverse weight.
Eigen::ArrayXXd apply_level(const MgLevel& lvl, const Eigen::VectorXd& lambda, double riw,
                            const Eigen::ArrayXXd& u) {
  const int C = (static_cast<int>(lvl.hess.cols()) - 1) / 2;
  const int K = C + 1;
  Eigen::ArrayXXd out(u.rows(), K);
  out.col(K - 1) = lvl.hess.col(2 * C) * u.col(K - 1);
  for (int c = 0; c < C; ++c) {
    out.col(c) = lvl.hess.col(c) * u.col(c) + lvl.hess.col(C + c) * u.col(K - 1);
    out.col(K - 1) += lvl.hess.col(C + c) * u.col(c);
  }
  for (int c = 0; c < K; ++c) {
    Eigen::ArrayXd chan = out.col(c);
    Eigen::ArrayXd uc = u.col(c);
    level_membrane_accumulate(lvl, riw, lambda[c], uc, chan);
    out.col(c) = chan;
  }
  return out;
}

/// One red-black exact-block Gauss-Seidel sweep. Same-colour voxels only read
/// opposite-colour neighbours, so the parallel sweep is deterministic.
void gs_sweep(const MgLevel& lvl, const Eigen::VectorXd& lambda, double riw,
              const Eigen::ArrayXXd& g, Eigen::ArrayXXd& u) {
  const Grid3& grid = lvl.grid;
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  const int C = (static_cast<int>(lvl.hess.cols()) - 1) / 2;
  const int K = C + 1;
  const double ex = riw / (grid.spacing[0] * grid.spacing[0]);
  const double ey = riw / (grid.spacing[1] * grid.spacing[1]);
  const double ez = riw / (grid.spacing[2] * grid.spacing[2]);
  const std::ptrdiff_t sy = nx, sz = static_cast<std::ptrdiff_t>(nx) * ny;
  const std::ptrdiff_t nvox = grid.voxels();
  const double* hd = lvl.hess.data();
  double* ud = u.data();
  const double* gd = g.data();

  const double* fx = lvl.tf[0].data();
  const double* fy = lvl.tf[1].data();
  const double* fz = lvl.tf[2].data();
  for (int colour = 0; colour < 2; ++colour) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < nz; ++z) {
      for (int y = 0; y < ny; ++y) {
        double rhs[16], sol[16], add[16], acc[16], acr[16];
        const int x0 = (colour + y + z) % 2;
        for (int x = x0; x < nx; x += 2) {
          const std::ptrdiff_t i = grid.index(x, y, z);
          const double diag_m = lvl.mdiag[i] * riw;
          const double cxe = ex * fy[y] * fz[z];
          const double cye = ey * fx[x] * fz[z];
          const double cze = ez * fx[x] * fy[y];
          // residual r = g - (H_d + membrane) u at voxel i, all channels
          double ur = ud[(K - 1) * nvox + i];
          double hr = hd[2 * C * nvox + i] * ur;  // decay row of H_d u
          for (int c = 0; c < K; ++c) {
            const double* uc = ud + static_cast<std::ptrdiff_t>(c) * nvox;
            const double v = uc[i];
            double stencil = 0.0;
            if (x + 1 < nx) stencil += cxe * (v - uc[i + 1]);
            if (x > 0) stencil += cxe * (v - uc[i - 1]);
            if (y + 1 < ny) stencil += cye * (v - uc[i + sy]);
            if (y > 0) stencil += cye * (v - uc[i - sy]);
            if (z + 1 < nz) stencil += cze * (v - uc[i + sz]);
            if (z > 0) stencil += cze * (v - uc[i - sz]);
            rhs[c] = gd[static_cast<std::ptrdiff_t>(c) * nvox + i] - lambda[c] * stencil;
            if (c < C) {
              const double a_cc = hd[static_cast<std::ptrdiff_t>(c) * nvox + i];
              const double a_cr = hd[static_cast<std::ptrdiff_t>(C + c) * nvox + i];
              rhs[c] -= a_cc * v + a_cr * ur;
              hr += a_cr * v;
              acc[c] = a_cc;
              acr[c] = a_cr;
              add[c] = lambda[c] * diag_m;
            }
          }
          rhs[K - 1] -= hr;
          arrow_solve(acc, acr, hd[2 * C * nvox + i], add, lambda[K - 1] * diag_m, rhs, sol, C);
          for (int c = 0; c < K; ++c) ud[static_cast<std::ptrdiff_t>(c) * nvox + i] += sol[c];
        }
      }
    }
  }
}

Eigen::MatrixXd dense_substitute(const MgLevel& lvl, const Eigen::VectorXd& lambda, double riw) {
  const Grid3& grid = lvl.grid;
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  const int C = (static_cast<int>(lvl.hess.cols()) - 1) / 2;
  const int K = C + 1;
  const std::ptrdiff_t nvox = grid.voxels();
  const std::ptrdiff_t N = nvox * K;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(N, N);
  for (std::ptrdiff_t i = 0; i < nvox; ++i) {
    for (int c = 0; c < C; ++c) {
      m(c * nvox + i, c * nvox + i) += lvl.hess(i, c);
      m(c * nvox + i, (K - 1) * nvox + i) += lvl.hess(i, C + c);
      m((K - 1) * nvox + i, c * nvox + i) += lvl.hess(i, C + c);
    }
    m((K - 1) * nvox + i, (K - 1) * nvox + i) += lvl.hess(i, 2 * C);
  }
  const double e[3] = {riw / (grid.spacing[0] * grid.spacing[0]),
                       riw / (grid.spacing[1] * grid.spacing[1]),
                       riw / (grid.spacing[2] * grid.spacing[2])};
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        const std::ptrdiff_t i = grid.index(x, y, z);
        const double tfac[3] = {lvl.tf[1][y] * lvl.tf[2][z], lvl.tf[0][x] * lvl.tf[2][z],
                                lvl.tf[0][x] * lvl.tf[1][y]};
        const int nb[6][3] = {{x + 1, y, z}, {x - 1, y, z}, {x, y + 1, z},
                              {x, y - 1, z}, {x, y, z + 1}, {x, y, z - 1}};
        for (int k = 0; k < 6; ++k) {
          const int a = k / 2;
          if (nb[k][0] < 0 || nb[k][0] >= nx || nb[k][1] < 0 || nb[k][1] >= ny ||
              nb[k][2] < 0 || nb[k][2] >= nz)
            continue;
          const std::ptrdiff_t j = grid.index(nb[k][0], nb[k][1], nb[k][2]);
          for (int c = 0; c < K; ++c) {
            m(c * nvox + i, c * nvox + i) += lambda[c] * e[a] * tfac[a];
            m(c * nvox + i, c * nvox + j) -= lambda[c] * e[a] * tfac[a];
          }
        }
      }
    }
  }
  return m;
}

/// 1D counterpart of mg_restrict, used for the per-axis transverse factors.
Eigen::ArrayXd restrict_1d(const Eigen::ArrayXd& fine, int coarse_n) {
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(coarse_n);
  for (int x = 0; x < static_cast<int>(fine.size()); ++x) {
    const int j0 = x / 2;
    const int j1 = std::min(j0 + (x & 1), coarse_n - 1);
    const double w = ((x & 1) ? 0.25 : 0.5) * fine[x];
    out[j0] += w;
    if (x & 1) out[j1] += w;
  }
  return out;
}

void fill_mdiag(MgLevel& lvl) {
  const Grid3& grid = lvl.grid;
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  const double ex = 1.0 / (grid.spacing[0] * grid.spacing[0]);
  const double ey = 1.0 / (grid.spacing[1] * grid.spacing[1]);
  const double ez = 1.0 / (grid.spacing[2] * grid.spacing[2]);
  lvl.mdiag.resize(grid.voxels());
  std::ptrdiff_t i = 0;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x, ++i) {
        double acc = 0.0;
        acc += ex * lvl.tf[1][y] * lvl.tf[2][z] * ((x + 1 < nx ? 1 : 0) + (x > 0 ? 1 : 0));
        acc += ey * lvl.tf[0][x] * lvl.tf[2][z] * ((y + 1 < ny ? 1 : 0) + (y > 0 ? 1 : 0));
        acc += ez * lvl.tf[0][x] * lvl.tf[1][y] * ((z + 1 < nz ? 1 : 0) + (z > 0 ? 1 : 0));
        lvl.mdiag[i] = acc;
      }
}

std::vector<MgLevel> build_levels(const NewtonSystem& sys, const SolverConfig& cfg) {
  std::vector<MgLevel> levels;
  MgLevel finest;
  finest.grid = sys.grid;
  finest.hess = sys.hess;
  for (int a = 0; a < 3; ++a) finest.tf[a] = Eigen::ArrayXd::Ones(sys.grid.dims[a]);
  fill_mdiag(finest);
  levels.push_back(std::move(finest));
  while (static_cast<int>(levels.size()) < cfg.max_levels &&
         (levels.back().grid.dims > cfg.coarsest_dim).all()) {
    const MgLevel& fine = levels.back();
    MgLevel coarse;
    coarse.grid = mg_coarsen(fine.grid);
    coarse.hess.resize(coarse.grid.voxels(), fine.hess.cols());
    for (int k = 0; k < fine.hess.cols(); ++k)
      coarse.hess.col(k) = mg_restrict(fine.hess.col(k), fine.grid, coarse.grid);
    for (int a = 0; a < 3; ++a) coarse.tf[a] = restrict_1d(fine.tf[a], coarse.grid.dims[a]);
    fill_mdiag(coarse);
    levels.push_back(std::move(coarse));
  }
  return levels;
}

void vcycle(const std::vector<MgLevel>& levels, std::size_t l, const Eigen::VectorXd& lambda,
            double riw, const Eigen::ArrayXXd& g, Eigen::ArrayXXd& u, const SolverConfig& cfg) {
  const MgLevel& lvl = levels[l];
  const int K = (static_cast<int>(lvl.hess.cols()) - 1) / 2 + 1;
  if (l + 1 == levels.size()) {
    const Eigen::MatrixXd m = dense_substitute(lvl, lambda, riw);
    Eigen::Map<const Eigen::VectorXd> gv(g.data(), g.size());
    Eigen::VectorXd sol = Eigen::LDLT<Eigen::MatrixXd>(m).solve(gv);
    u = Eigen::Map<const Eigen::ArrayXXd>(sol.data(), lvl.grid.voxels(), K);
    return;
  }
  for (int s = 0; s < cfg.pre_sweeps; ++s) gs_sweep(lvl, lambda, riw, g, u);
  const Eigen::ArrayXXd resid = g - apply_level(lvl, lambda, riw, u);
  const MgLevel& next = levels[l + 1];
  Eigen::ArrayXXd gc(next.grid.voxels(), K);
  for (int c = 0; c < K; ++c) gc.col(c) = mg_restrict(resid.col(c), lvl.grid, next.grid);
  Eigen::ArrayXXd uc = Eigen::ArrayXXd::Zero(next.grid.voxels(), K);
  vcycle(levels, l + 1, lambda, riw, gc, uc, cfg);
  for (int c = 0; c < K; ++c) {
    Eigen::ArrayXd corr = mg_prolong(uc.col(c), next.grid, lvl.grid);
    u.col(c) += corr;
  }
  for (int s = 0; s < cfg.post_sweeps; ++s) gs_sweep(lvl, lambda, riw, g, u);
}

} // namespace

Grid3 mg_coarsen(const Grid3& fine) {
  Grid3 coarse;
  for (int a = 0; a < 3; ++a) {
    coarse.dims[a] = (fine.dims[a] + 1) / 2;
    coarse.spacing[a] = fine.spacing[a] * 2.0;
  }
  return coarse;
}

Eigen::ArrayXd mg_prolong(const Eigen::ArrayXd& coarse_field, const Grid3& coarse,
                          const Grid3& fine) {
  Eigen::ArrayXd out(fine.voxels());
  const int nx = fine.dims[0], ny = fine.dims[1], nz = fine.dims[2];
  const int cx = coarse.dims[0], cy = coarse.dims[1], cz = coarse.dims[2];
#pragma omp parallel for collapse(2) schedule(static)
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      const int jz0 = z / 2, jz1 = std::min(jz0 + (z & 1), cz - 1);
      const int jy0 = y / 2, jy1 = std::min(jy0 + (y & 1), cy - 1);
      std::ptrdiff_t o = fine.index(0, y, z);
      for (int x = 0; x < nx; ++x, ++o) {
        const int jx0 = x / 2, jx1 = std::min(jx0 + (x & 1), cx - 1);
        const double wx = (x & 1) ? 0.5 : 1.0;
        const double wy = (y & 1) ? 0.5 : 1.0;
        const double wz = (z & 1) ? 0.5 : 1.0;
        // Trilinear: odd coordinates average the two bracketing coarse points.
        double v = 0.0;
        for (int dz = 0; dz < ((z & 1) ? 2 : 1); ++dz)
          for (int dy = 0; dy < ((y & 1) ? 2 : 1); ++dy)
            for (int dx = 0; dx < ((x & 1) ? 2 : 1); ++dx)
              v += coarse_field[coarse.index(dx ? jx1 : jx0, dy ? jy1 : jy0, dz ? jz1 : jz0)];
        out[o] = v * wx * wy * wz;
      }
    }
  }
  return out;
}

Eigen::ArrayXd mg_restrict(const Eigen::ArrayXd& fine_field, const Grid3& fine,
                           const Grid3& coarse) {
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(coarse.voxels());
  const int nx = fine.dims[0], ny = fine.dims[1], nz = fine.dims[2];
  const int cx = coarse.dims[0], cy = coarse.dims[1], cz = coarse.dims[2];
  std::ptrdiff_t i = 0;
  for (int z = 0; z < nz; ++z) {
    const int jz0 = z / 2, jz1 = std::min(jz0 + (z & 1), cz - 1);
    const double wz = (z & 1) ? 0.5 : 1.0;
    for (int y = 0; y < ny; ++y) {
      const int jy0 = y / 2, jy1 = std::min(jy0 + (y & 1), cy - 1);
      const double wy = (y & 1) ? 0.5 : 1.0;
      for (int x = 0; x < nx; ++x, ++i) {
        const int jx0 = x / 2, jx1 = std::min(jx0 + (x & 1), cx - 1);
        const double wx = (x & 1) ? 0.5 : 1.0;
        const double v = fine_field[i] * wx * wy * wz * 0.125;
        for (int dz = 0; dz < ((z & 1) ? 2 : 1); ++dz)
          for (int dy = 0; dy < ((y & 1) ? 2 : 1); ++dy)
            for (int dx = 0; dx < ((x & 1) ? 2 : 1); ++dx)
              out[coarse.index(dx ? jx1 : jx0, dy ? jy1 : jy0, dz ? jz1 : jz0)] += v;
      }
    }
  }
  return out;
}

Eigen::ArrayXXd cg_solve(const NewtonSystem& sys, const Eigen::ArrayXXd& g,
                         const Eigen::ArrayXXd& x0, const SolverConfig& cfg, int* iterations,
                         double* final_residual) {
  Eigen::ArrayXXd x = x0;
  const double gnorm = std::sqrt(dot(g, g));
  if (iterations) *iterations = 0;
  if (final_residual) *final_residual = 0.0;
  if (gnorm == 0.0) return Eigen::ArrayXXd::Zero(g.rows(), g.cols());

  Eigen::ArrayXXd r = g - sys.apply(x);
  double rs = dot(r, r);
  double rel = std::sqrt(rs) / gnorm;
  if (rel < cfg.cg_tol) {
    if (final_residual) *final_residual = rel;
    return x;
  }
  Eigen::ArrayXXd p = r;
  int it = 0;
  for (; it < cfg.cg_max_iter; ++it) {
    const Eigen::ArrayXXd ap = sys.apply(p);
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) break;  // null-space direction; residual cannot improve
    const double alpha = rs / pap;
    x += alpha * p;
    r -= alpha * ap;
    const double rs_new = dot(r, r);
    if (!std::isfinite(rs_new))
      throw NumericError("cg_solve: non-finite iterate (operator not positive semidefinite?)");
    rel = std::sqrt(rs_new) / gnorm;
    if (rel < cfg.cg_tol) {
      ++it;
      break;
    }
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  if (iterations) *iterations = it;
  if (final_residual) *final_residual = rel;
  return x;
}

namespace {

/// Exact correction over the span of per-channel constant fields. The
/// membrane annihilates constants under the Neumann boundary, so the reduced
/// Galerkin system is just the summed arrow block; this removes the
/// near-null modes that plain cycling leaves behind when the data term is
/// weak.
void constant_mode_correction(const MgLevel& finest, const Eigen::VectorXd& lambda, double riw,
                              const Eigen::ArrayXXd& g, Eigen::ArrayXXd& u) {
  const int C = (static_cast<int>(finest.hess.cols()) - 1) / 2;
  const int K = C + 1;
  const Eigen::ArrayXXd resid = g - apply_level(finest, lambda, riw, u);
  std::vector<double> acc(std::max(C, 1)), acr(std::max(C, 1)), rhs(K), beta(K);
  for (int c = 0; c < C; ++c) {
    acc[c] = finest.hess.col(c).sum();
    acr[c] = finest.hess.col(C + c).sum();
  }
  const double arr = finest.hess.col(2 * C).sum();
  for (int c = 0; c < K; ++c) rhs[c] = resid.col(c).sum();
  std::vector<double> zero(K, 0.0);
  arrow_solve(acc.data(), acr.data(), arr, zero.data(), 0.0, rhs.data(), beta.data(), C);
  for (int c = 0; c < K; ++c) u.col(c) += beta[c];
}

} // namespace

Eigen::ArrayXXd vcycle_substitute(const NewtonSystem& sys, const Eigen::ArrayXXd& g,
                                  const SolverConfig& cfg, double* final_residual) {
  const double riw = sys.riw ? sys.riw->maxCoeff() : sys.riw_uniform;  // 1/min(w)
  const std::vector<MgLevel> levels = build_levels(sys, cfg);
  Eigen::ArrayXXd u = Eigen::ArrayXXd::Zero(g.rows(), g.cols());
  for (int v = 0; v < cfg.vcycles; ++v) {
    vcycle(levels, 0, sys.lambda, riw, g, u, cfg);
    constant_mode_correction(levels[0], sys.lambda, riw, g, u);
  }
  if (final_residual) {
    const double gnorm = std::sqrt(dot(g, g));
    const Eigen::ArrayXXd resid = g - apply_level(levels[0], sys.lambda, riw, u);
    *final_residual = gnorm > 0 ? std::sqrt(dot(resid, resid)) / gnorm : 0.0;
  }
  return u;
}

std::pair<Eigen::ArrayXXd, SolveReport> solve_newton_system(const NewtonSystem& sys,
                                                            const Eigen::ArrayXXd& g,
                                                            const SolverConfig& cfg) {
  SolveReport report;
  Eigen::ArrayXXd warm = vcycle_substitute(sys, g, cfg, &report.vcycle_residual);
  Eigen::ArrayXXd x = cg_solve(sys, g, warm, cfg, &report.cg_iterations, &report.cg_residual);
  return {std::move(x), report};
}

} // namespace mpm
