#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mpm/rng.hpp"
#include "mpm/solver.hpp"

using namespace mpm;

namespace {

Eigen::ArrayXd random_field(const Grid3& g, std::uint64_t seed, std::uint64_t stream = 0) {
  Eigen::ArrayXd f(g.voxels());
  for (std::ptrdiff_t i = 0; i < f.size(); ++i) f[i] = rng::normal(seed, stream, i);
  return f;
}

/// Per-voxel PSD arrow blocks with strictly positive diagonals.
Eigen::ArrayXXd random_blocks(const Grid3& g, int contrasts, std::uint64_t seed) {
  const std::ptrdiff_t n = g.voxels();
  Eigen::ArrayXXd hess(n, 2 * contrasts + 1);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double arr = 0.2;
    for (int c = 0; c < contrasts; ++c) {
      // rank-1 pieces s [1, -t] [1, -t]^T summed over two pseudo-echoes
      double acc = 0.05, acr = 0.0;
      for (int e = 0; e < 2; ++e) {
        const double s = 0.5 + rng::uniform(seed, 3 * c + e, i);
        const double t = 0.4 + 0.3 * e;
        acc += s;
        acr -= s * t;
        arr += s * t * t;
      }
      hess(i, c) = acc;
      hess(i, contrasts + c) = acr;
    }
    hess(i, 2 * contrasts) = arr;
  }
  return hess;
}

/// Dense operator matrix built column-by-column from the matrix-free apply.
Eigen::MatrixXd dense_from_apply(const NewtonSystem& sys) {
  const std::ptrdiff_t n = sys.grid.voxels();
  const int k = sys.channels();
  Eigen::MatrixXd m(n * k, n * k);
  Eigen::ArrayXXd basis = Eigen::ArrayXXd::Zero(n, k);
  for (std::ptrdiff_t j = 0; j < n * k; ++j) {
    basis(j % n, static_cast<int>(j / n)) = 1.0;
    const Eigen::ArrayXXd col = sys.apply(basis);
    m.col(j) = Eigen::Map<const Eigen::VectorXd>(col.data(), n * k);
    basis(j % n, static_cast<int>(j / n)) = 0.0;
  }
  return m;
}

double dot(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b) { return (a * b).sum(); }

} // namespace

TEST_CASE("identity blocks without prior: CG solves in one iteration") {
  const Grid3 g(4, 4, 4);
  NewtonSystem sys;
  sys.grid = g;
  sys.hess = Eigen::ArrayXXd::Zero(g.voxels(), 3);
  sys.hess.col(0) = 1.0;
  sys.hess.col(2) = 1.0;  // identity 2x2 blocks (zero cross term)
  sys.lambda = Eigen::VectorXd::Zero(2);
  Eigen::ArrayXXd rhs(g.voxels(), 2);
  rhs.col(0) = random_field(g, 1);
  rhs.col(1) = random_field(g, 2);
  SolverConfig cfg;
  int iters = 0;
  const Eigen::ArrayXXd x = cg_solve(sys, rhs, Eigen::ArrayXXd::Zero(g.voxels(), 2), cfg, &iters);
  CHECK(iters == 1);
  CHECK((x - rhs).abs().maxCoeff() < 1e-12);
}

TEST_CASE("CG matches a dense direct solve on a random SPD system") {
  const Grid3 g(5, 5, 5);
  NewtonSystem sys;
  sys.grid = g;
  sys.hess = random_blocks(g, 1, 7);
  sys.lambda = Eigen::VectorXd::Constant(2, 0.3);
  sys.riw_uniform = 1.0;

  Eigen::ArrayXXd rhs(g.voxels(), 2);
  rhs.col(0) = random_field(g, 3);
  rhs.col(1) = random_field(g, 4);

  SolverConfig cfg;
  cfg.cg_tol = 1e-9;
  cfg.cg_max_iter = 2000;
  const Eigen::ArrayXXd x = cg_solve(sys, rhs, Eigen::ArrayXXd::Zero(g.voxels(), 2), cfg);

  const Eigen::MatrixXd m = dense_from_apply(sys);
  const Eigen::VectorXd expect =
      m.ldlt().solve(Eigen::Map<const Eigen::VectorXd>(rhs.data(), rhs.size()));
  const double err = (Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()) - expect).norm() /
                     expect.norm();
  CHECK(err < 1e-6);
}

TEST_CASE("warm start at the exact solution returns immediately") {
  const Grid3 g(4, 4, 4);
  NewtonSystem sys;
  sys.grid = g;
  sys.hess = random_blocks(g, 1, 9);
  sys.lambda = Eigen::VectorXd::Constant(2, 0.1);
  Eigen::ArrayXXd truth(g.voxels(), 2);
  truth.col(0) = random_field(g, 5);
  truth.col(1) = random_field(g, 6);
  const Eigen::ArrayXXd rhs = sys.apply(truth);
  SolverConfig cfg;
  int iters = -1;
  double resid = 1.0;
  cg_solve(sys, rhs, truth, cfg, &iters, &resid);
  CHECK(iters == 0);
  CHECK(resid < cfg.cg_tol);
}

TEST_CASE("CG residual norms are non-increasing") {
  const Grid3 g(5, 4, 4);
  NewtonSystem sys;
  sys.grid = g;
  sys.hess = random_blocks(g, 2, 11);
  sys.lambda = Eigen::VectorXd::Constant(3, 0.5);
  Eigen::ArrayXXd rhs(g.voxels(), 3);
  for (int c = 0; c < 3; ++c) rhs.col(c) = random_field(g, 20 + c);

  double prev = std::numeric_limits<double>::infinity();
  for (int cap = 1; cap <= 25; ++cap) {
    SolverConfig cfg;
    cfg.cg_tol = 1e-300;
    cfg.cg_max_iter = cap;
    double resid = 0.0;
    cg_solve(sys, rhs, Eigen::ArrayXXd::Zero(g.voxels(), 3), cfg, nullptr, &resid);
    CHECK(resid <= prev + 1e-12);
    prev = resid;
  }
}

TEST_CASE("lambda = 0 V-cycle is the exact per-voxel block solve") {
  const Grid3 g(6, 6, 6);
  NewtonSystem sys;
  sys.grid = g;
  sys.hess = random_blocks(g, 2, 13);
  sys.lambda = Eigen::VectorXd::Zero(3);
  Eigen::ArrayXXd rhs(g.voxels(), 3);
  for (int c = 0; c < 3; ++c) rhs.col(c) = random_field(g, 30 + c);
  SolverConfig cfg;
  const Eigen::ArrayXXd x = vcycle_substitute(sys, rhs, cfg);
  const Eigen::ArrayXXd residual = rhs - sys.apply(x);
  CHECK(residual.abs().maxCoeff() < 1e-10 * rhs.abs().maxCoeff());
}

TEST_CASE("V-cycle contraction on the 33^3 membrane system") {
  // Poisson-like: H_d = delta I single channel, uniform weights.
  const Grid3 g(33, 33, 33);
  NewtonSystem sys;
  sys.grid = g;
  sys.hess = Eigen::ArrayXXd::Constant(g.voxels(), 1, 1e-2);
  sys.lambda = Eigen::VectorXd::Constant(1, 1.0);

  Eigen::ArrayXXd rhs(g.voxels(), 1);
  rhs.col(0) = random_field(g, 17);
  const double g0 = std::sqrt(dot(rhs, rhs));

  SolverConfig cfg;
  double prev = g0;
  for (int cycles = 1; cycles <= 4; ++cycles) {
    cfg.vcycles = cycles;
    double rel = 0.0;
    vcycle_substitute(sys, rhs, cfg, &rel);
    const double resid = rel * g0;
    CHECK(resid / prev < 0.2);  // contraction factor per cycle
    prev = resid;
  }
}

TEST_CASE("constants live in the near-null space") {
  const Grid3 g(9, 9, 9);
  const double delta = 1e-3;
  NewtonSystem sys;
  sys.grid = g;
  sys.hess = Eigen::ArrayXXd::Constant(g.voxels(), 1, delta);
  sys.lambda = Eigen::VectorXd::Constant(1, 2.0);
  Eigen::ArrayXXd rhs = Eigen::ArrayXXd::Constant(g.voxels(), 1, 3.0);
  SolverConfig cfg;
  cfg.cg_tol = 1e-10;
  cfg.cg_max_iter = 5000;
  auto [x, report] = solve_newton_system(sys, rhs, cfg);
  // membrane annihilates constants, so x = g / delta
  CHECK((x - 3.0 / delta).abs().maxCoeff() < 1e-6 * (3.0 / delta));

  const Eigen::MatrixXd m = dense_from_apply(sys);
  const Eigen::VectorXd expect =
      m.ldlt().solve(Eigen::Map<const Eigen::VectorXd>(rhs.data(), rhs.size()));
  const double err = (Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()) - expect).norm() /
                     expect.norm();
  CHECK(err < 1e-6);
}

TEST_CASE("full solve matches the dense oracle on a JTV-weighted 9^3 system") {
  const Grid3 g(9, 9, 9, 0.8, 0.8, 0.8);
  NewtonSystem sys;
  sys.grid = g;
  sys.hess = random_blocks(g, 2, 19);
  sys.lambda = Eigen::VectorXd::Constant(3, 1.5);
  sys.lambda[2] = 0.4;
  Eigen::ArrayXd riw = (random_field(g, 23).abs() + 0.2).inverse();
  sys.riw = &riw;

  Eigen::ArrayXXd rhs(g.voxels(), 3);
  for (int c = 0; c < 3; ++c) rhs.col(c) = random_field(g, 40 + c);

  SolverConfig cfg;
  cfg.cg_tol = 1e-6;
  cfg.cg_max_iter = 3000;
  auto [x, report] = solve_newton_system(sys, rhs, cfg);
  CHECK(report.cg_residual < cfg.cg_tol);

  const Eigen::MatrixXd m = dense_from_apply(sys);
  const Eigen::VectorXd expect =
      m.ldlt().solve(Eigen::Map<const Eigen::VectorXd>(rhs.data(), rhs.size()));
  const double err = (Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()) - expect).norm() /
                     expect.norm();
  CHECK(err < 1e-5);  // solution agrees to (around) the CG tolerance
}

TEST_CASE("substitute system dominates the weighted prior") {
  const Grid3 g(7, 6, 5);
  NewtonSystem true_sys;
  true_sys.grid = g;
  true_sys.hess = Eigen::ArrayXXd::Zero(g.voxels(), 3);
  true_sys.lambda = Eigen::VectorXd::Constant(2, 2.0);
  Eigen::ArrayXd riw = (random_field(g, 29).abs() + 0.05).inverse();
  true_sys.riw = &riw;

  NewtonSystem sub = true_sys;
  sub.riw = nullptr;
  sub.riw_uniform = riw.maxCoeff();  // 1/min(w)

  for (int trial = 0; trial < 100; ++trial) {
    Eigen::ArrayXXd x(g.voxels(), 2);
    x.col(0) = random_field(g, 600 + trial, 0);
    x.col(1) = random_field(g, 600 + trial, 1);
    const double quad_sub = dot(x, sub.apply(x));
    const double quad_true = dot(x, true_sys.apply(x));
    CHECK(quad_sub >= quad_true - 1e-10 * std::abs(quad_true));
  }
}

TEST_CASE("both operators are symmetric") {
  const Grid3 g(6, 5, 4);
  NewtonSystem sys;
  sys.grid = g;
  sys.hess = random_blocks(g, 1, 31);
  sys.lambda = Eigen::VectorXd::Constant(2, 0.7);
  Eigen::ArrayXd riw = (random_field(g, 37).abs() + 0.1).inverse();

  for (bool weighted : {false, true}) {
    sys.riw = weighted ? &riw : nullptr;
    Eigen::ArrayXXd a(g.voxels(), 2), b(g.voxels(), 2);
    for (int c = 0; c < 2; ++c) {
      a.col(c) = random_field(g, 50 + c);
      b.col(c) = random_field(g, 60 + c);
    }
    const double ab = dot(a, sys.apply(b));
    const double ba = dot(b, sys.apply(a));
    CHECK(ab == doctest::Approx(ba).epsilon(1e-10));
  }
}

TEST_CASE("restriction and prolongation are adjoint up to the volume factor") {
  const Grid3 fine(9, 8, 7);
  const Grid3 coarse = mg_coarsen(fine);
  const Eigen::ArrayXd a = random_field(fine, 41);
  Eigen::ArrayXd b = random_field(coarse, 43);
  const double lhs = (mg_restrict(a, fine, coarse) * b).sum();
  const double rhs = (a * mg_prolong(b, coarse, fine)).sum();
  CHECK(8.0 * lhs == doctest::Approx(rhs).epsilon(1e-13));
}

TEST_CASE("warm-started CG needs no more iterations than a zero start") {
  const Grid3 g(12, 12, 12);
  NewtonSystem sys;
  sys.grid = g;
  sys.hess = random_blocks(g, 1, 47);
  sys.lambda = Eigen::VectorXd::Constant(2, 1.0);
  sys.riw_uniform = 1.0;  // uniform weights: substitute == true system
  Eigen::ArrayXXd rhs(g.voxels(), 2);
  for (int c = 0; c < 2; ++c) rhs.col(c) = random_field(g, 70 + c);

  SolverConfig cfg;
  auto [x, report] = solve_newton_system(sys, rhs, cfg);
  int zero_iters = 0;
  cg_solve(sys, rhs, Eigen::ArrayXXd::Zero(g.voxels(), 2), cfg, &zero_iters);
  CHECK(report.cg_iterations <= zero_iters);
}
