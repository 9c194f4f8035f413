#include "mpm/map_fit.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "mpm/loglinear.hpp"
#include "mpm/projection.hpp"

namespace mpm {

namespace {

/// Sum of squared residuals over all series/echoes, each scaled by
/// 1/(2 sigma_c^2); the maps are pulled through each series' pose once.
double data_objective(const ParameterMaps& maps, const Dataset& d) {
  double total = 0.0;
  for (int c = 0; c < d.contrasts(); ++c) {
    const ContrastSeries& series = d.series[c];
    const VoxelAffine map = pull_voxel_map(maps.grid, series.pose, series.native_grid);
    const Eigen::ArrayXd theta_n = pull_affine(maps.theta(c), maps.grid, map, series.native_grid);
    const Eigen::ArrayXd r_n = pull_affine(maps.decay(), maps.grid, map, series.native_grid);
    const double inv2s2 = 0.5 / (series.sigma * series.sigma);
    for (const EchoVolume& echo : series.echoes) {
      const Eigen::ArrayXd pred = (theta_n - echo.te * r_n).exp();
      const double term = inv2s2 * (echo.data - pred).square().sum();
      if (!std::isfinite(term)) {
        std::ostringstream os;
        os << "objective: non-finite data term @ series " << c << " te " << echo.te;
        throw NumericError(os.str());
      }
      total += term;
    }
  }
  return total;
}

double prior_quadratic(const ParameterMaps& maps, const WeightMap* weights, const RegConfig& reg) {
  if (reg.mode == RegMode::none) return 0.0;
  const Eigen::ArrayXd q = jtv_quadratic(maps, reg);
  if (reg.mode == RegMode::tikhonov) return 0.5 * q.sum();
  return 0.5 * (q / weights->w).sum();
}

} // namespace

ObjectiveParts objective(const ParameterMaps& maps, const Dataset& d, const WeightMap* weights,
                         const FitConfig& cfg) {
  if (cfg.reg.mode == RegMode::jtv && !weights)
    throw NumericError("objective: JTV mode requires a weight map");
  ObjectiveParts parts;
  parts.data = data_objective(maps, d);
  parts.prior_quad = prior_quadratic(maps, weights, cfg.reg);
  if (cfg.reg.mode == RegMode::jtv) parts.prior_weight = 0.5 * weights->w.sum();
  parts.total = parts.data + parts.prior_quad + parts.prior_weight;
  if (!std::isfinite(parts.total)) throw NumericError("objective: non-finite prior term");
  return parts;
}

std::pair<Eigen::ArrayXXd, Eigen::ArrayXXd> grad_and_fisher(const ParameterMaps& maps,
                                                            const Dataset& d,
                                                            const WeightMap* weights,
                                                            const FitConfig& cfg) {
  if (cfg.reg.mode == RegMode::jtv && !weights)
    throw NumericError("grad_and_fisher: JTV mode requires a weight map");
  const int C = d.contrasts();
  const int K = C + 1;
  const std::ptrdiff_t n = maps.grid.voxels();
  Eigen::ArrayXXd grad = Eigen::ArrayXXd::Zero(n, K);
  Eigen::ArrayXXd hess = Eigen::ArrayXXd::Zero(n, 2 * C + 1);

  for (int c = 0; c < C; ++c) {
    const ContrastSeries& series = d.series[c];
    const VoxelAffine map = pull_voxel_map(maps.grid, series.pose, series.native_grid);
    const Eigen::ArrayXd theta_n = pull_affine(maps.theta(c), maps.grid, map, series.native_grid);
    const Eigen::ArrayXd r_n = pull_affine(maps.decay(), maps.grid, map, series.native_grid);
    const double inv_s2 = 1.0 / (series.sigma * series.sigma);
    for (const EchoVolume& echo : series.echoes) {
      const double t = echo.te;
      const Eigen::ArrayXd pred = (theta_n - t * r_n).exp();
      if (!pred.isFinite().all())
        throw NumericError("grad_and_fisher: non-finite prediction @ series " + std::to_string(c));
      // gradient: push((pred - s) pred / sigma^2) into the intercept channel,
      // -t times the same into the decay channel
      const Eigen::ArrayXd resid = (pred - echo.data) * pred * inv_s2;
      const Eigen::ArrayXd pushed = push_affine(resid, series.native_grid, map, maps.grid);
      grad.col(c) += pushed;
      grad.col(K - 1) -= t * pushed;
      // Fisher blocks: diag(Psi^T pred^2) (x) [[1,-t],[-t,t^2]] / sigma^2
      const Eigen::ArrayXd q =
          push_affine((pred * pred).eval(), series.native_grid, map, maps.grid) * inv_s2;
      hess.col(c) += q;
      hess.col(C + c) -= t * q;
      hess.col(2 * C) += t * t * q;
    }
  }

  // prior gradient: lambda_c L theta_c with the mode's weights
  if (cfg.reg.mode != RegMode::none) {
    Eigen::ArrayXd riw;
    const Eigen::ArrayXd* riw_ptr = nullptr;
    if (cfg.reg.mode == RegMode::jtv) {
      riw = weights->w.inverse();
      riw_ptr = &riw;
    }
    for (int c = 0; c < K; ++c) {
      Eigen::ArrayXd chan = grad.col(c);
      Eigen::ArrayXd xc = maps.values.col(c);
      membrane_accumulate(xc, maps.grid, riw_ptr, 1.0, cfg.reg.lambda[c], chan);
      grad.col(c) = chan;
    }
  }
  return {std::move(grad), std::move(hess)};
}

std::pair<ParameterMaps, FitReport> fit_map(const Dataset& d, const FitConfig& cfg,
                                            const std::optional<ParameterMaps>& init) {
  const auto t_start = std::chrono::steady_clock::now();
  const auto diagnostics = validate_dataset(d);
  if (!diagnostics.empty()) throw DataError("fit_map: invalid dataset: " + diagnostics.front());
  const int C = d.contrasts();
  if (cfg.reg.mode != RegMode::none && cfg.reg.lambda.size() != C + 1)
    throw NumericError("fit_map: lambda must have C+1 entries");

  ParameterMaps maps = init ? *init : fit_loglinear(d).maps;
  maps.decay() = maps.decay().max(0.0).min(cfg.r_max);

  FitReport report;
  const bool jtv = cfg.reg.mode == RegMode::jtv;
  WeightMap weights;
  double current = 0.0;
  double data_cached = -1.0;  // data term carried over from an accepted step

  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    // Closed-form weight update (JTV), then the bound objective at the
    // updated weights; for fixed weights this is the Tikhonov objective.
    if (jtv) weights = jtv_energy_and_weights(maps, cfg.reg).second;
    ObjectiveParts parts;
    if (data_cached >= 0.0) {
      parts.data = data_cached;
      parts.prior_quad = prior_quadratic(maps, jtv ? &weights : nullptr, cfg.reg);
      if (jtv) parts.prior_weight = 0.5 * weights.w.sum();
      parts.total = parts.data + parts.prior_quad + parts.prior_weight;
    } else {
      parts = objective(maps, d, jtv ? &weights : nullptr, cfg);
    }

    const double previous = current;
    current = parts.total;
    report.objective.push_back(parts.total);
    report.data_term.push_back(parts.data);
    report.prior_term.push_back(parts.prior_quad + parts.prior_weight);

    if (outer > 0 && previous - current < cfg.objective_tol * std::abs(previous)) {
      report.status = "converged";
      break;
    }

    bool stepped = false;
    for (int newton = 0; newton < cfg.max_newton_per_outer; ++newton) {
      auto [grad, hess] = grad_and_fisher(maps, d, jtv ? &weights : nullptr, cfg);
      if (grad.abs().maxCoeff() <= cfg.gradient_tol * (1.0 + std::abs(current))) {
        report.status = stepped || outer > 0 ? "converged" : "stationary";
        report.outer_iterations = outer;
        report.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        return {std::move(maps), std::move(report)};
      }

      NewtonSystem sys;
      sys.grid = maps.grid;
      sys.hess = std::move(hess);
      sys.lambda = cfg.reg.mode == RegMode::none ? Eigen::VectorXd::Zero(C + 1) : cfg.reg.lambda;
      Eigen::ArrayXd riw;
      if (jtv) {
        riw = weights.w.inverse();
        sys.riw = &riw;
      }
      auto [step, solve_report] = solve_newton_system(sys, grad, cfg.solver);
      report.cg_iterations.push_back(solve_report.cg_iterations);

      // Backtracking halving: accept only a strict decrease of the bound
      // objective at the fixed weights.
      double alpha = 1.0;
      bool accepted = false;
      for (int h = 0; h <= cfg.max_halvings; ++h, alpha *= 0.5) {
        ParameterMaps trial = maps;
        trial.values -= alpha * step;
        trial.decay() = trial.decay().max(0.0).min(cfg.r_max);
        double trial_data;
        try {
          trial_data = data_objective(trial, d);
        } catch (const NumericError&) {
          continue;  // overflowing trial step; halve further
        }
        const double trial_total = trial_data +
                                   prior_quadratic(trial, jtv ? &weights : nullptr, cfg.reg) +
                                   (jtv ? 0.5 * weights.w.sum() : 0.0);
        if (trial_total < current) {
          maps = std::move(trial);
          current = trial_total;
          data_cached = trial_data;
          accepted = true;
          stepped = true;
          break;
        }
      }
      if (!accepted) {
        report.status = "stalled";
        report.outer_iterations = outer + 1;
        report.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        return {std::move(maps), std::move(report)};
      }
    }
    report.outer_iterations = outer + 1;
  }

  if (report.status.empty()) report.status = "max_outer";
  // Final value of the bound objective at freshly updated weights.
  if (jtv) weights = jtv_energy_and_weights(maps, cfg.reg).second;
  const ObjectiveParts last = objective(maps, d, jtv ? &weights : nullptr, cfg);
  report.objective.push_back(last.total);
  report.data_term.push_back(last.data);
  report.prior_term.push_back(last.prior_quad + last.prior_weight);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return {std::move(maps), std::move(report)};
}

} // namespace mpm
