// Command-line front end: phantom generation, ESTATICS fits, quantitative
// maps, leave-one-echo-out scoring, group statistics and noise estimation.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "mpm/loglinear.hpp"
#include "mpm/loo.hpp"
#include "mpm/manifest.hpp"
#include "mpm/map_fit.hpp"
#include "mpm/nifti.hpp"
#include "mpm/phantom.hpp"
#include "mpm/rice.hpp"
#include "mpm/signal.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct FitOptions {
  std::string method = "jtv";
  double lambda_intercept = 5e3;
  double lambda_decay = 10.0;
  bool weighted = false;
  int max_outer = 30;
  double tol = 1e-6;
  int cg_max_iter = 100;
};

void add_fit_options(CLI::App* cmd, FitOptions& opt, bool with_method) {
  if (with_method)
    cmd->add_option("--method", opt.method, "log, tkh or jtv")->check(CLI::IsMember({"log", "tkh", "jtv"}));
  cmd->add_option("--lambda-intercept", opt.lambda_intercept, "regularisation factor for the intercepts");
  cmd->add_option("--lambda-decay", opt.lambda_decay, "regularisation factor for the decay (1/s)");
  cmd->add_flag("--weighted", opt.weighted, "variance-weighted loglinear fit");
  cmd->add_option("--max-outer", opt.max_outer, "outer iteration cap for nonlinear fits");
  cmd->add_option("--tol", opt.tol, "relative objective decrease tolerance");
  cmd->add_option("--cg-max-iter", opt.cg_max_iter, "conjugate-gradient iteration cap per Newton step");
}

mpm::FitConfig make_fit_config(const FitOptions& opt, int contrasts) {
  mpm::FitConfig cfg;
  cfg.max_outer = opt.max_outer;
  cfg.objective_tol = opt.tol;
  cfg.solver.cg_max_iter = opt.cg_max_iter;
  if (opt.method == "tkh")
    cfg.reg = mpm::RegConfig::make(mpm::RegMode::tikhonov, contrasts, opt.lambda_intercept, opt.lambda_decay);
  else if (opt.method == "jtv")
    cfg.reg = mpm::RegConfig::make(mpm::RegMode::jtv, contrasts, opt.lambda_intercept, opt.lambda_decay);
  return cfg;
}

mpm::ParameterMaps run_method(const std::string& method, const FitOptions& opt, const mpm::Dataset& d,
                              mpm::FitReport* report = nullptr) {
  if (method == "log") return mpm::fit_loglinear(d, opt.weighted).maps;
  FitOptions local = opt;
  local.method = method;
  auto [maps, rep] = mpm::fit_map(d, make_fit_config(local, d.contrasts()));
  if (report) *report = rep;
  return maps;
}

std::string theta_filename(mpm::Contrast kind) {
  std::string name = mpm::to_string(kind);
  for (char& ch : name) ch = static_cast<char>(std::tolower(ch));
  return "theta_" + name + ".nii";
}

void require_valid(const mpm::Dataset& d) {
  const auto problems = mpm::validate_dataset(d);
  if (!problems.empty()) {
    std::string msg = "invalid dataset:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw mpm::DataError(msg);
  }
}

int cmd_phantom(const std::string& out_dir, int size, double spacing, std::uint64_t seed,
                std::uint64_t noise_seed, double sigma, bool motion) {
  const mpm::Grid3 grid(size, size, size, spacing, spacing, spacing);
  const mpm::PhantomTruth truth = mpm::make_phantom_maps(grid, seed);
  const auto protocol = mpm::default_protocol();
  std::vector<double> sigmas(protocol.size(), sigma);
  std::vector<mpm::RigidTransform> poses(protocol.size());
  if (motion) poses = mpm::random_motion(grid, protocol.size(), noise_seed);
  const mpm::Dataset d = mpm::simulate_dataset(truth, protocol, sigmas, poses, std::nullopt, noise_seed);
  mpm::save_dataset(out_dir, d);
  // Ground-truth volumes alongside, for external comparisons.
  mpm::write_volume((fs::path(out_dir) / "truth_m0.nii").string(), truth.m0, grid);
  mpm::write_volume((fs::path(out_dir) / "truth_r1.nii").string(), truth.r1, grid);
  mpm::write_volume((fs::path(out_dir) / "truth_r2s.nii").string(), truth.r2s, grid);
  mpm::write_volume((fs::path(out_dir) / "truth_mtsat.nii").string(), truth.mtsat, grid);
  std::cout << "wrote phantom dataset to " << out_dir << "\n";
  return 0;
}

int cmd_fit(const std::string& manifest, const FitOptions& opt, const std::string& out_dir) {
  mpm::LoadedDataset loaded = mpm::load_manifest(manifest);
  mpm::ensure_sigma(loaded);
  require_valid(loaded.dataset);
  const mpm::Dataset& d = loaded.dataset;

  mpm::FitReport report;
  const mpm::ParameterMaps maps = run_method(opt.method, opt, d, &report);

  fs::create_directories(out_dir);
  for (int c = 0; c < d.contrasts(); ++c)
    mpm::write_volume((fs::path(out_dir) / theta_filename(d.series[c].meta.kind)).string(),
                      maps.theta(c).eval(), maps.grid);
  mpm::write_volume((fs::path(out_dir) / "r2s.nii").string(), maps.decay().eval(), maps.grid);

  json rep;
  rep["method"] = opt.method;
  rep["lambda_intercept"] = opt.lambda_intercept;
  rep["lambda_decay"] = opt.lambda_decay;
  rep["status"] = opt.method == "log" ? "closed-form" : report.status;
  rep["outer_iterations"] = report.outer_iterations;
  rep["objective"] = report.objective;
  rep["data_term"] = report.data_term;
  rep["prior_term"] = report.prior_term;
  rep["cg_iterations"] = report.cg_iterations;
  rep["wall_seconds"] = report.wall_seconds;
  for (std::size_t c = 0; c < d.series.size(); ++c)
    rep["sigma"].push_back({{"contrast", mpm::to_string(d.series[c].meta.kind)},
                            {"value", d.series[c].sigma},
                            {"source", loaded.sigma_from_manifest[c] ? "manifest" : "rice-mixture"}});
  std::ofstream out(fs::path(out_dir) / "report.json");
  out << rep.dump(2) << "\n";
  std::cout << "wrote fit to " << out_dir << "\n";
  return 0;
}

int cmd_maps(const std::string& fit_dir, const std::string& manifest, const std::string& out_dir) {
  mpm::LoadedDataset loaded = mpm::load_manifest(manifest);
  mpm::ensure_sigma(loaded);
  const mpm::Dataset& d = loaded.dataset;

  mpm::ParameterMaps maps(d.recon_grid, d.contrasts());
  for (int c = 0; c < d.contrasts(); ++c) {
    const mpm::NiftiVolume vol =
        mpm::read_volume((fs::path(fit_dir) / theta_filename(d.series[c].meta.kind)).string());
    if (vol.grid.voxels() != d.recon_grid.voxels())
      throw mpm::DataError("maps: theta volume does not match the manifest recon grid");
    maps.theta(c) = vol.scalar();
  }
  maps.decay() = mpm::read_volume((fs::path(fit_dir) / "r2s.nii").string()).scalar();

  const mpm::QuantMaps q = mpm::compute_quantitative_maps(maps, d);
  fs::create_directories(out_dir);
  mpm::write_volume((fs::path(out_dir) / "r1.nii").string(), q.r1, q.grid);
  mpm::write_volume((fs::path(out_dir) / "pd.nii").string(), q.a, q.grid);
  if (q.has_mtsat) mpm::write_volume((fs::path(out_dir) / "mtsat.nii").string(), q.mtsat, q.grid);
  mpm::write_volume((fs::path(out_dir) / "defined.nii").string(),
                    q.defined.cast<double>().eval(), q.grid);
  std::cout << "wrote quantitative maps to " << out_dir << "\n";
  return 0;
}

int cmd_loo(const std::vector<std::string>& manifests, const std::vector<std::string>& methods,
            const FitOptions& opt, bool pooled, const std::string& out_csv) {
  std::vector<mpm::Dataset> repeats;
  for (const std::string& path : manifests) {
    mpm::LoadedDataset loaded = mpm::load_manifest(path);
    mpm::ensure_sigma(loaded);
    require_valid(loaded.dataset);
    repeats.push_back(std::move(loaded.dataset));
  }
  std::vector<mpm::LooMethod> loo_methods;
  for (const std::string& name : methods)
    loo_methods.push_back({name, [name, &opt](const mpm::Dataset& d) {
                             return run_method(name, opt, d);
                           }});
  mpm::ScoreTable table = mpm::run_loo(repeats, loo_methods);
  mpm::zscores(table, pooled);
  for (const std::string& warning : table.warnings) std::cerr << "warning: " << warning << "\n";
  mpm::write_scores_csv(table, out_csv);
  std::cout << "wrote " << table.rows.size() << " score rows to " << out_csv << "\n";
  return 0;
}

int cmd_stats(const std::vector<std::string>& fit_dirs, const std::vector<std::string>& mask_specs,
              const std::string& out_json, const std::string& hist_csv) {
  if (fit_dirs.size() < 2) throw mpm::UsageError("stats: need at least 2 fit directories");
  static const std::vector<std::string> kCandidates = {"r2s.nii", "r1.nii", "pd.nii", "mtsat.nii"};
  std::vector<std::map<std::string, Eigen::ArrayXd>> map_sets(fit_dirs.size());
  mpm::Grid3 grid;
  for (std::size_t r = 0; r < fit_dirs.size(); ++r) {
    for (const std::string& file : kCandidates) {
      const fs::path path = fs::path(fit_dirs[r]) / file;
      if (!fs::exists(path)) continue;
      mpm::NiftiVolume vol = mpm::read_volume(path.string());
      grid = vol.grid;
      map_sets[r][file.substr(0, file.find('.'))] = vol.scalar();
    }
    if (map_sets[r].empty())
      throw mpm::DataError("stats: no recognised map volumes in '" + fit_dirs[r] + "'");
  }

  std::map<std::string, Eigen::Array<bool, Eigen::Dynamic, 1>> masks;
  for (const std::string& spec : mask_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw mpm::UsageError("stats: --masks expects name=path pairs");
    mpm::NiftiVolume vol = mpm::read_volume(spec.substr(eq + 1));
    masks[spec.substr(0, eq)] = vol.scalar() > 0.5;
  }
  if (masks.empty()) throw mpm::UsageError("stats: at least one mask is required");

  const mpm::GroupStats stats = mpm::group_stats(map_sets, masks);
  json root;
  root["repeats"] = stats.repeats;
  root["sd_convention"] = "population";
  for (const auto& [name, ms] : stats.maps) {
    json node;
    for (const auto& [mask, value] : ms.mask_mean_sd) node["mean_sd"][mask] = value;
    for (const auto& [mask, value] : ms.mask_mean_value) node["mean_value"][mask] = value;
    for (const auto& [mask, hist] : ms.mask_histograms) {
      node["histogram"][mask] = {{"lo", hist.lo},
                                 {"hi", hist.hi},
                                 {"underflow", hist.underflow},
                                 {"overflow", hist.overflow},
                                 {"undefined", hist.undefined},
                                 {"counts", std::vector<double>(hist.counts.data(),
                                                                hist.counts.data() + hist.counts.size())}};
    }
    root["maps"][name] = std::move(node);
  }
  std::ofstream out(out_json);
  if (!out) throw mpm::DataError("stats: cannot write '" + out_json + "'");
  out << root.dump(2) << "\n";

  if (!hist_csv.empty()) {
    std::ofstream hout(hist_csv);
    if (!hout) throw mpm::DataError("stats: cannot write '" + hist_csv + "'");
    hout << "map,mask,bin_lo,bin_hi,count\n";
    for (const auto& [name, ms] : stats.maps)
      for (const auto& [mask, hist] : ms.mask_histograms) {
        const double width = (hist.hi - hist.lo) / 100.0;
        for (int b = 0; b < 100; ++b)
          hout << name << ',' << mask << ',' << hist.lo + b * width << ',' << hist.lo + (b + 1) * width
               << ',' << hist.counts[b] << '\n';
      }
  }
  std::cout << "wrote stats to " << out_json << "\n";
  return 0;
}

int cmd_estimate_sigma(const std::string& manifest) {
  mpm::LoadedDataset loaded = mpm::load_manifest(manifest);
  for (const mpm::ContrastSeries& series : loaded.dataset.series) {
    const mpm::RiceMixtureFit fit = mpm::fit_rice_mixture(series.echoes.front().data);
    std::cout << mpm::to_string(series.meta.kind) << ": sigma = " << fit.sigma
              << " (nu = [" << fit.nu[0] << ", " << fit.nu[1] << "], pi = [" << fit.pi[0] << ", "
              << fit.pi[1] << "], " << fit.iterations << " iterations"
              << (fit.converged ? "" : ", not converged") << ")\n";
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-echo quantitative MRI fitting (ESTATICS with JTV/Tikhonov priors)"};
  app.require_subcommand(1);

  // phantom
  auto* phantom = app.add_subcommand("phantom", "generate a synthetic multi-echo dataset");
  std::string phantom_out;
  int phantom_size = 48;
  double phantom_spacing = 0.8, phantom_sigma = 7.0;
  std::uint64_t phantom_seed = 1;
  std::uint64_t phantom_noise_seed = 0;
  bool phantom_motion = false;
  phantom->add_option("--out", phantom_out, "output directory")->required();
  phantom->add_option("--size", phantom_size, "cubic grid size (>= 16)");
  phantom->add_option("--spacing", phantom_spacing, "voxel size in mm");
  phantom->add_option("--seed", phantom_seed, "random seed (anatomy and noise)");
  phantom->add_option("--noise-seed", phantom_noise_seed,
                      "separate noise/motion seed, for repeats of one anatomy (default: --seed)");
  phantom->add_option("--sigma", phantom_sigma, "Rician noise S.D. (0 = noise-free)");
  phantom->add_flag("--motion", phantom_motion, "apply small rigid poses to series 2+");

  // fit
  auto* fit = app.add_subcommand("fit", "fit parameter maps from a manifest");
  std::string fit_manifest, fit_out;
  FitOptions fit_opt;
  fit->add_option("--manifest", fit_manifest, "dataset manifest")->required();
  fit->add_option("--out", fit_out, "output directory")->required();
  add_fit_options(fit, fit_opt, true);

  // maps
  auto* maps = app.add_subcommand("maps", "derive R1/PD/MTsat from a fit");
  std::string maps_fit, maps_manifest, maps_out;
  maps->add_option("--fit", maps_fit, "fit directory (theta_*.nii, r2s.nii)")->required();
  maps->add_option("--manifest", maps_manifest, "dataset manifest")->required();
  maps->add_option("--out", maps_out, "output directory")->required();

  // loo
  auto* loo = app.add_subcommand("loo", "leave-one-echo-out cross-validation");
  std::vector<std::string> loo_manifests, loo_methods{"log", "tkh", "jtv"};
  std::string loo_out = "scores.csv";
  bool loo_pooled = false;
  FitOptions loo_opt;
  loo->add_option("--manifests", loo_manifests, "manifest per repeat")->required()->delimiter(',');
  loo->add_option("--methods", loo_methods, "methods to score")->delimiter(',');
  loo->add_option("--out", loo_out, "output CSV");
  loo->add_flag("--pooled-z", loo_pooled, "pool z-score normalisation across echoes/contrasts");
  add_fit_options(loo, loo_opt, false);

  // stats
  auto* stats = app.add_subcommand("stats", "across-repeat S.D. maps and histograms");
  std::vector<std::string> stats_fits, stats_masks;
  std::string stats_out = "stats.json", stats_hist;
  stats->add_option("--fits", stats_fits, "fit/map directories")->required()->delimiter(',');
  stats->add_option("--masks", stats_masks, "name=path mask volumes")->required()->delimiter(',');
  stats->add_option("--out", stats_out, "output JSON");
  stats->add_option("--hist-csv", stats_hist, "optional histogram CSV dump");

  // estimate-sigma
  auto* est = app.add_subcommand("estimate-sigma", "per-series Rice-mixture noise estimate");
  std::string est_manifest;
  est->add_option("--manifest", est_manifest, "dataset manifest")->required();

  try {
    app.parse(argc, argv);
    if (phantom->parsed())
      return cmd_phantom(phantom_out, phantom_size, phantom_spacing, phantom_seed,
                         phantom_noise_seed ? phantom_noise_seed : phantom_seed, phantom_sigma,
                         phantom_motion);
    if (fit->parsed()) return cmd_fit(fit_manifest, fit_opt, fit_out);
    if (maps->parsed()) return cmd_maps(maps_fit, maps_manifest, maps_out);
    if (loo->parsed()) return cmd_loo(loo_manifests, loo_methods, loo_opt, loo_pooled, loo_out);
    if (stats->parsed()) return cmd_stats(stats_fits, stats_masks, stats_out, stats_hist);
    if (est->parsed()) return cmd_estimate_sigma(est_manifest);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const mpm::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const mpm::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mpm::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
