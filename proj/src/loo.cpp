#include "mpm/loo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "mpm/projection.hpp"
#include "mpm/rice.hpp"
#include "mpm/signal.hpp"

namespace mpm {

namespace {

Dataset without_echo(const Dataset& d, int series_index, int echo_index) {
  Dataset reduced = d;
  auto& echoes = reduced.series[series_index].echoes;
  echoes.erase(echoes.begin() + echo_index);
  return reduced;
}

struct Cell {
  int repeat, series, echo;
};

} // namespace

ScoreTable run_loo(const std::vector<Dataset>& repeats, const std::vector<LooMethod>& methods) {
  if (repeats.empty()) throw DataError("run_loo: no datasets");
  if (methods.empty()) throw DataError("run_loo: no methods");
  static const std::vector<std::string> kMasks = {"gm", "wm", "csf"};
  for (const Dataset& d : repeats)
    for (const std::string& name : kMasks)
      if (!d.masks.count(name)) throw DataError("run_loo: dataset is missing mask '" + name + "'");

  std::vector<Cell> cells;
  for (int rep = 0; rep < static_cast<int>(repeats.size()); ++rep)
    for (int s = 0; s < repeats[rep].contrasts(); ++s)
      for (int e = 0; e < static_cast<int>(repeats[rep].series[s].echoes.size()); ++e)
        cells.push_back({rep, s, e});

  const std::size_t masks_per_cell = kMasks.size() + 1;  // + parenchyma
  const std::size_t rows_per_cell = methods.size() * masks_per_cell;
  ScoreTable table;
  table.rows.resize(cells.size() * rows_per_cell);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(cells.size()); ++ci) {
    const Cell& cell = cells[ci];
    const Dataset& full = repeats[cell.repeat];
    const ContrastSeries& series = full.series[cell.series];
    const EchoVolume& held_out = series.echoes[cell.echo];
    const Dataset reduced = without_echo(full, cell.series, cell.echo);

    // Masks transferred to the series' native space once per cell.
    std::vector<Eigen::Array<bool, Eigen::Dynamic, 1>> native_masks;
    for (const std::string& name : kMasks)
      native_masks.push_back(series.pose.is_identity() && series.native_grid == full.recon_grid
                                 ? full.masks.at(name)
                                 : pull_mask(full.masks.at(name), full.recon_grid, series.pose,
                                             series.native_grid));

    for (std::size_t m = 0; m < methods.size(); ++m) {
      LooRow* rows = &table.rows[ci * rows_per_cell + m * masks_per_cell];
      for (std::size_t k = 0; k < masks_per_cell; ++k) {
        rows[k].repeat = cell.repeat;
        rows[k].method = methods[m].name;
        rows[k].contrast = to_string(series.meta.kind);
        rows[k].echo_index = cell.echo;
        rows[k].mask = k < kMasks.size() ? kMasks[k] : "parenchyma";
      }
      try {
        const ParameterMaps fitted = methods[m].fit(reduced);
        const Eigen::ArrayXd predicted =
            predict_echo(fitted, cell.series, held_out.te, series.pose, series.native_grid);
        for (std::size_t k = 0; k < kMasks.size(); ++k) {
          double sum = 0.0;
          std::int64_t count = 0;
          const auto& mask = native_masks[k];
          for (std::ptrdiff_t i = 0; i < mask.size(); ++i) {
            if (!mask[i]) continue;
            const double x = held_out.data[i];
            if (!(x > 0.0)) continue;  // zero magnitude carries no density
            sum += rice_logpdf(x, predicted[i], series.sigma);
            ++count;
          }
          rows[k].loglik = sum;
          rows[k].n_voxels = count;
        }
        // parenchyma = gm + wm, exactly
        rows[kMasks.size()].loglik = rows[0].loglik + rows[1].loglik;
        rows[kMasks.size()].n_voxels = rows[0].n_voxels + rows[1].n_voxels;
      } catch (const std::exception&) {
        for (std::size_t k = 0; k < masks_per_cell; ++k) rows[k].missing = true;
      }
    }
  }
  return table;
}

void zscores(ScoreTable& table, bool pooled) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const LooRow& row = table.rows[i];
    if (row.missing) continue;
    const std::string key =
        pooled ? row.mask : row.mask + "|" + row.contrast + "|" + std::to_string(row.echo_index);
    groups[key].push_back(i);
  }
  for (const auto& [key, members] : groups) {
    if (members.size() < 2) {
      for (std::size_t i : members) table.rows[i].z = 0.0;
      table.warnings.push_back("z-score group '" + key + "' has fewer than 2 entries; z = 0");
      continue;
    }
    double mean = 0.0;
    for (std::size_t i : members) mean += table.rows[i].loglik;
    mean /= static_cast<double>(members.size());
    double var = 0.0;
    for (std::size_t i : members) {
      const double dev = table.rows[i].loglik - mean;
      var += dev * dev;
    }
    var /= static_cast<double>(members.size());  // population convention
    if (var <= 0.0) {
      for (std::size_t i : members) table.rows[i].z = 0.0;
      table.warnings.push_back("z-score group '" + key + "' has zero variance; z = 0");
      continue;
    }
    const double sd = std::sqrt(var);
    for (std::size_t i : members) table.rows[i].z = (table.rows[i].loglik - mean) / sd;
  }
}

void write_scores_csv(const ScoreTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scores csv '" + path + "'");
  out << "repeat,method,contrast,echo_index,mask,loglik,n_voxels,z\n";
  out << std::setprecision(17);
  for (const LooRow& row : table.rows) {
    if (row.missing) {
      out << row.repeat << ',' << row.method << ',' << row.contrast << ',' << row.echo_index << ','
          << row.mask << ",,,\n";
      continue;
    }
    out << row.repeat << ',' << row.method << ',' << row.contrast << ',' << row.echo_index << ','
        << row.mask << ',' << row.loglik << ',' << row.n_voxels << ',' << row.z << '\n';
  }
}

namespace {

std::pair<double, double> histogram_range(const std::string& name, const Eigen::ArrayXd& values) {
  if (name == "r1") return {0.0, 2.5};
  if (name == "r2s") return {0.0, 100.0};
  if (name == "mtsat") return {0.0, 0.05};
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::ptrdiff_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) continue;
    lo = std::min(lo, values[i]);
    hi = std::max(hi, values[i]);
  }
  if (!(hi > lo)) { lo = 0.0; hi = 1.0; }
  return {lo, hi};
}

} // namespace

GroupStats group_stats(const std::vector<std::map<std::string, Eigen::ArrayXd>>& map_sets,
                       const std::map<std::string, Eigen::Array<bool, Eigen::Dynamic, 1>>& masks) {
  if (map_sets.size() < 2) throw DataError("group_stats: need at least 2 repeats");
  GroupStats stats;
  stats.repeats = static_cast<int>(map_sets.size());
  const double n = static_cast<double>(map_sets.size());

  for (const auto& [name, first] : map_sets.front()) {
    const std::ptrdiff_t nvox = first.size();
    for (const auto& ms : map_sets)
      if (!ms.count(name) || ms.at(name).size() != nvox)
        throw DataError("group_stats: map '" + name + "' missing or mismatched across repeats");

    MapStats m;
    Eigen::ArrayXd mean = Eigen::ArrayXd::Zero(nvox);
    for (const auto& ms : map_sets) mean += ms.at(name);
    mean /= n;
    Eigen::ArrayXd var = Eigen::ArrayXd::Zero(nvox);
    for (const auto& ms : map_sets) var += (ms.at(name) - mean).square();
    m.sd_map = (var / n).sqrt();  // population (N) convention

    for (const auto& [mask_name, mask] : masks) {
      if (mask.size() != nvox)
        throw DataError("group_stats: mask '" + mask_name + "' does not match map size");
      double sd_sum = 0.0, value_sum = 0.0;
      std::int64_t count = 0;
      for (std::ptrdiff_t i = 0; i < nvox; ++i) {
        if (!mask[i] || !std::isfinite(m.sd_map[i]) || !std::isfinite(mean[i])) continue;
        sd_sum += m.sd_map[i];
        value_sum += mean[i];
        ++count;
      }
      m.mask_mean_sd[mask_name] = count ? sd_sum / count : 0.0;
      m.mask_mean_value[mask_name] = count ? value_sum / count : 0.0;

      Histogram hist;
      std::tie(hist.lo, hist.hi) = histogram_range(name, mean);
      hist.counts = Eigen::ArrayXd::Zero(100);
      const double scale = 100.0 / (hist.hi - hist.lo);
      for (std::ptrdiff_t i = 0; i < nvox; ++i) {
        if (!mask[i]) continue;
        const double v = mean[i];
        if (!std::isfinite(v)) { ++hist.undefined; continue; }
        if (v < hist.lo) { ++hist.underflow; continue; }
        if (v >= hist.hi) {
          if (v == hist.hi) { hist.counts[99] += 1.0; continue; }
          ++hist.overflow;
          continue;
        }
        hist.counts[std::min<int>(static_cast<int>((v - hist.lo) * scale), 99)] += 1.0;
      }
      m.mask_histograms[mask_name] = std::move(hist);
    }
    stats.maps[name] = std::move(m);
  }
  return stats;
}

} // namespace mpm
