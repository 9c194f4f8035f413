#ifndef MPM_LOO_HPP
#define MPM_LOO_HPP

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mpm/volume.hpp"

namespace mpm {

/// One scored cell x mask: Rice loglikelihood of the left-out echo given its
/// prediction, summed over in-mask voxels.
struct LooRow {
  int repeat = 0;
  std::string method;
  std::string contrast;
  int echo_index = 0;
  std::string mask;
  double loglik = 0.0;
  std::int64_t n_voxels = 0;
  double z = std::numeric_limits<double>::quiet_NaN();
  bool missing = false;  // the fit for this cell failed
};

struct ScoreTable {
  std::vector<LooRow> rows;
  std::vector<std::string> warnings;
};

using FitFunction = std::function<ParameterMaps(const Dataset&)>;

struct LooMethod {
  std::string name;
  FitFunction fit;
};

/// Leave-one-echo-out: for every repeat, method and (contrast, echo) pair,
/// refits without that echo, predicts it through the series pose and scores
/// the observed echo under the Rice likelihood within each mask (gm/wm/csf
/// plus their parenchyma aggregate). Cells run in parallel; a fit failure
/// marks the cell missing and the run continues.
ScoreTable run_loo(const std::vector<Dataset>& repeats, const std::vector<LooMethod>& methods);

/// Z-scores per normalisation group: by default each (mask, contrast,
/// echo index) cell is normalised across method x repeat; pooled grouping
/// normalises across everything within a mask. Population S.D.; degenerate
/// groups get z = 0 and a warning.
void zscores(ScoreTable& table, bool pooled = false);

void write_scores_csv(const ScoreTable& table, const std::string& path);

struct Histogram {
  double lo = 0.0, hi = 0.0;
  Eigen::ArrayXd counts;  // 100 bins
  std::int64_t underflow = 0, overflow = 0, undefined = 0;
  /// Total mass including the overflow bins; equals the in-mask voxel count.
  std::int64_t total() const {
    return static_cast<std::int64_t>(counts.sum()) + underflow + overflow + undefined;
  }
};

struct MapStats {
  Eigen::ArrayXd sd_map;  // voxelwise across-repeat S.D. (population convention)
  std::map<std::string, double> mask_mean_sd;
  std::map<std::string, double> mask_mean_value;
  std::map<std::string, Histogram> mask_histograms;  // of the across-repeat mean
};

struct GroupStats {
  int repeats = 0;
  std::map<std::string, MapStats> maps;
};

/// Across-repeat variability and per-mask distribution summaries for named
/// map stacks (all repeats must provide the same names/sizes). Voxels that
/// are NaN in any repeat are excluded from mask summaries.
GroupStats group_stats(const std::vector<std::map<std::string, Eigen::ArrayXd>>& map_sets,
                       const std::map<std::string, Eigen::Array<bool, Eigen::Dynamic, 1>>& masks);

} // namespace mpm

#endif
