#include "mpm/signal.hpp"

#include <cmath>
#include <sstream>

namespace mpm {

Eigen::ArrayXd predict_echo(const ParameterMaps& maps, int contrast, double te,
                            const RigidTransform& pose, const Grid3& native_grid) {
  if (te <= 0.0) throw NumericError("predict_echo: te must be > 0");
  const VoxelAffine map = pull_voxel_map(maps.grid, pose, native_grid);
  Eigen::ArrayXd theta = pull_affine(maps.theta(contrast), maps.grid, map, native_grid);
  Eigen::ArrayXd r = pull_affine(maps.decay(), maps.grid, map, native_grid);
  Eigen::ArrayXd s = (theta - te * r).exp();
  if (!s.isFinite().all()) {
    for (std::ptrdiff_t i = 0; i < s.size(); ++i) {
      if (!std::isfinite(s[i])) {
        std::ostringstream os;
        os << "predict_echo: non-finite prediction at voxel " << i << " (contrast " << contrast
           << ", te " << te << "); parameter maps are corrupted";
        throw NumericError(os.str());
      }
    }
  }
  return s;
}

namespace {

struct SeriesRef {
  int index = -1;
  double alpha = 0.0;
  double tr = 0.0;
};

SeriesRef find_series(const Dataset& d, Contrast kind) {
  SeriesRef ref;
  for (int c = 0; c < d.contrasts(); ++c) {
    if (d.series[c].meta.kind == kind) {
      if (ref.index >= 0)
        throw DataError("compute_quantitative_maps: more than one " + to_string(kind) + " series");
      ref.index = c;
      ref.alpha = d.series[c].meta.flip_angle;
      ref.tr = d.series[c].meta.tr;
    }
  }
  return ref;
}

} // namespace

QuantMaps compute_quantitative_maps(const ParameterMaps& maps, const Dataset& d) {
  const SeriesRef pd = find_series(d, Contrast::PDw);
  const SeriesRef t1 = find_series(d, Contrast::T1w);
  const SeriesRef mt = find_series(d, Contrast::MTw);
  if (pd.index < 0 || t1.index < 0)
    throw DataError("compute_quantitative_maps: needs exactly one PDw and one T1w series");

  const std::ptrdiff_t n = maps.grid.voxels();
  QuantMaps q;
  q.grid = maps.grid;
  q.r1.resize(n);
  q.a.resize(n);
  q.defined = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n, true);
  q.has_mtsat = mt.index >= 0;
  if (q.has_mtsat) q.mtsat.resize(n);

  Eigen::ArrayXd b1 = d.b1_map ? *d.b1_map : Eigen::ArrayXd::Ones(n);
  const Eigen::ArrayXd spd = maps.theta(pd.index).exp();
  const Eigen::ArrayXd st1 = maps.theta(t1.index).exp();
  const Eigen::ArrayXd apd = b1 * pd.alpha;
  const Eigen::ArrayXd at1 = b1 * t1.alpha;

  // r1 = 1/2 (S_T1 a_T1/TR_T1 - S_PD a_PD/TR_PD) / (S_PD/a_PD - S_T1/a_T1)
  Eigen::ArrayXd r1_num = 0.5 * (st1 * at1 / t1.tr - spd * apd / pd.tr);
  Eigen::ArrayXd r1_den = spd / apd - st1 / at1;
  // a = S_PD S_T1 (TR_T1 a_T1/a_PD - TR_PD a_PD/a_T1) / (S_T1 TR_T1 a_T1 - S_PD TR_PD a_PD)
  Eigen::ArrayXd a_num = spd * st1 * (t1.tr * at1 / apd - pd.tr * apd / at1);
  Eigen::ArrayXd a_den = st1 * t1.tr * at1 - spd * pd.tr * apd;

  const double r1_floor = 1e-9 * r1_num.abs().mean();
  const double a_floor = 1e-9 * a_num.abs().mean();

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (std::abs(r1_den[i]) < r1_floor || std::abs(a_den[i]) < a_floor) {
      q.defined[i] = false;
      q.r1[i] = nan;
      q.a[i] = nan;
      continue;
    }
    q.r1[i] = r1_num[i] / r1_den[i];
    q.a[i] = a_num[i] / a_den[i];
  }

  if (q.has_mtsat) {
    const Eigen::ArrayXd smt = maps.theta(mt.index).exp();
    const Eigen::ArrayXd amt = b1 * mt.alpha;
    const double mt_floor = 1e-9 * smt.abs().mean();
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      if (!q.defined[i] || std::abs(smt[i]) < mt_floor) {
        q.defined[i] = false;
        q.mtsat[i] = nan;
        continue;
      }
      // mtsat = (a a_MT / S_MT - 1) r1 TR_MT - a_MT^2/2
      q.mtsat[i] = (q.a[i] * amt[i] / smt[i] - 1.0) * q.r1[i] * mt.tr - 0.5 * amt[i] * amt[i];
    }
    for (std::ptrdiff_t i = 0; i < n; ++i)
      if (q.defined[i] && !std::isfinite(q.mtsat[i])) q.defined[i] = false;
  }

  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (q.defined[i] && !(std::isfinite(q.r1[i]) && std::isfinite(q.a[i]))) {
      q.defined[i] = false;
      q.r1[i] = nan;
      q.a[i] = nan;
    }
  }
  return q;
}

} // namespace mpm
