#include "mpm/phantom.hpp"

#include <cmath>

#include "mpm/projection.hpp"
#include "mpm/rice.hpp"
#include "mpm/rng.hpp"
#include "mpm/signal.hpp"

namespace mpm {

std::vector<ProtocolSeries> default_protocol() {
  auto echoes = [](int count) {
    std::vector<double> te(count);
    for (int k = 0; k < count; ++k) te[k] = 2.3e-3 * (k + 1);
    return te;
  };
  std::vector<ProtocolSeries> protocol(3);
  protocol[0].meta = {Contrast::PDw, 6.0 * M_PI / 180.0, 25e-3, false};
  protocol[0].te = echoes(8);
  protocol[1].meta = {Contrast::T1w, 21.0 * M_PI / 180.0, 25e-3, false};
  protocol[1].te = echoes(8);
  protocol[2].meta = {Contrast::MTw, 6.0 * M_PI / 180.0, 25e-3, true};
  protocol[2].te = echoes(6);
  return protocol;
}

namespace {

enum Label : std::uint8_t { kBackground = 0, kGm = 1, kWm = 2, kCsf = 3, kVessel = 4 };

struct TissueValues {
  double m0, r1, r2s, mtsat;
};

constexpr TissueValues kWmValues{800.0, 1.1, 21.0, 0.02};
constexpr TissueValues kGmValues{900.0, 0.7, 16.0, 0.01};
constexpr TissueValues kCsfValues{1000.0, 0.25, 2.0, 0.002};
constexpr double kVesselR2s = 80.0;

/// Smooth field in [-1, 1]: a few seeded low-frequency cosine modes.
Eigen::ArrayXd modulation_field(const Grid3& grid, std::uint64_t seed, std::uint64_t stream) {
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  Eigen::ArrayXd field = Eigen::ArrayXd::Zero(grid.voxels());
  double kvec[3][3], phase[3];
  for (int m = 0; m < 3; ++m) {
    for (int a = 0; a < 3; ++a)
      kvec[m][a] = 1.0 + 1.5 * rng::uniform(seed, stream, 8 * m + a);
    phase[m] = 2.0 * M_PI * rng::uniform(seed, stream, 8 * m + 4);
  }
  std::ptrdiff_t i = 0;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x, ++i) {
        double v = 0.0;
        for (int m = 0; m < 3; ++m)
          v += std::cos(2.0 * M_PI * (kvec[m][0] * x / nx + kvec[m][1] * y / ny + kvec[m][2] * z / nz) +
                        phase[m]);
        field[i] = v;
      }
  const double peak = field.abs().maxCoeff();
  if (peak > 0) field /= peak;
  return field;
}

} // namespace

PhantomTruth make_phantom_maps(const Grid3& grid, std::uint64_t seed) {
  if ((grid.dims < 16).any()) throw DataError("make_phantom_maps: grid must be at least 16^3");
  PhantomTruth truth;
  truth.grid = grid;
  const std::ptrdiff_t n = grid.voxels();
  truth.labels.resize(n);
  truth.m0 = Eigen::ArrayXd::Zero(n);
  truth.r1 = Eigen::ArrayXd::Zero(n);
  truth.r2s = Eigen::ArrayXd::Zero(n);
  truth.mtsat = Eigen::ArrayXd::Zero(n);

  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  const Eigen::Array3d centre((nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0);
  // Nested ellipsoids, mildly anisotropic: GM shell, WM interior, CSF core.
  const Eigen::Array3d gm_ax(0.44 * nx, 0.42 * ny, 0.40 * nz);
  const Eigen::Array3d wm_ax(0.32 * nx, 0.30 * ny, 0.28 * nz);
  const Eigen::Array3d csf_ax(0.13 * nx, 0.12 * ny, 0.11 * nz);

  // Vessel tubes: seeded lines crossing the parenchyma.
  struct Tube {
    Eigen::Vector3d origin, dir;
  };
  std::vector<Tube> tubes(3);
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d o(centre[0] + (rng::uniform(seed, 101, 4 * k) - 0.5) * 0.45 * nx,
                      centre[1] + (rng::uniform(seed, 101, 4 * k + 1) - 0.5) * 0.45 * ny,
                      centre[2] + (rng::uniform(seed, 101, 4 * k + 2) - 0.5) * 0.45 * nz);
    Eigen::Vector3d dvec(rng::uniform(seed, 102, 4 * k) - 0.5, rng::uniform(seed, 102, 4 * k + 1) - 0.5,
                         rng::uniform(seed, 102, 4 * k + 2) - 0.5);
    if (dvec.norm() < 1e-6) dvec = Eigen::Vector3d(1, 0, 0);
    tubes[k] = {o, dvec.normalized()};
  }
  const double tube_radius = 1.2;  // voxels

  std::ptrdiff_t i = 0;
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x, ++i) {
        const Eigen::Array3d p(x - centre[0], y - centre[1], z - centre[2]);
        auto inside = [&p](const Eigen::Array3d& ax) { return (p / ax).square().sum() <= 1.0; };
        std::uint8_t label = kBackground;
        if (inside(gm_ax)) label = kGm;
        if (inside(wm_ax)) label = kWm;
        if (inside(csf_ax)) label = kCsf;
        if (label == kGm || label == kWm) {
          const Eigen::Vector3d q(p[0], p[1], p[2]);
          for (const Tube& tube : tubes) {
            const Eigen::Vector3d rel = q - (tube.origin - centre.matrix().eval());
            const double dist = (rel - rel.dot(tube.dir) * tube.dir).norm();
            if (dist <= tube_radius) {
              label = kVessel;
              break;
            }
          }
        }
        truth.labels[i] = label;
      }
    }
  }

  const Eigen::ArrayXd mod_m0 = modulation_field(grid, seed, 1);
  const Eigen::ArrayXd mod_r1 = modulation_field(grid, seed, 2);
  const Eigen::ArrayXd mod_r2s = modulation_field(grid, seed, 3);
  const Eigen::ArrayXd mod_mt = modulation_field(grid, seed, 4);

  for (i = 0; i < n; ++i) {
    TissueValues base{0, 0, 0, 0};
    switch (truth.labels[i]) {
      case kGm: base = kGmValues; break;
      case kWm: base = kWmValues; break;
      case kCsf: base = kCsfValues; break;
      case kVessel:
        base = kWmValues;
        base.r2s = kVesselR2s;
        break;
      default: break;
    }
    if (truth.labels[i] != kBackground) {
      truth.m0[i] = base.m0 * (1.0 + 0.1 * mod_m0[i]);
      truth.r1[i] = base.r1 * (1.0 + 0.1 * mod_r1[i]);
      truth.r2s[i] = base.r2s * (1.0 + 0.1 * mod_r2s[i]);
      truth.mtsat[i] = base.mtsat * (1.0 + 0.1 * mod_mt[i]);
    }
  }

  const char* names[5] = {"background", "gm", "wm", "csf", "vessels"};
  for (int l = 0; l < 5; ++l)
    truth.masks[names[l]] = truth.labels == static_cast<std::uint8_t>(l);
  return truth;
}

ParameterMaps PhantomTruth::parameter_maps(const std::vector<ProtocolSeries>& protocol,
                                           const std::optional<Eigen::ArrayXd>& b1) const {
  ParameterMaps maps(grid, static_cast<int>(protocol.size()));
  const std::ptrdiff_t n = grid.voxels();
  for (std::size_t c = 0; c < protocol.size(); ++c) {
    const ContrastMeta& meta = protocol[c].meta;
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      if (labels[i] == kBackground) continue;  // placeholder 0: no signal to log
      const double alpha = (b1 ? (*b1)[i] : 1.0) * meta.flip_angle;
      const double delta = meta.kind == Contrast::MTw ? mtsat[i] : 0.0;
      maps.values(i, c) = std::log(ernst_signal(m0[i], alpha, meta.tr, r1[i], 0.0, 0.0, delta));
    }
  }
  for (std::ptrdiff_t i = 0; i < n; ++i)
    maps.values(i, protocol.size()) = labels[i] == kBackground ? 0.0 : r2s[i];
  return maps;
}

Dataset simulate_dataset(const PhantomTruth& truth, const std::vector<ProtocolSeries>& protocol,
                         const std::vector<double>& sigma, const std::vector<RigidTransform>& poses,
                         const std::optional<Eigen::ArrayXd>& b1, std::uint64_t seed) {
  if (protocol.empty()) throw DataError("simulate_dataset: empty protocol");
  if (sigma.size() != protocol.size() || poses.size() != protocol.size())
    throw DataError("simulate_dataset: sigma/poses must match the protocol length");

  Dataset d;
  d.recon_grid = truth.grid;
  d.masks = truth.masks;
  if (b1) d.b1_map = *b1;
  const std::ptrdiff_t n = truth.grid.voxels();

  for (std::size_t c = 0; c < protocol.size(); ++c) {
    const ContrastMeta& meta = protocol[c].meta;
    ContrastSeries series;
    series.meta = meta;
    series.native_grid = truth.grid;
    series.pose = poses[c];
    series.sigma = sigma[c] > 0.0 ? sigma[c] : 1.0;

    Eigen::ArrayXd s0(n);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const double alpha = (b1 ? (*b1)[i] : 1.0) * meta.flip_angle;
      const double delta = meta.kind == Contrast::MTw ? truth.mtsat[i] : 0.0;
      s0[i] = truth.m0[i] > 0.0 ? ernst_signal(truth.m0[i], alpha, meta.tr, truth.r1[i], 0.0, 0.0, delta)
                                : 0.0;
    }
    for (std::size_t e = 0; e < protocol[c].te.size(); ++e) {
      const double te = protocol[c].te[e];
      Eigen::ArrayXd clean = s0 * (-te * truth.r2s).exp();
      Eigen::ArrayXd native = pull(clean, truth.grid, series.pose, series.native_grid);
      EchoVolume echo;
      echo.te = te;
      echo.data = sigma[c] > 0.0
                      ? rice_sample(native, sigma[c], seed, 1000 + 64 * c + e)
                      : native;
      series.echoes.push_back(std::move(echo));
    }
    d.series.push_back(std::move(series));
  }
  return d;
}

std::vector<RigidTransform> random_motion(const Grid3& grid, std::size_t count, std::uint64_t seed,
                                          double max_translation_mm, double max_rotation_deg) {
  const Eigen::Vector3d centre(0.5 * (grid.dims[0] - 1) * grid.spacing[0],
                               0.5 * (grid.dims[1] - 1) * grid.spacing[1],
                               0.5 * (grid.dims[2] - 1) * grid.spacing[2]);
  std::vector<RigidTransform> poses(count);
  for (std::size_t s = 1; s < count; ++s) {
    Eigen::Vector3d trans, rot;
    for (int a = 0; a < 3; ++a) {
      trans[a] = (2.0 * rng::uniform(seed, 200 + s, a) - 1.0) * max_translation_mm;
      rot[a] = (2.0 * rng::uniform(seed, 200 + s, 3 + a) - 1.0) * max_rotation_deg * M_PI / 180.0;
    }
    poses[s] = RigidTransform::from_params(trans, rot, centre);
  }
  return poses;
}

} // namespace mpm
