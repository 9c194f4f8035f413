#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mpm/volume.hpp"

using namespace mpm;

namespace {

Dataset small_dataset() {
  Dataset d;
  d.recon_grid = Grid3(4, 4, 4);
  for (int c = 0; c < 3; ++c) {
    ContrastSeries s;
    s.meta.kind = c == 0 ? Contrast::PDw : (c == 1 ? Contrast::T1w : Contrast::MTw);
    s.meta.flip_angle = (c == 1 ? 21.0 : 6.0) * M_PI / 180.0;
    s.meta.tr = 25e-3;
    s.meta.mt_prepulse = s.meta.kind == Contrast::MTw;
    s.sigma = 5.0;
    s.native_grid = d.recon_grid;
    const int echoes = c == 2 ? 6 : 8;
    for (int e = 0; e < echoes; ++e) {
      EchoVolume echo;
      echo.te = 2.3e-3 * (e + 1);
      echo.data = Eigen::ArrayXd::Constant(d.recon_grid.voxels(), 100.0);
      s.echoes.push_back(echo);
    }
    d.series.push_back(std::move(s));
  }
  return d;
}

} // namespace

TEST_CASE("well-formed dataset validates cleanly") {
  const Dataset d = small_dataset();
  CHECK(validate_dataset(d).empty());
  // ragged echo counts are allowed (MTw has 6, others 8)
  CHECK(d.series[2].echoes.size() == 6);
}

TEST_CASE("duplicate echo times are reported with their series") {
  Dataset d = small_dataset();
  d.series[0].echoes[1].te = d.series[0].echoes[0].te;
  const auto problems = validate_dataset(d);
  REQUIRE(problems.size() == 1);
  CHECK(problems[0] == "echo times not strictly increasing @ series 0");
}

TEST_CASE("non-positive sigma is reported with its series") {
  Dataset d = small_dataset();
  d.series[2].sigma = 0.0;
  const auto problems = validate_dataset(d);
  REQUIRE(problems.size() == 1);
  CHECK(problems[0] == "sigma must be > 0 @ series 2");
}

TEST_CASE("validation is pure and idempotent") {
  Dataset d = small_dataset();
  d.series[1].sigma = -1.0;
  const auto first = validate_dataset(d);
  const auto second = validate_dataset(d);
  CHECK(first == second);
}

TEST_CASE("several violations are all reported") {
  Dataset d = small_dataset();
  d.series[0].sigma = 0.0;
  d.series[1].meta.tr = 0.0;
  d.series[2].echoes[0].data[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK(validate_dataset(d).size() == 3);
}

TEST_CASE("rigid transforms are orthonormal with unit determinant") {
  const RigidTransform t = RigidTransform::from_params({1.0, -2.0, 0.5}, {0.02, -0.01, 0.03});
  CHECK(t.valid());
  CHECK_FALSE(t.is_identity());
  const RigidTransform inv = t.inverse();
  CHECK((t.m * inv.m - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(RigidTransform::identity().is_identity());
}
