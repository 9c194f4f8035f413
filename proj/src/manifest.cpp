#include "mpm/manifest.hpp"

#include <fstream>
#include <json.hpp>

#include "mpm/nifti.hpp"
#include "mpm/rice.hpp"

namespace mpm {

using nlohmann::json;

namespace {

constexpr double kDegToRad = M_PI / 180.0;

RigidTransform pose_from_json(const json& node) {
  if (!node.is_array() || node.size() != 16)
    throw DataError("manifest: pose must be a 16-element row-major 4x4 matrix");
  RigidTransform t;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) t.m(r, c) = node[4 * r + c].get<double>();
  if (!t.valid(1e-6))
    throw DataError("manifest: pose rotation block is not orthonormal with det +1");
  return t;
}

json pose_to_json(const RigidTransform& t) {
  json out = json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out.push_back(t.m(r, c));
  return out;
}

} // namespace

LoadedDataset load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("manifest: cannot open '" + manifest_path.string() + "'");
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw DataError("manifest: invalid JSON in '" + manifest_path.string() + "': " + e.what());
  }
  if (!root.contains("series") || !root["series"].is_array() || root["series"].empty())
    throw DataError("manifest: missing or empty 'series' array");

  const std::filesystem::path dir = manifest_path.parent_path();
  LoadedDataset loaded;
  Dataset& d = loaded.dataset;

  for (const json& snode : root["series"]) {
    ContrastSeries series;
    if (!snode.contains("kind")) throw DataError("manifest: series missing 'kind'");
    series.meta.kind = contrast_from_string(snode["kind"].get<std::string>());
    if (!snode.contains("flip_angle_deg")) throw DataError("manifest: series missing 'flip_angle_deg'");
    series.meta.flip_angle = snode["flip_angle_deg"].get<double>() * kDegToRad;
    if (!snode.contains("tr_ms")) throw DataError("manifest: series missing 'tr_ms'");
    series.meta.tr = snode["tr_ms"].get<double>() * 1e-3;
    series.meta.mt_prepulse = snode.value("mt_prepulse", series.meta.kind == Contrast::MTw);
    if (snode.contains("sigma")) {
      series.sigma = snode["sigma"].get<double>();
      if (!(series.sigma > 0.0)) throw DataError("manifest: sigma must be > 0 when given");
      loaded.sigma_from_manifest.push_back(true);
    } else {
      series.sigma = 0.0;
      loaded.sigma_from_manifest.push_back(false);
    }
    if (snode.contains("pose")) series.pose = pose_from_json(snode["pose"]);

    if (!snode.contains("echoes") || !snode["echoes"].is_array() || snode["echoes"].empty())
      throw DataError("manifest: series missing 'echoes' array");
    for (const json& enode : snode["echoes"]) {
      if (!enode.contains("te_ms")) throw DataError("manifest: echo missing 'te_ms'");
      if (!enode.contains("path")) throw DataError("manifest: echo missing 'path'");
      EchoVolume echo;
      echo.te = enode["te_ms"].get<double>() * 1e-3;
      NiftiVolume vol = read_volume((dir / enode["path"].get<std::string>()).string());
      if (series.echoes.empty()) {
        series.native_grid = vol.grid;
      } else if (vol.grid != series.native_grid) {
        throw DataError("manifest: echo grids differ within a series ('" +
                        enode["path"].get<std::string>() + "')");
      }
      echo.data = vol.scalar();
      series.echoes.push_back(std::move(echo));
    }
    d.series.push_back(std::move(series));
  }

  if (root.contains("recon_grid")) {
    const json& g = root["recon_grid"];
    if (!g.contains("dims") || !g.contains("spacing_mm") || g["dims"].size() != 3 ||
        g["spacing_mm"].size() != 3)
      throw DataError("manifest: recon_grid needs 3-element 'dims' and 'spacing_mm'");
    for (int a = 0; a < 3; ++a) {
      d.recon_grid.dims[a] = g["dims"][a].get<int>();
      d.recon_grid.spacing[a] = g["spacing_mm"][a].get<double>();
    }
  } else {
    d.recon_grid = d.series.front().native_grid;
  }

  if (root.contains("b1_path")) {
    NiftiVolume vol = read_volume((dir / root["b1_path"].get<std::string>()).string());
    if (vol.grid.voxels() != d.recon_grid.voxels())
      throw DataError("manifest: b1 map dims do not match the recon grid");
    d.b1_map = vol.scalar();
  }
  if (root.contains("masks")) {
    for (const auto& [name, pathnode] : root["masks"].items()) {
      NiftiVolume vol = read_volume((dir / pathnode.get<std::string>()).string());
      if (vol.grid.voxels() != d.recon_grid.voxels())
        throw DataError("manifest: mask '" + name + "' dims do not match the recon grid");
      d.masks[name] = vol.scalar() > 0.5;
    }
  }
  return loaded;
}

void ensure_sigma(LoadedDataset& loaded) {
  for (std::size_t c = 0; c < loaded.dataset.series.size(); ++c) {
    ContrastSeries& series = loaded.dataset.series[c];
    if (series.sigma > 0.0) continue;
    series.sigma = fit_rice_mixture(series.echoes.front().data).sigma;
  }
}

void save_dataset(const std::filesystem::path& directory, const Dataset& d) {
  std::filesystem::create_directories(directory);
  json root;
  root["recon_grid"] = {
      {"dims", {d.recon_grid.dims[0], d.recon_grid.dims[1], d.recon_grid.dims[2]}},
      {"spacing_mm", {d.recon_grid.spacing[0], d.recon_grid.spacing[1], d.recon_grid.spacing[2]}}};
  root["series"] = json::array();
  for (std::size_t c = 0; c < d.series.size(); ++c) {
    const ContrastSeries& series = d.series[c];
    const std::string stem = to_string(series.meta.kind);
    json snode;
    snode["kind"] = to_string(series.meta.kind);
    snode["flip_angle_deg"] = series.meta.flip_angle / kDegToRad;
    snode["tr_ms"] = series.meta.tr * 1e3;
    snode["mt_prepulse"] = series.meta.mt_prepulse;
    snode["sigma"] = series.sigma;
    if (!series.pose.is_identity()) snode["pose"] = pose_to_json(series.pose);
    snode["echoes"] = json::array();
    for (std::size_t e = 0; e < series.echoes.size(); ++e) {
      const std::string name = stem + "_e" + std::to_string(e + 1) + ".nii";
      write_volume((directory / name).string(), series.echoes[e].data, series.native_grid);
      snode["echoes"].push_back({{"te_ms", series.echoes[e].te * 1e3}, {"path", name}});
    }
    root["series"].push_back(std::move(snode));
  }
  if (d.b1_map) {
    write_volume((directory / "b1.nii").string(), *d.b1_map, d.recon_grid);
    root["b1_path"] = "b1.nii";
  }
  if (!d.masks.empty()) {
    json masks;
    for (const auto& [name, mask] : d.masks) {
      const std::string file = "mask_" + name + ".nii";
      write_volume((directory / file).string(), mask.cast<double>().eval(), d.recon_grid);
      masks[name] = file;
    }
    root["masks"] = std::move(masks);
  }
  std::ofstream out(directory / "manifest.json");
  if (!out) throw DataError("manifest: cannot write '" + (directory / "manifest.json").string() + "'");
  out << root.dump(2) << "\n";
}

} // namespace mpm
