#ifndef MPM_MANIFEST_HPP
#define MPM_MANIFEST_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "mpm/volume.hpp"

namespace mpm {

/// Dataset loaded from a JSON manifest. Series without a manifest sigma are
/// loaded with sigma = 0 and must be filled (ensure_sigma) before fitting.
struct LoadedDataset {
  Dataset dataset;
  std::vector<bool> sigma_from_manifest;
};

/// Reads a dataset manifest: series metadata in ms/degrees (converted here),
/// echo volume paths relative to the manifest directory, optional pose
/// (row-major 4x4 world matrix), B1 map and named masks.
LoadedDataset load_manifest(const std::filesystem::path& manifest_path);

/// Estimates any missing series sigma by fitting the two-class Rice mixture
/// to the series' first echo.
void ensure_sigma(LoadedDataset& loaded);

/// Writes manifest + volumes for a dataset (used by the phantom generator).
void save_dataset(const std::filesystem::path& directory, const Dataset& d);

} // namespace mpm

#endif
