#pragma once

#include <filesystem>
#include <string>

#include "dlmbir/data_sim.hpp"

namespace support {

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dlmbir_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Small noisy sparse-view pair.
inline dlmbir::VolumePair small_pair(std::uint64_t seed, dlmbir::VolumeDims dims = {8, 32, 32},
                                     double sigma = 1000.0) {
  const auto gt = dlmbir::generate_phantom_volume(seed, dims);
  return dlmbir::make_pair(gt.volume, 24, sigma, seed + 1);
}

template <typename T>
dlmbir::PatchSet<T> small_patches(std::uint64_t seed, std::size_t count, std::size_t window = 1,
                                  std::size_t patch = 16, bool volumetric = false) {
  const auto pair = small_pair(seed);
  dlmbir::PatchSpec spec;
  spec.count = count;
  spec.window = window;
  spec.patch_size = patch;
  spec.volumetric_target = volumetric;
  spec.seed = seed;
  return dlmbir::extract_patches(dlmbir::hu_normalize<T>(pair.fbp).data, dlmbir::hu_normalize<T>(pair.truth).data,
                                 spec);
}

}  // namespace support
