#pragma once

// Synthetic FBP / ground-truth volume pairs: ellipse phantoms in HU,
// parallel-beam projection, ramp-filtered backprojection, and training
// patch extraction.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dlmbir/tensor.hpp"

namespace dlmbir {

struct VolumeDims {
  std::size_t slices = 0, rows = 0, cols = 0;

  std::size_t plane() const { return rows * cols; }
  std::size_t voxels() const { return slices * rows * cols; }
  bool operator==(const VolumeDims&) const = default;
};

std::string to_string(const VolumeDims& dims);

/// HU interval, inclusive on both ends.
struct HuRange {
  double lo = 0.0;
  double hi = 2000.0;
  bool operator==(const HuRange&) const = default;
};

inline constexpr HuRange kDefaultHuWindow{0.0, 2000.0};
inline constexpr HuRange kDefaultHuMask{700.0, 1500.0};

/// Scalar volume in Hounsfield units, z-major (slice, row, col).
struct VolumeHU {
  VolumeDims dims;
  std::vector<float> voxels;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  HuRange window = kDefaultHuWindow;

  VolumeHU() = default;
  explicit VolumeHU(VolumeDims d, float fill = 0.0f);

  float& at(std::size_t z, std::size_t r, std::size_t c) { return voxels[(z * dims.rows + r) * dims.cols + c]; }
  float at(std::size_t z, std::size_t r, std::size_t c) const { return voxels[(z * dims.rows + r) * dims.cols + c]; }
  bool operator==(const VolumeHU&) const = default;
};

struct Ellipse {
  double center_x = 0, center_y = 0;  // field-of-view units in [-1, 1]
  double semi_x = 0.5, semi_y = 0.5;
  double rotation = 0;  // radians
  double hu = 1000;

  bool contains(double x, double y) const;
};

/// Later ellipses overwrite earlier ones where they overlap.
struct Phantom {
  std::vector<Ellipse> ellipses;
  double background_hu = 0.0;

  void validate() const;
};

/// Pixel-center coordinate in field-of-view units; the image spans [-1, 1] on both axes.
double fov_coordinate(std::size_t index, std::size_t count);

/// Rasterizes by pixel-center membership.
Tensor<double> rasterize(const Phantom& phantom, std::size_t rows, std::size_t cols);

struct PhantomVolume {
  std::vector<Phantom> slices;  // one phantom per z
  VolumeHU volume;
};

/// Ellipse parameters vary smoothly in z so neighboring slices correlate.
/// Requires dims >= (8, 32, 32).
PhantomVolume generate_phantom_volume(std::uint64_t seed, VolumeDims dims);

struct Sinogram {
  std::vector<double> angles;  // radians, strictly increasing in [0, pi)
  std::size_t detectors = 0;
  double detector_spacing = 1.0;  // pixels
  std::size_t rows = 0, cols = 0;  // size of the imaged slice
  std::vector<double> values;  // angles.size() x detectors, row-major

  void validate() const;
};

/// Evenly spaced angles k * pi / views.
std::vector<double> uniform_angles(std::size_t views);

/// Smallest odd detector count covering the slice diagonal at unit spacing.
std::size_t default_detector_count(std::size_t rows, std::size_t cols);

/// Line integrals through a (rows, cols) slice by sampled ray accumulation
/// (bilinear interpolation, half-pixel steps). Linear in the image.
Sinogram radon(const Tensor<double>& slice, const std::vector<double>& angles, std::size_t detectors);

/// Ram-Lak filtered backprojection back to a (rows, cols) slice.
Tensor<double> fbp(const Sinogram& sinogram);

struct VolumePair {
  VolumeHU fbp;    // y
  VolumeHU truth;  // x
};

/// Per slice: radon, additive Gaussian sinogram noise (sigma in line-integral
/// units, HU * pixel), filtered backprojection.
VolumePair make_pair(const VolumeHU& ground_truth, std::size_t views, double noise_sigma, std::uint64_t seed);

template <typename T>
struct NormalizedVolume {
  Tensor<T> data;  // (slices, rows, cols)
  std::size_t out_of_window = 0;
};

/// Affine map lo -> 0, hi -> 1. Out-of-window voxels are counted, and clipped
/// only when `clip` is set.
template <typename T>
NormalizedVolume<T> hu_normalize(const VolumeHU& volume, HuRange window = kDefaultHuWindow, bool clip = false);

template <typename T>
VolumeHU hu_denormalize(const Tensor<T>& normalized, HuRange window = kDefaultHuWindow);

// Volume container: text header (dims, spacing, HU window) + little-endian
// float32 voxels, z-major.
void save_volume(const VolumeHU& volume, const std::filesystem::path& path);
VolumeHU load_volume(const std::filesystem::path& path);

enum class Augmentation : std::uint8_t { identity, flip_horizontal, flip_vertical, rotate90, rotate180, rotate270 };
inline constexpr std::size_t kAugmentationCount = 6;
std::string to_string(Augmentation aug);

/// Applies `aug` to each (p, p) plane of a (k, p, p) block.
template <typename T>
Tensor<T> augment_block(const Tensor<T>& block, Augmentation aug);

struct PatchIndex {
  std::uint32_t volume_id = 0;
  std::uint32_t z = 0, row = 0, col = 0;
  Augmentation aug = Augmentation::identity;

  auto operator<=>(const PatchIndex&) const = default;
};

struct PatchSpec {
  std::size_t patch_size = 30;
  std::size_t window = 1;
  std::size_t count = 50000;
  bool augment = true;
  bool volumetric_target = false;  // 3D: target spans the window
  std::uint64_t seed = 0;
  std::uint32_t volume_id = 0;
};

/// Paired (input, residual target) patches.
///   inputs  (N, window, p, p)        slices of y centered at z
///   targets (N, 1 or window, p, p)   nu = y - x
template <typename T>
struct PatchSet {
  std::size_t window = 1;
  std::size_t patch_size = 0;
  bool volumetric_target = false;
  Tensor<T> inputs;
  Tensor<T> targets;
  std::vector<PatchIndex> indices;

  std::size_t size() const { return indices.size(); }
  std::size_t target_slices() const { return volumetric_target ? window : 1; }
  /// Appends another set with the same geometry.
  void append(const PatchSet& other);
};

/// Anchors are drawn from a counter-based generator keyed on (seed, sample
/// index), so the result does not depend on extraction order. z beyond the
/// volume is clamped (replicate padding).
template <typename T>
PatchSet<T> extract_patches(const Tensor<T>& y, const Tensor<T>& x, const PatchSpec& spec);

/// Rebuilds one (input, target) pair from its stored index.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> reproduce_patch(const Tensor<T>& y, const Tensor<T>& x, const PatchIndex& index,
                                                const PatchSpec& spec);

/// Writes <prefix>_inputs.vol, <prefix>_targets.vol and <prefix>_index.csv.
template <typename T>
void save_patchset(const PatchSet<T>& set, const std::filesystem::path& prefix);
template <typename T>
PatchSet<T> load_patchset(const std::filesystem::path& prefix);

/// splitmix64 finalizer over (seed, counter); the counter-based generator
/// behind patch sampling and shuffles.
std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t counter);

}  // namespace dlmbir
