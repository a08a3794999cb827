#pragma once

#include <functional>
#include <vector>

#include "dlmbir/data_sim.hpp"
#include "dlmbir/network.hpp"

namespace dlmbir {

/// Any residual predictor with the network's per-sample contract:
/// (window, H, W) -> (H, W) for 2D/2.5D, (1, window, H, W) -> (window, H, W) for 3D.
template <typename T>
using ResidualModel = std::function<Tensor<T>(const Tensor<T>&)>;

/// Slices z - w/2 .. z + w/2 of a (Z, H, W) volume, clamped to [0, Z-1].
template <typename T>
Tensor<T> gather_window(const Tensor<T>& volume, std::size_t z, std::size_t window);

/// x_hat for every slice of a normalized (Z, H, W) volume. 2D runs slices
/// independently; 2.5D and 3D slide a stride-1 window centered on each z
/// (3D keeps the middle output slice). BN runs in infer mode.
template <typename T>
Tensor<T> infer_volume(const NetworkParams<T>& params, const Tensor<T>& y);

/// Same sliding scheme with an arbitrary model (used for probe networks).
template <typename T>
Tensor<T> infer_volume(const ResidualModel<T>& model, const NetworkVariant& variant, const Tensor<T>& y);

/// HU in, HU out. The residual is mapped back to HU and subtracted from the
/// original voxels, so a zero residual returns `y` unchanged bit for bit.
template <typename T>
VolumeHU infer_volume_hu(const NetworkParams<T>& params, const VolumeHU& y);

struct TimingStats {
  std::vector<double> samples_s;
  double mean_s = 0;
  double min_s = 0;
};

/// Wall time of infer_volume over `repeats` runs after one untimed warm-up.
template <typename T>
TimingStats time_inference(const NetworkParams<T>& params, const Tensor<T>& y, std::size_t repeats = 3);

}  // namespace dlmbir
