#include "dlmbir/inference.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <stdexcept>

#include "dlmbir/errors.hpp"

namespace dlmbir {

template <typename T>
Tensor<T> gather_window(const Tensor<T>& volume, std::size_t z, std::size_t window) {
  if (volume.rank() != 3) throw ShapeError("volume must be (Z, H, W), got " + shape_to_string(volume.shape()));
  if (window == 0 || window % 2 == 0) throw std::invalid_argument("window must be odd and positive");
  const std::size_t slices = volume.dim(0);
  if (z >= slices) throw std::out_of_range("slice index out of range");
  Tensor<T> out({window, volume.dim(1), volume.dim(2)});
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  for (std::size_t k = 0; k < window; ++k) {
    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(z) + static_cast<std::ptrdiff_t>(k) - half;
    const auto clamped = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(src, 0, static_cast<std::ptrdiff_t>(slices) - 1));
    const auto from = volume.outer(clamped);
    std::copy(from.begin(), from.end(), out.outer(k).begin());
  }
  return out;
}

template <typename T>
Tensor<T> infer_volume(const ResidualModel<T>& model, const NetworkVariant& variant, const Tensor<T>& y) {
  variant.validate();
  if (y.rank() != 3) throw ShapeError("input volume must be (Z, H, W), got " + shape_to_string(y.shape()));
  const std::size_t rows = y.dim(1), cols = y.dim(2);
  if (rows < 3 || cols < 3)
    throw ShapeError("slice " + std::to_string(rows) + "x" + std::to_string(cols) + " is smaller than the 3x3 kernel support");

  Tensor<T> out(y.shape());
  const std::size_t plane = rows * cols;
  for (std::size_t z = 0; z < y.dim(0); ++z) {
    Tensor<T> input = gather_window(y, z, variant.window);
    if (variant.volumetric()) input.reshape({1, variant.window, rows, cols});
    const Tensor<T> residual = model(input);
    // 3D emits the whole window; only its middle slice is kept.
    const std::size_t offset = variant.volumetric() ? (variant.window / 2) * plane : 0;
    if (residual.size() != (variant.volumetric() ? variant.window * plane : plane))
      throw ShapeError("model returned residual of shape " + shape_to_string(residual.shape()));
    const auto src = y.outer(z);
    auto dst = out.outer(z);
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] - residual[offset + i];
  }
  return out;
}

template <typename T>
Tensor<T> infer_volume(const NetworkParams<T>& params, const Tensor<T>& y) {
  const ResidualModel<T> model = [&params](const Tensor<T>& input) { return forward(params, input, BnMode::infer); };
  return infer_volume(model, params.variant, y);
}

template <typename T>
VolumeHU infer_volume_hu(const NetworkParams<T>& params, const VolumeHU& y) {
  const Tensor<T> normalized = hu_normalize<T>(y, y.window).data;
  const Tensor<T> x_hat = infer_volume(params, normalized);
  const double scale = y.window.hi - y.window.lo;
  VolumeHU out = y;
  for (std::size_t i = 0; i < out.voxels.size(); ++i) {
    const double residual = static_cast<double>(normalized[i] - x_hat[i]) * scale;
    out.voxels[i] = static_cast<float>(static_cast<double>(y.voxels[i]) - residual);
  }
  return out;
}

template <typename T>
TimingStats time_inference(const NetworkParams<T>& params, const Tensor<T>& y, std::size_t repeats) {
  if (repeats < 3) throw std::invalid_argument("time_inference needs at least 3 repeats");
  using clock = std::chrono::steady_clock;
  (void)infer_volume(params, y);
  TimingStats stats;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto start = clock::now();
    const Tensor<T> out = infer_volume(params, y);
    stats.samples_s.push_back(std::chrono::duration<double>(clock::now() - start).count());
    (void)out;
  }
  stats.mean_s = std::accumulate(stats.samples_s.begin(), stats.samples_s.end(), 0.0) /
                 static_cast<double>(stats.samples_s.size());
  stats.min_s = *std::min_element(stats.samples_s.begin(), stats.samples_s.end());
  return stats;
}

#define DLMBIR_INSTANTIATE(T)                                                                   \
  template Tensor<T> gather_window(const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> infer_volume(const ResidualModel<T>&, const NetworkVariant&, const Tensor<T>&); \
  template Tensor<T> infer_volume(const NetworkParams<T>&, const Tensor<T>&);                  \
  template VolumeHU infer_volume_hu(const NetworkParams<T>&, const VolumeHU&);                 \
  template TimingStats time_inference(const NetworkParams<T>&, const Tensor<T>&, std::size_t);

DLMBIR_INSTANTIATE(float)
DLMBIR_INSTANTIATE(double)

}  // namespace dlmbir
