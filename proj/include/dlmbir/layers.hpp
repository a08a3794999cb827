#pragma once

// Layer primitives with hand-written forward and backward passes.
//
// Layouts:
//   conv input   (C, H, W) or (C, D, H, W)   -- one sample, channels first
//   conv weights (C_out, C_in, kh, kw) or (C_out, C_in, kd, kh, kw)
//   batch norm   (N, C, spatial...)          -- statistics over N and spatial
//
// Convolution is cross-correlation with stride 1 and "same" zero padding.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dlmbir/tensor.hpp"

namespace dlmbir {

template <typename T>
struct ConvKernel {
  Tensor<T> weights;
  Tensor<T> bias;

  ConvKernel() = default;
  /// Zero kernel with the given spatial extent (2 or 3 odd sizes).
  ConvKernel(std::size_t out_channels, std::size_t in_channels, const Shape& extent);
  ConvKernel(Tensor<T> weights, Tensor<T> bias);

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t spatial_rank() const { return weights.rank() - 2; }
  Shape extent() const { return Shape(weights.shape().begin() + 2, weights.shape().end()); }
  std::size_t taps() const { return shape_product(extent()); }
  void validate() const;
};

/// Spatial geometry of one conv application; 2D kernels use depth == 1, kd == 1.
struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t depth = 1, rows = 0, cols = 0;
  std::size_t kd = 1, kh = 3, kw = 3;

  std::size_t plane() const { return rows * cols; }
  std::size_t voxels() const { return depth * rows * cols; }
  std::size_t input_size() const { return in_channels * voxels(); }
  std::size_t output_size() const { return out_channels * voxels(); }
};

/// Validates `input_shape` (C, spatial...) against the kernel and returns the geometry.
template <typename T>
ConvGeometry conv_geometry(const Shape& input_shape, const ConvKernel<T>& kernel);

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const ConvKernel<T>& kernel);

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
ConvGrads<T> conv_backward(const Tensor<T>& input, const ConvKernel<T>& kernel, const Tensor<T>& upstream);

/// Span-level convolution used by the network. `scratch` is reused between calls.
template <typename T>
void conv_forward_into(std::span<const T> input, const ConvKernel<T>& kernel, const ConvGeometry& g,
                       std::span<T> output, AlignedVector<T>& scratch);

/// Accumulates weight/bias gradients into `grad_weights`/`grad_bias`; writes
/// (overwrites) `grad_input` unless it is empty.
template <typename T>
void conv_backward_into(std::span<const T> input, const ConvKernel<T>& kernel, const ConvGeometry& g,
                        std::span<const T> upstream, std::span<T> grad_input, std::span<T> grad_weights,
                        std::span<T> grad_bias, AlignedVector<T>& scratch);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

/// Passes upstream where input > 0; the subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& upstream);

enum class BnMode { train, infer };

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels);
  std::size_t channels() const { return gamma.size(); }
};

template <typename T>
struct BatchNormResult {
  Tensor<T> output;
  /// Running statistics after this call; identical to the input state in infer mode.
  BatchNormState<T> state;
};

template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor<T>& input, const BatchNormState<T>& state, BnMode mode);

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& input, const BatchNormState<T>& state,
                                     const Tensor<T>& upstream, BnMode mode);

/// Central-difference gradient of a scalar function; the oracle for every
/// backward pass above.
Tensor<double> finite_diff_gradient(const std::function<double(const Tensor<double>&)>& f,
                                    const Tensor<double>& params, double step);

}  // namespace dlmbir
