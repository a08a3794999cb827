#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dlmbir/layers.hpp"
#include "dlmbir/tensor.hpp"

namespace dlmbir {

enum class NetworkKind { two_d, two_point_five_d, three_d };

std::string to_string(NetworkKind kind);
/// Accepts "2d", "2.5d", "3d" (and the enum spellings).
NetworkKind parse_network_kind(const std::string& name);

struct NetworkVariant {
  NetworkKind kind = NetworkKind::two_d;
  std::size_t window = 1;
  std::size_t depth = 17;
  std::size_t width = 64;

  static NetworkVariant two_d(std::size_t depth = 17, std::size_t width = 64) {
    return {NetworkKind::two_d, 1, depth, width};
  }
  static NetworkVariant two_point_five_d(std::size_t window, std::size_t depth = 17, std::size_t width = 64) {
    return {NetworkKind::two_point_five_d, window, depth, width};
  }
  static NetworkVariant three_d(std::size_t depth = 17, std::size_t width = 64, std::size_t window = 7) {
    return {NetworkKind::three_d, window, depth, width};
  }

  /// Throws std::invalid_argument when the window/depth/width combination is not allowed.
  void validate() const;

  bool volumetric() const { return kind == NetworkKind::three_d; }
  /// Channel count of the first convolution.
  std::size_t input_channels() const { return volumetric() ? 1 : window; }
  /// Slices in the residual the network emits per window.
  std::size_t output_slices() const { return volumetric() ? window : 1; }
  std::string label() const;

  bool operator==(const NetworkVariant&) const = default;
};

template <typename T>
struct Layer {
  ConvKernel<T> conv;
  std::optional<BatchNormState<T>> bn;
  bool relu = true;
};

/// Layer 1: conv + ReLU; layers 2..depth-1: conv + BN + ReLU; last: conv only.
template <typename T>
struct NetworkParams {
  NetworkVariant variant;
  std::vector<Layer<T>> layers;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  /// Trainable tensors in canonical order: per layer conv.weight, conv.bias, bn.gamma, bn.beta.
  std::vector<Tensor<T>*> trainable();
  std::vector<const Tensor<T>*> trainable() const;
  std::vector<std::string> trainable_names() const;
  std::size_t parameter_count() const;

  template <typename U>
  NetworkParams<U> cast() const;
};

/// He-normal weights (std dev sqrt(2 / fan_in)), zero biases, BN gamma 1 / beta 0.
template <typename T>
NetworkParams<T> build_network(const NetworkVariant& variant, std::uint64_t seed);

/// Zeroes the last layer's weights and bias so the residual is identically zero.
template <typename T>
void zero_last_layer(NetworkParams<T>& params);

/// Expected shape of one network input sample for the given spatial size.
Shape sample_input_shape(const NetworkVariant& variant, std::size_t rows, std::size_t cols);

/// Residual estimate for one sample. Input (window, H, W) for 2D/2.5D or
/// (1, window, H, W) for 3D; output (H, W) or (window, H, W).
template <typename T>
Tensor<T> forward(const NetworkParams<T>& params, const Tensor<T>& input, BnMode mode = BnMode::infer);

/// Batched forward: input (N, C, spatial...), output (N, 1, spatial...).
template <typename T>
Tensor<T> forward_batch(const NetworkParams<T>& params, const Tensor<T>& batch, BnMode mode = BnMode::infer);

/// Activations kept for backprop.
template <typename T>
struct ForwardTrace {
  std::vector<Tensor<T>> layer_inputs;  // input of each conv
  std::vector<Tensor<T>> conv_outputs;  // raw conv output
  std::vector<Tensor<T>> pre_relu;      // conv (+BN) output, i.e. ReLU input
  std::vector<std::optional<BatchNormState<T>>> updated_bn;
  Tensor<T> output;
};

template <typename T>
ForwardTrace<T> forward_traced(const NetworkParams<T>& params, const Tensor<T>& batch, BnMode mode);

/// Gradients aligned with NetworkParams::trainable().
template <typename T>
using ParamGrads = std::vector<Tensor<T>>;

template <typename T>
ParamGrads<T> zero_grads(const NetworkParams<T>& params);

/// Backprop of `upstream` (shaped like trace.output) through the stack.
template <typename T>
ParamGrads<T> backward(const NetworkParams<T>& params, const ForwardTrace<T>& trace, const Tensor<T>& upstream,
                       BnMode mode);

/// x_hat = y - residual.
template <typename T>
Tensor<T> reconstruct(const Tensor<T>& y, const Tensor<T>& residual);

// Checkpoint file: text manifest terminated by an "end_header" line, then the
// parameters as a little-endian scalar blob in trainable() order followed by
// each BN layer's running mean and variance.

struct CheckpointInfo {
  NetworkVariant variant;
  Precision precision = Precision::f32;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::string extra;  // free-form "key = value" lines echoed into the manifest
};

template <typename T>
void save_checkpoint(const NetworkParams<T>& params, const std::filesystem::path& path,
                     const std::string& extra_manifest = {});

/// Loads into precision T regardless of the stored precision. Throws
/// FormatError (corrupt_header / truncated / shape_mismatch / not_found / io).
template <typename T>
NetworkParams<T> load_checkpoint(const std::filesystem::path& path);

/// Reads only the manifest.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace dlmbir
