#include "dlmbir/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace dlmbir {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Unrolls the receptive fields of output plane `d` into a (C_in * taps) x (rows * cols)
// matrix; out-of-volume taps read as zero.
template <typename T>
void im2col_plane(const T* in, const ConvGeometry& g, std::size_t d, T* cols) {
  const long pd = static_cast<long>(g.kd / 2), ph = static_cast<long>(g.kh / 2), pw = static_cast<long>(g.kw / 2);
  const long H = static_cast<long>(g.rows), W = static_cast<long>(g.cols), D = static_cast<long>(g.depth);
  const std::size_t hw = g.plane();
  T* row = cols;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    for (long a = 0; a < static_cast<long>(g.kd); ++a) {
      const long z = static_cast<long>(d) + a - pd;
      for (long b = 0; b < static_cast<long>(g.kh); ++b) {
        for (long c = 0; c < static_cast<long>(g.kw); ++c, row += hw) {
          if (z < 0 || z >= D) {
            std::fill(row, row + hw, T{0});
            continue;
          }
          const T* src_plane = in + (ci * g.depth + static_cast<std::size_t>(z)) * hw;
          const long x0 = std::max(0L, pw - c), x1 = std::min(W, W + pw - c);
          for (long y = 0; y < H; ++y) {
            T* dst = row + y * W;
            const long sy = y + b - ph;
            if (sy < 0 || sy >= H) {
              std::fill(dst, dst + W, T{0});
              continue;
            }
            const T* src = src_plane + sy * W + (x0 + c - pw);
            std::fill(dst, dst + x0, T{0});
            std::copy(src, src + (x1 - x0), dst + x0);
            std::fill(dst + x1, dst + W, T{0});
          }
        }
      }
    }
  }
}

// Adjoint of im2col_plane: scatters column gradients back into the input gradient.
template <typename T>
void col2im_plane(const T* cols, const ConvGeometry& g, std::size_t d, T* grad_in) {
  const long pd = static_cast<long>(g.kd / 2), ph = static_cast<long>(g.kh / 2), pw = static_cast<long>(g.kw / 2);
  const long H = static_cast<long>(g.rows), W = static_cast<long>(g.cols), D = static_cast<long>(g.depth);
  const std::size_t hw = g.plane();
  const T* row = cols;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    for (long a = 0; a < static_cast<long>(g.kd); ++a) {
      const long z = static_cast<long>(d) + a - pd;
      for (long b = 0; b < static_cast<long>(g.kh); ++b) {
        for (long c = 0; c < static_cast<long>(g.kw); ++c, row += hw) {
          if (z < 0 || z >= D) continue;
          T* dst_plane = grad_in + (ci * g.depth + static_cast<std::size_t>(z)) * hw;
          const long x0 = std::max(0L, pw - c), x1 = std::min(W, W + pw - c);
          for (long y = 0; y < H; ++y) {
            const long sy = y + b - ph;
            if (sy < 0 || sy >= H) continue;
            const T* src = row + y * W + x0;
            T* dst = dst_plane + sy * W + (x0 + c - pw);
            for (long x = 0; x < x1 - x0; ++x) dst[x] += src[x];
          }
        }
      }
    }
  }
}

const char* axis_name(std::size_t rank, std::size_t axis) {
  if (axis == 0) return "channel";
  if (rank == 4) return axis == 1 ? "depth" : axis == 2 ? "rows" : "cols";
  return axis == 1 ? "rows" : "cols";
}

}  // namespace

template <typename T>
ConvKernel<T>::ConvKernel(std::size_t out_channels, std::size_t in_channels, const Shape& extent) {
  Shape shape{out_channels, in_channels};
  shape.insert(shape.end(), extent.begin(), extent.end());
  weights = Tensor<T>(shape);
  bias = Tensor<T>(Shape{out_channels});
  validate();
}

template <typename T>
ConvKernel<T>::ConvKernel(Tensor<T> w, Tensor<T> b) : weights(std::move(w)), bias(std::move(b)) {
  validate();
}

template <typename T>
void ConvKernel<T>::validate() const {
  if (weights.rank() != 4 && weights.rank() != 5)
    throw ShapeError("conv weights must be (out, in, kh, kw) or (out, in, kd, kh, kw), got " +
                     shape_to_string(weights.shape()));
  for (std::size_t axis = 2; axis < weights.rank(); ++axis)
    if (weights.dim(axis) % 2 == 0)
      throw std::invalid_argument("conv kernel extent must be odd on every axis, got " +
                                  shape_to_string(weights.shape()));
  if (bias.rank() != 1 || bias.dim(0) != weights.dim(0))
    throw ShapeError("conv bias shape " + shape_to_string(bias.shape()) + " does not match " +
                     std::to_string(weights.dim(0)) + " output channels");
}

template <typename T>
ConvGeometry conv_geometry(const Shape& input_shape, const ConvKernel<T>& kernel) {
  const std::size_t spatial = kernel.spatial_rank();
  if (input_shape.size() != spatial + 1)
    throw ShapeError("conv input " + shape_to_string(input_shape) + " must have rank " +
                     std::to_string(spatial + 1) + " for a " + std::to_string(spatial) + "D kernel");
  if (input_shape[0] != kernel.in_channels())
    throw ShapeError(std::string("conv input axis 'channel' has ") + std::to_string(input_shape[0]) +
                     " entries but the kernel expects " + std::to_string(kernel.in_channels()));
  for (std::size_t axis = 1; axis < input_shape.size(); ++axis)
    if (input_shape[axis] == 0)
      throw ShapeError(std::string("conv input axis '") + axis_name(input_shape.size(), axis) + "' is empty");

  ConvGeometry g;
  g.in_channels = kernel.in_channels();
  g.out_channels = kernel.out_channels();
  const Shape ext = kernel.extent();
  if (spatial == 3) {
    g.depth = input_shape[1];
    g.rows = input_shape[2];
    g.cols = input_shape[3];
    g.kd = ext[0];
    g.kh = ext[1];
    g.kw = ext[2];
  } else {
    g.rows = input_shape[1];
    g.cols = input_shape[2];
    g.kh = ext[0];
    g.kw = ext[1];
  }
  return g;
}

template <typename T>
void conv_forward_into(std::span<const T> input, const ConvKernel<T>& kernel, const ConvGeometry& g,
                       std::span<T> output, AlignedVector<T>& scratch) {
  const std::size_t taps = g.in_channels * g.kd * g.kh * g.kw;
  const std::size_t hw = g.plane();
  scratch.resize(taps * hw);
  Eigen::Map<const RowMat<T>> weights(kernel.weights.raw(), g.out_channels, taps);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(kernel.bias.raw(), g.out_channels);
  Eigen::Map<RowMat<T>> cols(scratch.data(), taps, hw);
  if constexpr (std::is_same_v<T, double>) {
    for (std::size_t d = 0; d < g.depth; ++d) {
      im2col_plane(input.data(), g, d, scratch.data());
      StridedMap<T> out(output.data() + d * hw, g.out_channels, hw, Eigen::OuterStride<>(g.voxels()));
      out.noalias() = weights * cols;
      out.colwise() += bias;
    }
  } else {
    // Float storage, double accumulation.
    thread_local RowMat<double> wide_weights, wide_cols, wide_out;
    wide_weights = weights.template cast<double>();
    const Eigen::VectorXd wide_bias = bias.template cast<double>();
    for (std::size_t d = 0; d < g.depth; ++d) {
      im2col_plane(input.data(), g, d, scratch.data());
      wide_cols = cols.template cast<double>();
      wide_out.noalias() = wide_weights * wide_cols;
      wide_out.colwise() += wide_bias;
      StridedMap<T> out(output.data() + d * hw, g.out_channels, hw, Eigen::OuterStride<>(g.voxels()));
      out = wide_out.template cast<T>();
    }
  }
}

template <typename T>
void conv_backward_into(std::span<const T> input, const ConvKernel<T>& kernel, const ConvGeometry& g,
                        std::span<const T> upstream, std::span<T> grad_input, std::span<T> grad_weights,
                        std::span<T> grad_bias, AlignedVector<T>& scratch) {
  const std::size_t taps = g.in_channels * g.kd * g.kh * g.kw;
  const std::size_t hw = g.plane();
  scratch.resize(2 * taps * hw);
  Eigen::Map<const RowMat<T>> weights(kernel.weights.raw(), g.out_channels, taps);
  Eigen::Map<RowMat<T>> gw(grad_weights.data(), g.out_channels, taps);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(grad_bias.data(), g.out_channels);
  Eigen::Map<RowMat<T>> cols(scratch.data(), taps, hw);
  Eigen::Map<RowMat<T>> dcols(scratch.data() + taps * hw, taps, hw);
  if (!grad_input.empty()) std::fill(grad_input.begin(), grad_input.end(), T{0});
  for (std::size_t d = 0; d < g.depth; ++d) {
    ConstStridedMap<T> up(upstream.data() + d * hw, g.out_channels, hw, Eigen::OuterStride<>(g.voxels()));
    im2col_plane(input.data(), g, d, scratch.data());
    gw.noalias() += up * cols.transpose();
    gb += up.rowwise().sum();
    if (!grad_input.empty()) {
      dcols.noalias() = weights.transpose() * up;
      col2im_plane(dcols.data(), g, d, grad_input.data());
    }
  }
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const ConvKernel<T>& kernel) {
  kernel.validate();
  const ConvGeometry g = conv_geometry(input.shape(), kernel);
  Shape out_shape = input.shape();
  out_shape[0] = g.out_channels;
  Tensor<T> out(out_shape);
  AlignedVector<T> scratch;
  conv_forward_into<T>(input.data(), kernel, g, out.data(), scratch);
  return out;
}

template <typename T>
ConvGrads<T> conv_backward(const Tensor<T>& input, const ConvKernel<T>& kernel, const Tensor<T>& upstream) {
  kernel.validate();
  const ConvGeometry g = conv_geometry(input.shape(), kernel);
  Shape out_shape = input.shape();
  out_shape[0] = g.out_channels;
  require_same_shape(upstream.shape(), out_shape, "conv_backward upstream");
  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(kernel.weights.shape()), Tensor<T>(kernel.bias.shape())};
  AlignedVector<T> scratch;
  conv_backward_into<T>(input.data(), kernel, g, upstream.data(), grads.input.data(), grads.weights.data(),
                        grads.bias.data(), scratch);
  return grads;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& upstream) {
  require_same_shape(upstream.shape(), input.shape(), "relu_backward");
  Tensor<T> grad(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) grad[i] = input[i] > T{0} ? upstream[i] : T{0};
  return grad;
}

template <typename T>
BatchNormState<T>::BatchNormState(std::size_t channels)
    : gamma(Shape{channels}, T{1}),
      beta(Shape{channels}, T{0}),
      running_mean(Shape{channels}, T{0}),
      running_var(Shape{channels}, T{1}) {}

namespace {

struct BnLayout {
  std::size_t batch, channels, spatial;
};

template <typename T>
BnLayout bn_layout(const Tensor<T>& input, const BatchNormState<T>& state) {
  if (input.empty() || input.rank() < 2)
    throw std::invalid_argument("batchnorm: input must be (N, C, ...) with N >= 1, got " +
                                shape_to_string(input.shape()));
  if (input.dim(1) != state.channels())
    throw ShapeError("batchnorm: channel axis has " + std::to_string(input.dim(1)) + " entries, state has " +
                     std::to_string(state.channels()));
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  return {batch, channels, input.size() / (batch * channels)};
}

template <typename T>
struct ChannelStats {
  std::vector<double> mean, var;
};

template <typename T>
ChannelStats<T> batch_stats(const Tensor<T>& input, const BnLayout& l) {
  ChannelStats<T> s{std::vector<double>(l.channels, 0.0), std::vector<double>(l.channels, 0.0)};
  const double count = static_cast<double>(l.batch * l.spatial);
  for (std::size_t n = 0; n < l.batch; ++n)
    for (std::size_t c = 0; c < l.channels; ++c) {
      const T* p = input.raw() + (n * l.channels + c) * l.spatial;
      double acc = 0;
      for (std::size_t i = 0; i < l.spatial; ++i) acc += p[i];
      s.mean[c] += acc;
    }
  for (auto& m : s.mean) m /= count;
  for (std::size_t n = 0; n < l.batch; ++n)
    for (std::size_t c = 0; c < l.channels; ++c) {
      const T* p = input.raw() + (n * l.channels + c) * l.spatial;
      double acc = 0;
      for (std::size_t i = 0; i < l.spatial; ++i) {
        const double dv = p[i] - s.mean[c];
        acc += dv * dv;
      }
      s.var[c] += acc;
    }
  for (auto& v : s.var) v /= count;
  return s;
}

}  // namespace

template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor<T>& input, const BatchNormState<T>& state, BnMode mode) {
  const BnLayout l = bn_layout(input, state);
  BatchNormResult<T> result{Tensor<T>(input.shape()), state};
  std::vector<double> mean(l.channels), inv_std(l.channels);
  if (mode == BnMode::train) {
    const auto stats = batch_stats(input, l);
    const double count = static_cast<double>(l.batch * l.spatial);
    const double unbias = count > 1 ? count / (count - 1) : 1.0;
    for (std::size_t c = 0; c < l.channels; ++c) {
      mean[c] = stats.mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.var[c] + state.epsilon);
      result.state.running_mean[c] =
          static_cast<T>(state.momentum * state.running_mean[c] + (1 - state.momentum) * stats.mean[c]);
      result.state.running_var[c] =
          static_cast<T>(state.momentum * state.running_var[c] + (1 - state.momentum) * stats.var[c] * unbias);
    }
  } else {
    for (std::size_t c = 0; c < l.channels; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(std::max<double>(state.running_var[c], 0.0) + state.epsilon);
    }
  }
  for (std::size_t n = 0; n < l.batch; ++n)
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t off = (n * l.channels + c) * l.spatial;
      const T scale = static_cast<T>(state.gamma[c] * inv_std[c]);
      const T shift = static_cast<T>(state.beta[c] - state.gamma[c] * inv_std[c] * mean[c]);
      const T* src = input.raw() + off;
      T* dst = result.output.raw() + off;
      for (std::size_t i = 0; i < l.spatial; ++i) dst[i] = src[i] * scale + shift;
    }
  return result;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& input, const BatchNormState<T>& state,
                                     const Tensor<T>& upstream, BnMode mode) {
  const BnLayout l = bn_layout(input, state);
  require_same_shape(upstream.shape(), input.shape(), "batchnorm_backward upstream");
  BatchNormGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(Shape{l.channels}), Tensor<T>(Shape{l.channels})};

  std::vector<double> mean(l.channels), inv_std(l.channels);
  if (mode == BnMode::train) {
    const auto stats = batch_stats(input, l);
    for (std::size_t c = 0; c < l.channels; ++c) {
      mean[c] = stats.mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.var[c] + state.epsilon);
    }
  } else {
    for (std::size_t c = 0; c < l.channels; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(std::max<double>(state.running_var[c], 0.0) + state.epsilon);
    }
  }

  // Per-channel sums of upstream and upstream * xhat.
  std::vector<double> sum_up(l.channels, 0.0), sum_up_xhat(l.channels, 0.0);
  for (std::size_t n = 0; n < l.batch; ++n)
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t off = (n * l.channels + c) * l.spatial;
      double su = 0, sux = 0;
      for (std::size_t i = 0; i < l.spatial; ++i) {
        const double u = upstream[off + i];
        su += u;
        sux += u * (input[off + i] - mean[c]) * inv_std[c];
      }
      sum_up[c] += su;
      sum_up_xhat[c] += sux;
    }
  for (std::size_t c = 0; c < l.channels; ++c) {
    grads.gamma[c] = static_cast<T>(sum_up_xhat[c]);
    grads.beta[c] = static_cast<T>(sum_up[c]);
  }

  const double count = static_cast<double>(l.batch * l.spatial);
  for (std::size_t n = 0; n < l.batch; ++n)
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t off = (n * l.channels + c) * l.spatial;
      const double g = state.gamma[c] * inv_std[c];
      if (mode == BnMode::infer) {
        for (std::size_t i = 0; i < l.spatial; ++i) grads.input[off + i] = static_cast<T>(upstream[off + i] * g);
        continue;
      }
      const double mu = sum_up[c] / count, mux = sum_up_xhat[c] / count;
      for (std::size_t i = 0; i < l.spatial; ++i) {
        const double xhat = (input[off + i] - mean[c]) * inv_std[c];
        grads.input[off + i] = static_cast<T>(g * (upstream[off + i] - mu - xhat * mux));
      }
    }
  return grads;
}

Tensor<double> finite_diff_gradient(const std::function<double(const Tensor<double>&)>& f,
                                    const Tensor<double>& params, double step) {
  if (!(step > 0)) throw std::invalid_argument("finite_diff_gradient: step must be positive");
  Tensor<double> grad(params.shape());
  Tensor<double> probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = f(probe);
    probe[i] = orig - step;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw std::domain_error("finite_diff_gradient: non-finite function value at coordinate " + std::to_string(i));
    grad[i] = (up - down) / (2 * step);
  }
  return grad;
}

#define DLMBIR_INSTANTIATE(T)                                                                                \
  template struct ConvKernel<T>;                                                                             \
  template struct BatchNormState<T>;                                                                         \
  template ConvGeometry conv_geometry(const Shape&, const ConvKernel<T>&);                                   \
  template Tensor<T> conv_forward(const Tensor<T>&, const ConvKernel<T>&);                                   \
  template ConvGrads<T> conv_backward(const Tensor<T>&, const ConvKernel<T>&, const Tensor<T>&);             \
  template void conv_forward_into(std::span<const T>, const ConvKernel<T>&, const ConvGeometry&, std::span<T>, \
                                  AlignedVector<T>&);                                                          \
  template void conv_backward_into(std::span<const T>, const ConvKernel<T>&, const ConvGeometry&,            \
                                   std::span<const T>, std::span<T>, std::span<T>, std::span<T>,             \
                                   AlignedVector<T>&);                                                         \
  template Tensor<T> relu_forward(const Tensor<T>&);                                                         \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                      \
  template BatchNormResult<T> batchnorm_forward(const Tensor<T>&, const BatchNormState<T>&, BnMode);         \
  template BatchNormGrads<T> batchnorm_backward(const Tensor<T>&, const BatchNormState<T>&, const Tensor<T>&, \
                                                BnMode);

DLMBIR_INSTANTIATE(float)
DLMBIR_INSTANTIATE(double)

}  // namespace dlmbir
