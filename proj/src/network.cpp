#include "dlmbir/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <utility>

namespace dlmbir {

std::string to_string(NetworkKind kind) {
  switch (kind) {
    case NetworkKind::two_d:
      return "2d";
    case NetworkKind::two_point_five_d:
      return "2.5d";
    case NetworkKind::three_d:
      return "3d";
  }
  return "?";
}

NetworkKind parse_network_kind(const std::string& name) {
  if (name == "2d" || name == "2D" || name == "TwoD") return NetworkKind::two_d;
  if (name == "2.5d" || name == "2.5D" || name == "TwoPointFiveD") return NetworkKind::two_point_five_d;
  if (name == "3d" || name == "3D" || name == "ThreeD") return NetworkKind::three_d;
  throw std::invalid_argument("unknown network variant '" + name + "' (expected 2d, 2.5d or 3d)");
}

void NetworkVariant::validate() const {
  if (window % 2 == 0) throw std::invalid_argument("network window must be odd, got " + std::to_string(window));
  switch (kind) {
    case NetworkKind::two_d:
      if (window != 1) throw std::invalid_argument("2d network takes a window of 1, got " + std::to_string(window));
      break;
    case NetworkKind::two_point_five_d:
      if (window != 3 && window != 5 && window != 7)
        throw std::invalid_argument("2.5d network window must be 3, 5 or 7, got " + std::to_string(window));
      break;
    case NetworkKind::three_d:
      if (window != 7) throw std::invalid_argument("3d network window must be 7, got " + std::to_string(window));
      break;
  }
  if (depth < 3) throw std::invalid_argument("network depth must be at least 3, got " + std::to_string(depth));
  if (width < 1) throw std::invalid_argument("network width must be positive");
}

std::string NetworkVariant::label() const {
  if (kind == NetworkKind::two_point_five_d) return "2.5d(" + std::to_string(window) + ")";
  return to_string(kind);
}

Shape sample_input_shape(const NetworkVariant& variant, std::size_t rows, std::size_t cols) {
  if (variant.volumetric()) return {1, variant.window, rows, cols};
  return {variant.window, rows, cols};
}

template <typename T>
std::vector<Tensor<T>*> NetworkParams<T>::trainable() {
  std::vector<Tensor<T>*> out;
  for (auto& layer : layers) {
    out.push_back(&layer.conv.weights);
    out.push_back(&layer.conv.bias);
    if (layer.bn) {
      out.push_back(&layer.bn->gamma);
      out.push_back(&layer.bn->beta);
    }
  }
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> NetworkParams<T>::trainable() const {
  std::vector<const Tensor<T>*> out;
  for (const auto& layer : layers) {
    out.push_back(&layer.conv.weights);
    out.push_back(&layer.conv.bias);
    if (layer.bn) {
      out.push_back(&layer.bn->gamma);
      out.push_back(&layer.bn->beta);
    }
  }
  return out;
}

template <typename T>
std::vector<std::string> NetworkParams<T>::trainable_names() const {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l + 1);
    out.push_back(prefix + ".conv.weight");
    out.push_back(prefix + ".conv.bias");
    if (layers[l].bn) {
      out.push_back(prefix + ".bn.gamma");
      out.push_back(prefix + ".bn.beta");
    }
  }
  return out;
}

template <typename T>
std::size_t NetworkParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : trainable()) n += t->size();
  return n;
}

template <typename T>
template <typename U>
NetworkParams<U> NetworkParams<T>::cast() const {
  NetworkParams<U> out;
  out.variant = variant;
  out.seed = seed;
  out.step = step;
  for (const auto& layer : layers) {
    Layer<U> l;
    l.conv = ConvKernel<U>(layer.conv.weights.template cast<U>(), layer.conv.bias.template cast<U>());
    l.relu = layer.relu;
    if (layer.bn) {
      BatchNormState<U> bn;
      bn.gamma = layer.bn->gamma.template cast<U>();
      bn.beta = layer.bn->beta.template cast<U>();
      bn.running_mean = layer.bn->running_mean.template cast<U>();
      bn.running_var = layer.bn->running_var.template cast<U>();
      bn.momentum = layer.bn->momentum;
      bn.epsilon = layer.bn->epsilon;
      l.bn = std::move(bn);
    }
    out.layers.push_back(std::move(l));
  }
  return out;
}

template <typename T>
NetworkParams<T> build_network(const NetworkVariant& variant, std::uint64_t seed) {
  variant.validate();
  NetworkParams<T> params;
  params.variant = variant;
  params.seed = seed;
  const Shape extent = variant.volumetric() ? Shape{3, 3, 3} : Shape{3, 3};
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < variant.depth; ++l) {
    const bool first = l == 0, last = l + 1 == variant.depth;
    const std::size_t in = first ? variant.input_channels() : variant.width;
    const std::size_t out = last ? 1 : variant.width;
    Layer<T> layer;
    layer.conv = ConvKernel<T>(out, in, extent);
    const double fan_in = static_cast<double>(in * shape_product(extent));
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& w : layer.conv.weights.data()) w = static_cast<T>(dist(rng));
    if (!first && !last) layer.bn = BatchNormState<T>(variant.width);
    layer.relu = !last;
    params.layers.push_back(std::move(layer));
  }
  return params;
}

template <typename T>
void zero_last_layer(NetworkParams<T>& params) {
  auto& last = params.layers.back().conv;
  last.weights.fill(T{0});
  last.bias.fill(T{0});
}

namespace {

template <typename T>
void check_batch(const NetworkParams<T>& params, const Tensor<T>& batch) {
  const auto& v = params.variant;
  const std::size_t rank = v.volumetric() ? 5 : 4;
  if (batch.rank() != rank)
    throw ShapeError("network input batch must have rank " + std::to_string(rank) + ", got " +
                     shape_to_string(batch.shape()));
  if (batch.dim(1) != v.input_channels())
    throw ShapeError("network input channel axis has " + std::to_string(batch.dim(1)) + " entries, " + v.label() +
                     " expects " + std::to_string(v.input_channels()));
  if (v.volumetric() && batch.dim(2) != v.window)
    throw ShapeError("3d network input depth axis has " + std::to_string(batch.dim(2)) + " slices, expected " +
                     std::to_string(v.window));
}

template <typename T>
Tensor<T> conv_batch(const Tensor<T>& x, const ConvKernel<T>& kernel, AlignedVector<T>& scratch) {
  const std::size_t n = x.dim(0);
  const Shape sample(x.shape().begin() + 1, x.shape().end());
  const ConvGeometry g = conv_geometry(sample, kernel);
  Shape out_shape = x.shape();
  out_shape[1] = kernel.out_channels();
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < n; ++i) conv_forward_into<T>(x.outer(i), kernel, g, out.outer(i), scratch);
  return out;
}

template <typename T>
void relu_inplace(Tensor<T>& t) {
  for (auto& v : t.data()) v = v > T{0} ? v : T{0};
}

template <typename T>
Tensor<T> run_stack(const NetworkParams<T>& params, const Tensor<T>& batch, BnMode mode, ForwardTrace<T>* trace) {
  check_batch(params, batch);
  AlignedVector<T> scratch;
  Tensor<T> x = batch;
  for (const auto& layer : params.layers) {
    Tensor<T> conv_out = conv_batch(x, layer.conv, scratch);
    Tensor<T> pre;
    std::optional<BatchNormState<T>> updated;
    if (layer.bn) {
      auto r = batchnorm_forward(conv_out, *layer.bn, mode);
      pre = std::move(r.output);
      updated = std::move(r.state);
    }
    Tensor<T> next = layer.bn ? pre : conv_out;
    if (layer.relu) relu_inplace(next);
    if (trace) {
      trace->layer_inputs.push_back(std::move(x));
      trace->conv_outputs.push_back(std::move(conv_out));
      trace->pre_relu.push_back(std::move(pre));
      trace->updated_bn.push_back(std::move(updated));
    }
    x = std::move(next);
  }
  return x;
}

}  // namespace

template <typename T>
Tensor<T> forward_batch(const NetworkParams<T>& params, const Tensor<T>& batch, BnMode mode) {
  return run_stack<T>(params, batch, mode, nullptr);
}

template <typename T>
Tensor<T> forward(const NetworkParams<T>& params, const Tensor<T>& input, BnMode mode) {
  const auto& v = params.variant;
  const std::size_t rank = v.volumetric() ? 4 : 3;
  if (input.rank() != rank)
    throw ShapeError(v.label() + " network input must have rank " + std::to_string(rank) + ", got " +
                     shape_to_string(input.shape()));
  const Shape expected = sample_input_shape(v, input.dim(rank - 2), input.dim(rank - 1));
  require_same_shape(input.shape(), expected, "network input");
  Shape batch_shape = input.shape();
  batch_shape.insert(batch_shape.begin(), 1);
  Tensor<T> out = forward_batch(params, input.reshaped(batch_shape), mode);
  Shape out_shape(out.shape().begin() + 2, out.shape().end());
  out.reshape(out_shape);
  return out;
}

template <typename T>
ForwardTrace<T> forward_traced(const NetworkParams<T>& params, const Tensor<T>& batch, BnMode mode) {
  ForwardTrace<T> trace;
  trace.output = run_stack(params, batch, mode, &trace);
  return trace;
}

template <typename T>
ParamGrads<T> zero_grads(const NetworkParams<T>& params) {
  ParamGrads<T> grads;
  for (const auto* t : params.trainable()) grads.emplace_back(t->shape());
  return grads;
}

template <typename T>
ParamGrads<T> backward(const NetworkParams<T>& params, const ForwardTrace<T>& trace, const Tensor<T>& upstream,
                       BnMode mode) {
  require_same_shape(upstream.shape(), trace.output.shape(), "network backward upstream");
  ParamGrads<T> grads = zero_grads(params);

  // Index of each layer's first trainable tensor.
  std::vector<std::size_t> offset(params.layers.size());
  for (std::size_t l = 0, k = 0; l < params.layers.size(); ++l) {
    offset[l] = k;
    k += params.layers[l].bn ? 4 : 2;
  }

  AlignedVector<T> scratch;
  Tensor<T> g = upstream;
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& layer = params.layers[li];
    const Tensor<T>& conv_out = trace.conv_outputs[li];
    if (layer.relu) {
      const Tensor<T>& relu_in = layer.bn ? trace.pre_relu[li] : conv_out;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(relu_in[i] > T{0})) g[i] = T{0};
    }
    if (layer.bn) {
      auto bg = batchnorm_backward(conv_out, *layer.bn, g, mode);
      grads[offset[li] + 2] = std::move(bg.gamma);
      grads[offset[li] + 3] = std::move(bg.beta);
      g = std::move(bg.input);
    }
    const Tensor<T>& x = trace.layer_inputs[li];
    const Shape sample(x.shape().begin() + 1, x.shape().end());
    const ConvGeometry geom = conv_geometry(sample, layer.conv);
    Tensor<T> gx = li > 0 ? Tensor<T>(x.shape()) : Tensor<T>();
    for (std::size_t n = 0; n < x.dim(0); ++n) {
      std::span<T> gin = li > 0 ? gx.outer(n) : std::span<T>();
      conv_backward_into<T>(x.outer(n), layer.conv, geom, std::as_const(g).outer(n), gin,
                            grads[offset[li]].data(), grads[offset[li] + 1].data(), scratch);
    }
    g = std::move(gx);
  }
  return grads;
}

template <typename T>
Tensor<T> reconstruct(const Tensor<T>& y, const Tensor<T>& residual) {
  require_same_shape(residual.shape(), y.shape(), "reconstruct");
  return subtract(y, residual);
}

#define DLMBIR_INSTANTIATE(T)                                                                                 \
  template struct NetworkParams<T>;                                                                           \
  template NetworkParams<T> build_network<T>(const NetworkVariant&, std::uint64_t);                           \
  template void zero_last_layer(NetworkParams<T>&);                                                           \
  template Tensor<T> forward(const NetworkParams<T>&, const Tensor<T>&, BnMode);                              \
  template Tensor<T> forward_batch(const NetworkParams<T>&, const Tensor<T>&, BnMode);                        \
  template ForwardTrace<T> forward_traced(const NetworkParams<T>&, const Tensor<T>&, BnMode);                 \
  template ParamGrads<T> zero_grads(const NetworkParams<T>&);                                                 \
  template ParamGrads<T> backward(const NetworkParams<T>&, const ForwardTrace<T>&, const Tensor<T>&, BnMode); \
  template Tensor<T> reconstruct(const Tensor<T>&, const Tensor<T>&);

DLMBIR_INSTANTIATE(float)
DLMBIR_INSTANTIATE(double)

template NetworkParams<double> NetworkParams<float>::cast<double>() const;
template NetworkParams<float> NetworkParams<double>::cast<float>() const;
template NetworkParams<float> NetworkParams<float>::cast<float>() const;
template NetworkParams<double> NetworkParams<double>::cast<double>() const;

}  // namespace dlmbir
