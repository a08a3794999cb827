#include "dlmbir/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <utility>

#include "dlmbir/layers.hpp"
#include "dlmbir/trainer.hpp"

namespace dlmbir {

namespace {

using Td = Tensor<double>;
using Fn = std::function<double(const Td&)>;

Td random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Td t(shape);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

double weighted_sum(const Td& a, const Td& w) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * w[i];
  return s;
}

class RowBuilder {
 public:
  RowBuilder(std::string layer, const GradcheckOptions& opt) : opt_(opt) { row_.layer = std::move(layer); }

  void compare(const std::string& argument, const Td& analytic, const Fn& f, const Td& at) {
    const Td numeric = finite_diff_gradient(f, at, opt_.step);
    require_same_shape(analytic.shape(), numeric.shape(), ("gradcheck " + row_.layer + "." + argument).c_str());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double a = analytic[i], n = numeric[i];
      double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), opt_.floor});
      if (std::isnan(rel)) rel = std::numeric_limits<double>::infinity();
      ++row_.checked;
      if (rel > row_.max_rel_error || row_.argument.empty()) {
        row_.max_rel_error = rel;
        row_.argument = argument;
        row_.index = i;
        row_.analytic = a;
        row_.numeric = n;
      }
    }
  }

  GradcheckRow finish() {
    row_.passed = std::isfinite(row_.max_rel_error) && row_.max_rel_error < opt_.tolerance;
    return row_;
  }

 private:
  const GradcheckOptions& opt_;
  GradcheckRow row_;
};

GradcheckRow check_conv(const std::string& name, const Shape& input_shape, const Shape& extent,
                        std::size_t out_channels, const GradcheckOptions& opt, std::mt19937_64& rng) {
  const std::size_t in_channels = input_shape[0];
  Shape wshape{out_channels, in_channels};
  wshape.insert(wshape.end(), extent.begin(), extent.end());
  const Td x = random_tensor(input_shape, rng);
  const ConvKernel<double> kernel(random_tensor(wshape, rng), random_tensor({out_channels}, rng));
  const Td probe = random_tensor(conv_forward(x, kernel).shape(), rng);

  ConvGrads<double> g = conv_backward(x, kernel, probe);
  if (opt.corrupt_backward && extent.size() == 2) g.weights[0] *= 1.1;

  RowBuilder row(name, opt);
  row.compare("input", g.input, [&](const Td& p) { return weighted_sum(conv_forward(p, kernel), probe); }, x);
  row.compare("weights", g.weights,
              [&](const Td& p) { return weighted_sum(conv_forward(x, ConvKernel<double>(p, kernel.bias)), probe); },
              kernel.weights);
  row.compare("bias", g.bias,
              [&](const Td& p) { return weighted_sum(conv_forward(x, ConvKernel<double>(kernel.weights, p)), probe); },
              kernel.bias);
  return row.finish();
}

GradcheckRow check_relu(const GradcheckOptions& opt, std::mt19937_64& rng) {
  Td x = random_tensor({2, 3, 4}, rng);
  // Keep every coordinate at least 0.1 away from the kink.
  for (auto& v : x.data()) v = v >= 0 ? v + 0.1 : v - 0.1;
  const Td probe = random_tensor(x.shape(), rng);
  RowBuilder row("relu", opt);
  row.compare("input", relu_backward(x, probe), [&](const Td& p) { return weighted_sum(relu_forward(p), probe); }, x);
  return row.finish();
}

GradcheckRow check_batchnorm(const GradcheckOptions& opt, std::mt19937_64& rng) {
  const Td x = random_tensor({3, 2, 4, 4}, rng);
  BatchNormState<double> state(2);
  state.gamma = random_tensor({2}, rng, 0.5, 1.5);
  state.beta = random_tensor({2}, rng);
  const Td probe = random_tensor(x.shape(), rng);
  const BatchNormGrads<double> g = batchnorm_backward(x, state, probe, BnMode::train);

  auto eval = [&](const Td& input, const BatchNormState<double>& s) {
    return weighted_sum(batchnorm_forward(input, s, BnMode::train).output, probe);
  };
  RowBuilder row("batchnorm", opt);
  row.compare("input", g.input, [&](const Td& p) { return eval(p, state); }, x);
  row.compare("gamma", g.gamma,
              [&](const Td& p) {
                auto s = state;
                s.gamma = p;
                return eval(x, s);
              },
              state.gamma);
  row.compare("beta", g.beta,
              [&](const Td& p) {
                auto s = state;
                s.beta = p;
                return eval(x, s);
              },
              state.beta);
  return row.finish();
}

GradcheckRow check_loss(const GradcheckOptions& opt, std::mt19937_64& rng) {
  const Td pred = random_tensor({3, 1, 4, 4}, rng);
  const Td target = random_tensor(pred.shape(), rng);
  const double n = static_cast<double>(pred.dim(0));
  Td analytic(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) analytic[i] = (pred[i] - target[i]) / n;
  RowBuilder row("loss", opt);
  row.compare("predicted", analytic, [&](const Td& p) { return batch_loss(p, target); }, pred);
  return row.finish();
}

double min_abs_pre_activation(const NetworkParams<double>& params, const ForwardTrace<double>& trace) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (!params.layers[l].relu) continue;
    const Td& t = params.layers[l].bn ? trace.pre_relu[l] : trace.conv_outputs[l];
    for (double v : t.data()) m = std::min(m, std::abs(v));
  }
  return m;
}

GradcheckRow check_network(const GradcheckOptions& opt) {
  NetworkVariant variant = opt.variant;
  variant.depth = 3;
  variant.width = 3;
  variant.validate();

  const std::size_t rows = 5, cols = 5;
  Shape batch_shape{2};
  const Shape sample = sample_input_shape(variant, rows, cols);
  batch_shape.insert(batch_shape.end(), sample.begin(), sample.end());

  NetworkParams<double> params = build_network<double>(variant, opt.seed);
  // Perturb biases and BN affine terms away from their neutral initialization.
  std::mt19937_64 rng(counter_hash(opt.seed, 0x6e6574));
  for (auto& layer : params.layers) {
    layer.conv.bias = random_tensor(layer.conv.bias.shape(), rng, -0.1, 0.1);
    if (layer.bn) {
      layer.bn->gamma = random_tensor(layer.bn->gamma.shape(), rng, 0.5, 1.5);
      layer.bn->beta = random_tensor(layer.bn->beta.shape(), rng, -0.1, 0.1);
    }
  }

  // Redraw inputs until no ReLU input sits within 1e-3 of the kink.
  Td input, target;
  ForwardTrace<double> trace;
  for (std::uint64_t attempt = 0;; ++attempt) {
    std::mt19937_64 in_rng(counter_hash(opt.seed, 0x696e70 + attempt));
    input = random_tensor(batch_shape, in_rng);
    trace = forward_traced(params, input, BnMode::train);
    target = random_tensor(trace.output.shape(), in_rng);
    if (min_abs_pre_activation(params, trace) >= 1e-3) break;
    if (attempt == 64) throw std::runtime_error("gradcheck: could not draw a kink-free network input");
  }

  Td upstream(trace.output.shape());
  const double n = static_cast<double>(trace.output.dim(0));
  for (std::size_t i = 0; i < upstream.size(); ++i) upstream[i] = (trace.output[i] - target[i]) / n;
  const ParamGrads<double> grads = backward(params, trace, upstream, BnMode::train);

  const auto names = params.trainable_names();
  RowBuilder row("network", opt);
  const auto tensors = std::as_const(params).trainable();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const Fn f = [&, k](const Td& p) {
      NetworkParams<double> q = params;
      *q.trainable()[k] = p;
      return batch_loss(forward_batch(q, input, BnMode::train), target);
    };
    row.compare(names[k], grads[k], f, *tensors[k]);
  }
  return row.finish();
}

}  // namespace

bool GradcheckReport::passed() const {
  return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const GradcheckRow& r) { return r.passed; });
}

const GradcheckRow& GradcheckReport::worst() const {
  if (rows.empty()) throw std::logic_error("empty gradcheck report");
  return *std::max_element(rows.begin(), rows.end(), [](const GradcheckRow& a, const GradcheckRow& b) {
    return a.max_rel_error < b.max_rel_error;
  });
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  if (!(options.step > 0)) throw std::invalid_argument("gradcheck step must be positive");
  std::mt19937_64 rng(options.seed);
  GradcheckReport report;
  report.tolerance = options.tolerance;
  report.rows.push_back(check_conv("conv2d", {2, 5, 6}, {3, 3}, 3, options, rng));
  report.rows.push_back(check_conv("conv3d", {2, 4, 5, 5}, {3, 3, 3}, 2, options, rng));
  report.rows.push_back(check_relu(options, rng));
  report.rows.push_back(check_batchnorm(options, rng));
  report.rows.push_back(check_loss(options, rng));
  report.rows.push_back(check_network(options));
  return report;
}

}  // namespace dlmbir
