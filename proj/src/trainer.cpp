#include "dlmbir/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include "dlmbir/eval.hpp"

namespace dlmbir {

std::string to_string(ShardBnMode mode) { return mode == ShardBnMode::frozen ? "frozen" : "per-shard"; }

ShardBnMode parse_shard_bn_mode(const std::string& name) {
  if (name == "frozen") return ShardBnMode::frozen;
  if (name == "per-shard" || name == "per_shard") return ShardBnMode::per_shard;
  throw std::invalid_argument("unknown batch-norm shard mode '" + name + "' (expected frozen or per-shard)");
}

void TrainingConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
    throw std::invalid_argument("ADAM betas must lie in [0, 1)");
  if (!(adam_epsilon > 0)) throw std::invalid_argument("ADAM epsilon must be positive");
  if (shards == 0) throw std::invalid_argument("shard count must be at least 1");
  if (batch_size == 0 || batch_size % shards != 0)
    throw std::invalid_argument("batch size " + std::to_string(batch_size) + " is not divisible into " +
                                std::to_string(shards) + " shards");
  if (!(val_fraction > 0 && val_fraction < 1)) throw std::invalid_argument("validation fraction must lie in (0, 1)");
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(std::span<const Tensor<T>* const> params) {
  AdamState s;
  for (const auto* p : params) {
    s.first_moment.emplace_back(p->shape());
    s.second_moment.emplace_back(p->shape());
  }
  return s;
}

template <typename T>
double loss(std::span<const Tensor<T>> predicted, std::span<const Tensor<T>> targets) {
  if (predicted.empty()) throw std::invalid_argument("loss: empty batch");
  if (predicted.size() != targets.size())
    throw ShapeError("loss: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(targets.size()) + " targets");
  double acc = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    require_same_shape(predicted[i].shape(), targets[i].shape(), "loss");
    for (std::size_t j = 0; j < predicted[i].size(); ++j) {
      const double d = static_cast<double>(predicted[i][j]) - static_cast<double>(targets[i][j]);
      acc += d * d;
    }
  }
  return acc / (2.0 * static_cast<double>(predicted.size()));
}

template <typename T>
double batch_loss(const Tensor<T>& predicted, const Tensor<T>& targets) {
  if (predicted.empty()) throw std::invalid_argument("loss: empty batch");
  require_same_shape(predicted.shape(), targets.shape(), "loss");
  double acc = 0;
  for (std::size_t j = 0; j < predicted.size(); ++j) {
    const double d = static_cast<double>(predicted[j]) - static_cast<double>(targets[j]);
    acc += d * d;
  }
  return acc / (2.0 * static_cast<double>(predicted.dim(0)));
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               const TrainingConfig& config, std::span<const std::string> names) {
  if (params.size() != grads.size())
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  if (state.first_moment.empty()) {
    std::vector<const Tensor<T>*> view(params.begin(), params.end());
    state = AdamState<T>::zeros_like(view);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(grads[i].shape(), params[i]->shape(), "adam_step gradient");
    require_same_shape(state.first_moment[i].shape(), params[i]->shape(), "adam_step state");
    if (!all_finite(grads[i])) throw NonFiniteGradientError(i < names.size() ? names[i] : "parameter " + std::to_string(i));
  }

  state.step_count += 1;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(b1, t), correction2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i][j];
      const double mj = b1 * m[j] + (1 - b1) * g;
      const double vj = b2 * v[j] + (1 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = config.learning_rate * (mj / correction1) / (std::sqrt(vj / correction2) + config.adam_epsilon);
      p[j] = static_cast<T>(p[j] - update);
    }
  }
}

namespace {

template <typename T>
Tensor<T> rows_of(const Tensor<T>& t, std::size_t begin, std::size_t count) {
  Shape shape = t.shape();
  shape[0] = count;
  const std::size_t stride = t.outer_stride();
  return Tensor<T>(shape, std::vector<T>(t.raw() + begin * stride, t.raw() + (begin + count) * stride));
}

template <typename T>
struct ShardOutput {
  double loss = 0;
  ParamGrads<T> grads;
  std::vector<std::optional<BatchNormState<T>>> bn;
};

template <typename T>
ShardOutput<T> run_shard(const NetworkParams<T>& params, const Tensor<T>& inputs, const Tensor<T>& targets,
                         BnMode mode) {
  ShardOutput<T> out;
  ForwardTrace<T> trace = forward_traced(params, inputs, mode);
  require_same_shape(targets.shape(), trace.output.shape(), "shard targets");
  const double n = static_cast<double>(inputs.dim(0));
  Tensor<T> upstream(trace.output.shape());
  double acc = 0;
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    const double d = static_cast<double>(trace.output[i]) - static_cast<double>(targets[i]);
    acc += d * d;
    upstream[i] = static_cast<T>(d / n);
  }
  out.loss = acc / (2 * n);
  out.grads = backward(params, trace, upstream, mode);
  out.bn = std::move(trace.updated_bn);
  return out;
}

}  // namespace

template <typename T>
ShardResult<T> shard_gradients(const NetworkParams<T>& params, const Tensor<T>& inputs, const Tensor<T>& targets,
                               std::size_t shards, ShardBnMode bn_mode, bool threaded) {
  if (shards == 0) throw std::invalid_argument("shard count must be at least 1");
  if (inputs.empty() || inputs.dim(0) % shards != 0)
    throw std::invalid_argument("batch of " + std::to_string(inputs.empty() ? 0 : inputs.dim(0)) +
                                " samples is not divisible into " + std::to_string(shards) + " shards");
  if (targets.empty() || targets.dim(0) != inputs.dim(0))
    throw ShapeError("shard_gradients: targets and inputs disagree on batch size");
  const std::size_t per_shard = inputs.dim(0) / shards;
  const BnMode mode = bn_mode == ShardBnMode::frozen ? BnMode::infer : BnMode::train;

  std::vector<ShardOutput<T>> outputs(shards);
  auto work = [&](std::size_t k) {
    outputs[k] = run_shard(params, rows_of(inputs, k * per_shard, per_shard), rows_of(targets, k * per_shard, per_shard), mode);
  };
  if (threaded && shards > 1) {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(shards);
    for (std::size_t k = 0; k < shards; ++k)
      workers.emplace_back([&, k] {
        try {
          work(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    for (auto& w : workers) w.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (std::size_t k = 0; k < shards; ++k) work(k);
  }

  // Sequential reduction in shard order.
  ShardResult<T> result;
  result.grads = std::move(outputs[0].grads);
  result.loss = outputs[0].loss;
  for (std::size_t k = 1; k < shards; ++k) {
    result.loss += outputs[k].loss;
    for (std::size_t i = 0; i < result.grads.size(); ++i) {
      auto& acc = result.grads[i];
      const auto& g = outputs[k].grads[i];
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
    }
  }
  const T inv = static_cast<T>(1.0 / static_cast<double>(shards));
  result.loss /= static_cast<double>(shards);
  for (auto& g : result.grads)
    for (auto& v : g.data()) v *= inv;

  result.bn_states.resize(params.layers.size());
  if (bn_mode == ShardBnMode::per_shard) {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      if (!params.layers[l].bn) continue;
      BatchNormState<T> merged = *outputs[0].bn[l];
      for (std::size_t k = 1; k < shards; ++k)
        for (std::size_t c = 0; c < merged.channels(); ++c) {
          merged.running_mean[c] += outputs[k].bn[l]->running_mean[c];
          merged.running_var[c] += outputs[k].bn[l]->running_var[c];
        }
      for (std::size_t c = 0; c < merged.channels(); ++c) {
        merged.running_mean[c] *= inv;
        merged.running_var[c] *= inv;
      }
      result.bn_states[l] = std::move(merged);
    }
  }
  return result;
}

template <typename T>
Tensor<T> network_inputs(const NetworkVariant& variant, const PatchSet<T>& set, std::span<const std::size_t> rows) {
  const std::size_t stride = set.inputs.outer_stride();
  std::vector<T> data;
  data.reserve(rows.size() * stride);
  for (auto r : rows) data.insert(data.end(), set.inputs.outer(r).begin(), set.inputs.outer(r).end());
  const std::size_t p = set.patch_size;
  if (variant.volumetric()) return Tensor<T>(Shape{rows.size(), 1, set.window, p, p}, std::move(data));
  return Tensor<T>(Shape{rows.size(), set.window, p, p}, std::move(data));
}

template <typename T>
Tensor<T> network_targets(const NetworkVariant& variant, const PatchSet<T>& set, std::span<const std::size_t> rows) {
  const std::size_t stride = set.targets.outer_stride();
  std::vector<T> data;
  data.reserve(rows.size() * stride);
  for (auto r : rows) data.insert(data.end(), set.targets.outer(r).begin(), set.targets.outer(r).end());
  const std::size_t p = set.patch_size;
  if (variant.volumetric()) return Tensor<T>(Shape{rows.size(), 1, set.window, p, p}, std::move(data));
  return Tensor<T>(Shape{rows.size(), 1, p, p}, std::move(data));
}

template <typename T>
PatchEvaluation evaluate_patches(const NetworkParams<T>& params, const PatchSet<T>& set,
                                 std::span<const std::size_t> rows, HuRange window, HuRange mask) {
  if (rows.empty()) throw std::invalid_argument("evaluate_patches: no rows");
  const auto& v = params.variant;
  const std::size_t p = set.patch_size, plane = p * p;
  const std::size_t chunk = 64;
  double sq = 0, masked_sq = 0;
  std::size_t masked = 0;
  for (std::size_t begin = 0; begin < rows.size(); begin += chunk) {
    const auto part = rows.subspan(begin, std::min(chunk, rows.size() - begin));
    const Tensor<T> pred = forward_batch(params, network_inputs(v, set, part), BnMode::infer);
    const Tensor<T> target = network_targets(v, set, part);
    const std::size_t out_slices = set.target_slices();
    for (std::size_t n = 0; n < part.size(); ++n) {
      const auto in = set.inputs.outer(part[n]);
      for (std::size_t s = 0; s < out_slices; ++s) {
        const std::size_t in_slice = v.volumetric() ? s : set.window / 2;
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t o = (n * out_slices + s) * plane + i;
          const double err = static_cast<double>(pred[o]) - static_cast<double>(target[o]);
          sq += err * err;
          const double truth = static_cast<double>(in[in_slice * plane + i]) - static_cast<double>(target[o]);
          const double hu = window.lo + truth * (window.hi - window.lo);
          if (hu >= mask.lo && hu <= mask.hi) {
            masked_sq += err * err;
            ++masked;
          }
        }
      }
    }
  }
  PatchEvaluation e;
  e.loss = sq / (2.0 * static_cast<double>(rows.size()));
  e.masked_psnr_db = masked ? psnr(masked_sq / static_cast<double>(masked)) : std::numeric_limits<double>::quiet_NaN();
  return e;
}

DataSplit split_dataset(std::size_t count, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0 && val_fraction < 1)) throw std::invalid_argument("validation fraction must lie in (0, 1)");
  std::vector<std::size_t> all(count);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const std::uint64_t split_seed = counter_hash(seed, 0x5EED5EEDull);
  std::sort(all.begin(), all.end(), [&](std::size_t a, std::size_t b) {
    const auto ha = counter_hash(split_seed, a), hb = counter_hash(split_seed, b);
    return ha != hb ? ha < hb : a < b;
  });
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(count) * val_fraction));
  DataSplit split;
  split.validation.assign(all.begin(), all.begin() + static_cast<long>(n_val));
  split.train.assign(all.begin() + static_cast<long>(n_val), all.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

std::vector<std::size_t> epoch_order(std::span<const std::size_t> rows, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(rows.begin(), rows.end());
  const std::uint64_t epoch_seed = counter_hash(seed, 0xE90C0000ull + epoch);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ha = counter_hash(epoch_seed, a), hb = counter_hash(epoch_seed, b);
    return ha != hb ? ha < hb : a < b;
  });
  return order;
}

template <typename T>
TrainResult<T> train(const PatchSet<T>& dataset, const NetworkVariant& variant, const TrainingConfig& config,
                     const CheckpointCallback<T>& on_checkpoint) {
  variant.validate();
  config.validate();
  if (dataset.size() == 0) throw std::invalid_argument("training set is empty");
  if (dataset.window != variant.window)
    throw ShapeError("patches carry " + std::to_string(dataset.window) + " slices but the " + variant.label() +
                     " network takes " + std::to_string(variant.window));
  if (dataset.volumetric_target != variant.volumetric() && variant.window > 1)
    throw ShapeError(std::string("patch targets are ") + (dataset.volumetric_target ? "volumetric" : "single-slice") +
                     " but the " + variant.label() + " network emits " +
                     (variant.volumetric() ? "volumetric" : "single-slice") + " residuals");
  if (dataset.patch_size < 3) throw std::invalid_argument("patches must be at least 3x3");

  TrainResult<T> result{build_network<T>(variant, config.seed), {}};
  if (config.epochs == 0) return result;

  const DataSplit split = split_dataset(dataset.size(), config.val_fraction, config.seed);
  if (split.train.empty() || split.validation.empty())
    throw std::invalid_argument("dataset of " + std::to_string(dataset.size()) +
                                " patches is too small for a train/validation split");
  const std::size_t batch =
      std::min(config.batch_size, split.train.size() / config.shards * config.shards);
  if (batch == 0) throw std::invalid_argument("training split is smaller than the shard count");

  auto& params = result.params;
  const auto names = params.trainable_names();
  AdamState<T> adam = AdamState<T>::zeros_like(std::as_const(params).trainable());
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(split.train, config.seed, epoch);
    double loss_sum = 0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin + batch <= order.size(); begin += batch) {
      const std::span<const std::size_t> rows(order.data() + begin, batch);
      auto shard = shard_gradients(params, network_inputs(variant, dataset, rows),
                                   network_targets(variant, dataset, rows), config.shards, config.bn_mode,
                                   config.threaded_shards);
      auto trainable = params.trainable();
      adam_step<T>(trainable, shard.grads, adam, config, names);
      for (std::size_t l = 0; l < params.layers.size(); ++l)
        if (shard.bn_states[l]) {
          params.layers[l].bn->running_mean = std::move(shard.bn_states[l]->running_mean);
          params.layers[l].bn->running_var = std::move(shard.bn_states[l]->running_var);
        }
      params.step += 1;
      loss_sum += shard.loss;
      ++steps;
      if (on_checkpoint && config.checkpoint_every > 0 && params.step % config.checkpoint_every == 0)
        on_checkpoint(params);
    }
    const PatchEvaluation val = evaluate_patches(params, dataset, split.validation, config.hu_window, config.hu_mask);
    LossRecord rec;
    rec.step = params.step;
    rec.epoch = epoch + 1;
    rec.train_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    rec.val_loss = val.loss;
    rec.val_psnr_db = val.masked_psnr_db;
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rec);
  }
  return result;
}

void write_history_csv(std::span<const LossRecord> history, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError(FormatError::Kind::io, "cannot open '" + path.string() + "' for writing");
  os.precision(10);
  os << "step,epoch,train_loss,val_loss,val_psnr_db,wall_time_s\n";
  for (const auto& r : history)
    os << r.step << ',' << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_psnr_db << ','
       << r.wall_time_s << '\n';
  if (!os) throw FormatError(FormatError::Kind::io, "failed writing '" + path.string() + "'");
}

#define DLMBIR_INSTANTIATE(T)                                                                                   \
  template struct AdamState<T>;                                                                                 \
  template double loss(std::span<const Tensor<T>>, std::span<const Tensor<T>>);                                 \
  template double batch_loss(const Tensor<T>&, const Tensor<T>&);                                               \
  template void adam_step(std::span<Tensor<T>* const>, std::span<const Tensor<T>>, AdamState<T>&,               \
                          const TrainingConfig&, std::span<const std::string>);                                 \
  template ShardResult<T> shard_gradients(const NetworkParams<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                          std::size_t, ShardBnMode, bool);                                      \
  template Tensor<T> network_inputs(const NetworkVariant&, const PatchSet<T>&, std::span<const std::size_t>);   \
  template Tensor<T> network_targets(const NetworkVariant&, const PatchSet<T>&, std::span<const std::size_t>);  \
  template PatchEvaluation evaluate_patches(const NetworkParams<T>&, const PatchSet<T>&,                        \
                                            std::span<const std::size_t>, HuRange, HuRange);                    \
  template TrainResult<T> train(const PatchSet<T>&, const NetworkVariant&, const TrainingConfig&,               \
                                const CheckpointCallback<T>&);

DLMBIR_INSTANTIATE(float)
DLMBIR_INSTANTIATE(double)

}  // namespace dlmbir
