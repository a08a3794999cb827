#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dlmbir/data_sim.hpp"
#include "dlmbir/network.hpp"

namespace dlmbir {

/// How batch normalization behaves inside a shard during training.
///   per_shard -- shard-local batch statistics (what separate devices would see)
///   frozen    -- running statistics; makes the K-shard average exactly the full-batch gradient
enum class ShardBnMode { per_shard, frozen };

std::string to_string(ShardBnMode mode);
ShardBnMode parse_shard_bn_mode(const std::string& name);

struct TrainingConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 64;  // N_T per optimizer step, split evenly across shards
  std::size_t shards = 1;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  ShardBnMode bn_mode = ShardBnMode::per_shard;
  std::size_t checkpoint_every = 0;  // steps; 0 disables periodic checkpoints
  bool threaded_shards = true;
  HuRange hu_window = kDefaultHuWindow;
  HuRange hu_mask = kDefaultHuMask;

  void validate() const;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::uint64_t step_count = 0;

  static AdamState zeros_like(std::span<const Tensor<T>* const> params);
};

struct LossRecord {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_psnr_db = 0;
  double wall_time_s = 0;
};

/// (1 / 2N) * sum_i ||predicted_i - target_i||^2 over a batch of N samples.
template <typename T>
double loss(std::span<const Tensor<T>> predicted, std::span<const Tensor<T>> targets);

/// Same objective with the batch stacked along axis 0.
template <typename T>
double batch_loss(const Tensor<T>& predicted, const Tensor<T>& targets);

/// One bias-corrected ADAM update, applied in place. Gradients are checked
/// for finiteness before anything is modified.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               const TrainingConfig& config, std::span<const std::string> names = {});

template <typename T>
struct ShardResult {
  double loss = 0;
  ParamGrads<T> grads;
  /// Merged running statistics per layer (empty optionals for non-BN layers).
  std::vector<std::optional<BatchNormState<T>>> bn_states;
};

/// Splits the batch into `shards` contiguous equal parts, computes each
/// part's loss gradient independently, and averages in shard order.
/// `inputs` is (N, C, spatial...), `targets` matches the network output.
template <typename T>
ShardResult<T> shard_gradients(const NetworkParams<T>& params, const Tensor<T>& inputs, const Tensor<T>& targets,
                               std::size_t shards, ShardBnMode bn_mode, bool threaded = true);

/// Reshapes a patch-set slice into the network's batch layout.
template <typename T>
Tensor<T> network_inputs(const NetworkVariant& variant, const PatchSet<T>& set, std::span<const std::size_t> rows);
template <typename T>
Tensor<T> network_targets(const NetworkVariant& variant, const PatchSet<T>& set, std::span<const std::size_t> rows);

struct PatchEvaluation {
  double loss = 0;
  double masked_psnr_db = 0;  // NaN when no reference voxel falls inside the mask
};

/// Infer-mode loss and masked PSNR of the reconstructed target slices.
template <typename T>
PatchEvaluation evaluate_patches(const NetworkParams<T>& params, const PatchSet<T>& set,
                                 std::span<const std::size_t> rows, HuRange window = kDefaultHuWindow,
                                 HuRange mask = kDefaultHuMask);

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

DataSplit split_dataset(std::size_t count, double val_fraction, std::uint64_t seed);

/// Epoch permutation from the counter-based generator; independent of shard count.
std::vector<std::size_t> epoch_order(std::span<const std::size_t> rows, std::uint64_t seed, std::size_t epoch);

template <typename T>
using CheckpointCallback = std::function<void(const NetworkParams<T>&)>;

template <typename T>
struct TrainResult {
  NetworkParams<T> params;
  std::vector<LossRecord> history;
};

template <typename T>
TrainResult<T> train(const PatchSet<T>& dataset, const NetworkVariant& variant, const TrainingConfig& config,
                     const CheckpointCallback<T>& on_checkpoint = {});

/// Columns: step,epoch,train_loss,val_loss,val_psnr_db,wall_time_s
void write_history_csv(std::span<const LossRecord> history, const std::filesystem::path& path);

}  // namespace dlmbir
