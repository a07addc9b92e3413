#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "relight/dataset.hpp"
#include "relight/diffusion.hpp"
#include "relight/network.hpp"
#include "relight/serialization.hpp"

namespace relight {

inline constexpr int kCheckpointVersion = 1;

struct TrainConfig {
  int steps = 50000;
  int batch_size = 8;
  double learning_rate = 1e-4;
  double relight_ratio = 0.7;
  double dropout_p = 0.1;
  std::optional<double> ema_decay;
  int checkpoint_every = 1000;
  std::uint64_t seed = 0;
  bool clip_grad = false;
  double clip_norm = 1.0;
  // Noise schedule used for training; sampling reads it back from the checkpoint.
  int schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  /// Wall-clock budget in seconds; 0 disables it. Training stops at the
  /// first step boundary past the budget.
  double time_budget_s = 0.0;

  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& config);

struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  static AdamState zeros_like(const ModelParams& params);
  bool operator==(const AdamState&) const = default;
};

struct Checkpoint {
  ModelParams params;
  AdamState adam;
  std::optional<ModelParams> ema;
  int step = 0;
  TrainConfig config;
  std::uint64_t manifest_hash = 0;

  /// EMA weights when present, else the raw parameters.
  const ModelParams& sampling_params() const { return ema ? *ema : params; }
  bool operator==(const Checkpoint&) const = default;
};

Checkpoint initial_checkpoint(const UNetConfig& model, const TrainConfig& config, std::uint64_t manifest_hash = 0);

struct StepLosses {
  double total = 0.0;
  double relight = 0.0;  ///< mean over relight samples, NaN if none
  double t2i = 0.0;      ///< mean over text-to-image samples, NaN if none
  int relight_count = 0;
  int t2i_count = 0;
};

/// Forward + backward on one batch; returns the losses and fills `grads`.
StepLosses compute_gradients(const ModelParams& params, const TrainingBatch& batch, Gradients& grads);

/// One Adam update (beta1 0.9, beta2 0.999, eps 1e-8) with optional clipping
/// and EMA; increments ckpt.step.
void apply_update(Checkpoint& ckpt, Gradients& grads, double learning_rate);

/// compute_gradients + apply_update. Throws NonFiniteLoss.
StepLosses train_step(Checkpoint& ckpt, const TrainingBatch& batch);

struct TrainCallbacks {
  std::function<void(int step, const StepLosses&)> on_step;
};

/// Runs config.steps updates (or until the time budget) from `start`,
/// appending to out_dir/train_log.csv. Every checkpoint_every steps the
/// state is written to out_dir/checkpoint.rlck (overwritten in place), and
/// the final state to out_dir/final.rlck.
Checkpoint train(const LoadedDataset& data, const RealDomainSet& real, Checkpoint start,
                 const std::filesystem::path& out_dir, const TrainCallbacks& callbacks = {});

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train");

}  // namespace relight
