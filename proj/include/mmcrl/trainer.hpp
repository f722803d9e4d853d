#pragma once

// Optimization loop. All randomness (split, batch order, reparameterization
// and gate noise) is a pure function of (seed, epoch, step), so a run resumed
// from a checkpoint replays the same trajectory as an uninterrupted one.
//
// Files under checkpoint_dir:
//   train_log.jsonl   one JSON record per epoch
//   checkpoint/       latest state (model, best model, Adam moments, counters)
//   model/            best model by validation loss

#include "mmcrl/dataset.hpp"
#include "mmcrl/model.hpp"
#include "mmcrl/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace mmcrl {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int eval_every = 1;
  /// Empty: nothing written to disk.
  std::string checkpoint_dir;
  /// Evaluations without improvement before stopping.
  int patience = 20;
  double val_fraction = 0.1;
  double clip_norm = 10.0;

  void validate() const;
  /// Adds the batch_size <= training rows check.
  void validate(Eigen::Index n_samples) const;
  Json to_json() const;
  static TrainConfig from_json(const Json& j, const TrainConfig& base);
  static TrainConfig from_json(const Json& j);
};

struct TrainResult {
  /// Best model by validation total loss.
  Model model;
  /// Model after the last completed epoch.
  Model last;
  std::vector<Json> log;
  int best_epoch = -1;
  double best_val = 0.0;
  int epochs_run = 0;
  bool stopped_early = false;
  std::filesystem::path log_path;
  std::filesystem::path checkpoint_path;
  std::filesystem::path model_path;
};

using EpochHook = std::function<void(const Json& record)>;

/// Row indices of the (train, validation) split for a seed.
std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> train_val_split(Eigen::Index n, double val_fraction,
                                                                                 std::uint64_t seed);

/// Trains from scratch, or continues from checkpoint_dir/checkpoint when
/// `resume` is set (the checkpoint's model config must match).
TrainResult train(const MultimodalDataset& data, const ModelConfig& model_config, const TrainConfig& config,
                  bool resume = false, const EpochHook& hook = {});

/// Edge (i, j) iff gates(i, j) > tau, diagonal false.
BoolMatrix binarize_adjacency(const Matrix& gates, double tau);

/// Model config whose dims are taken from the dataset.
ModelConfig model_config_for(const MultimodalDataset& data, const ModelConfig& base);

inline constexpr const char* kTrainLogFile = "train_log.jsonl";
inline constexpr const char* kCheckpointDir = "checkpoint";
inline constexpr const char* kModelDir = "model";

}  // namespace mmcrl
