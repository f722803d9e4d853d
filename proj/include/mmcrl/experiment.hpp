#pragma once

// Training recipes and model evaluation shared by the CLI and the
// acceptance runs.

#include "mmcrl/dataset.hpp"
#include "mmcrl/metrics.hpp"
#include "mmcrl/model.hpp"
#include "mmcrl/trainer.hpp"

#include <string>

namespace mmcrl {

struct Recipe {
  ModelConfig model;
  TrainConfig train;

  Json to_json() const;
  /// {"model": {...}, "train": {...}}; both optional, strict inside.
  static Recipe from_json(const Json& j, const Recipe& base);
};

/// Fully connected encoders for the synthetic cases.
Recipe synthetic_recipe();
/// Convolutional encoders for the two image modalities.
Recipe image_recipe();

/// MCC and R2 need ground-truth latents; SHD needs the ground-truth graph.
/// For the graph comparison each estimated latent is matched to a true one
/// inside its own modality block.
metrics::MetricsReport evaluate_model(Model& model, const MultimodalDataset& data, std::uint64_t seed = 0);

/// {"nodes", "edges": [{"from", "to", "gate"}], "tau"}; edges are gates above tau.
Json estimated_graph_json(Model& model);

}  // namespace mmcrl
