#pragma once

#include "mmcrl/common.hpp"
#include "mmcrl/graph.hpp"
#include "mmcrl/tensor_store.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace mmcrl {

/// Per-modality observations with optional ground truth.
///
/// On disk (see TensorStore): fields `x0..x{M-1}`, and when present
/// `latents`, `exogenous`, `noise`, `graph` (0/1 adjacency as float32).
/// `meta` carries num_modalities, latent_dims, exo_dims, modality_of and
/// the provenance record.
struct MultimodalDataset {
  std::vector<Matrix> observations;
  std::optional<Matrix> latents;
  std::optional<Matrix> exogenous;
  std::optional<Matrix> noise;
  std::optional<LatentGraph> graph;
  /// Latent/exogenous block sizes per modality; needed to split `latents`.
  std::vector<int> latent_dims;
  std::vector<int> exo_dims;
  Json provenance = Json::object();

  int num_modalities() const { return static_cast<int>(observations.size()); }
  Eigen::Index num_samples() const { return observations.empty() ? 0 : observations.front().rows(); }
  int total_latent_dim() const;

  /// Row counts agree; graph dims match latents; block sizes are consistent.
  void validate() const;

  /// Rows selected by `idx`, in that order.
  MultimodalDataset subset(const std::vector<Eigen::Index>& idx) const;

  void save(const std::filesystem::path& dir) const;
  static MultimodalDataset load(const std::filesystem::path& dir);
};

/// Column range of modality m inside the concatenated latent vector.
std::pair<int, int> latent_block(const std::vector<int>& latent_dims, int m);

}  // namespace mmcrl
