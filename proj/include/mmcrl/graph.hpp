#pragma once

#include "mmcrl/common.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace mmcrl {

/// Directed graph over all latent components with a modality partition.
/// adjacency(i, j) == true means z_j is a parent of z_i.
struct LatentGraph {
  BoolMatrix adjacency;
  std::vector<int> modality_of;

  int size() const { return static_cast<int>(adjacency.rows()); }
  int num_modalities() const;
  std::vector<int> parents(int i) const;
  std::vector<int> children(int j) const;
  std::vector<int> members(int modality) const;
  bool is_inter_modal(int i, int j) const { return modality_of[i] != modality_of[j]; }
  int inter_modal_edge_count() const;

  /// Throws ConfigError when the diagonal is set, shapes disagree, a modality
  /// block is empty, or the graph has a cycle.
  void validate() const;
};

/// Kahn's algorithm with smallest-index tie breaking; nullopt on a cycle.
std::optional<std::vector<int>> topological_order(const BoolMatrix& adjacency);

/// Undirected skeleton: s(i, j) = s(j, i) = a(i, j) || a(j, i), zero diagonal.
BoolMatrix skeleton(const BoolMatrix& adjacency);

/// Skeleton restricted to pairs in different modalities.
BoolMatrix inter_modal_skeleton(const BoolMatrix& adjacency, const std::vector<int>& modality_of);

/// Upstream (parents of other modalities) and downstream (children of other
/// modalities) latent indices for every modality.
struct UpDownSets {
  std::vector<std::vector<int>> upstream;
  std::vector<std::vector<int>> downstream;
};
UpDownSets up_down_sets(const LatentGraph& g);

}  // namespace mmcrl
