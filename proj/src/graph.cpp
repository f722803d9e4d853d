#include "mmcrl/graph.hpp"

#include <algorithm>
#include <queue>

namespace mmcrl {

int LatentGraph::num_modalities() const {
  if (modality_of.empty()) return 0;
  return *std::max_element(modality_of.begin(), modality_of.end()) + 1;
}

std::vector<int> LatentGraph::parents(int i) const {
  std::vector<int> out;
  for (int j = 0; j < size(); ++j)
    if (adjacency(i, j)) out.push_back(j);
  return out;
}

std::vector<int> LatentGraph::children(int j) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (adjacency(i, j)) out.push_back(i);
  return out;
}

std::vector<int> LatentGraph::members(int modality) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (modality_of[i] == modality) out.push_back(i);
  return out;
}

int LatentGraph::inter_modal_edge_count() const {
  int count = 0;
  for (int i = 0; i < size(); ++i)
    for (int j = 0; j < size(); ++j)
      if (adjacency(i, j) && is_inter_modal(i, j)) ++count;
  return count;
}

void LatentGraph::validate() const {
  require(adjacency.rows() == adjacency.cols(), "adjacency must be square");
  require(static_cast<int>(modality_of.size()) == size(),
          "modality_of must have one entry per latent");
  for (int i = 0; i < size(); ++i) require(!adjacency(i, i), "adjacency diagonal must be zero");
  for (int m : modality_of) require(m >= 0, "modality indices must be nonnegative");
  for (int m = 0; m < num_modalities(); ++m)
    require(!members(m).empty(), "every modality needs at least one latent component");
  require(topological_order(adjacency).has_value(), "latent graph has a directed cycle");
}

std::optional<std::vector<int>> topological_order(const BoolMatrix& adjacency) {
  const int n = static_cast<int>(adjacency.rows());
  std::vector<int> indegree(n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (adjacency(i, j)) ++indegree[i];
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push(i);
  std::vector<int> order;
  order.reserve(n);
  while (!ready.empty()) {
    const int j = ready.top();
    ready.pop();
    order.push_back(j);
    for (int i = 0; i < n; ++i)
      if (adjacency(i, j) && --indegree[i] == 0) ready.push(i);
  }
  if (static_cast<int>(order.size()) != n) return std::nullopt;
  return order;
}

BoolMatrix skeleton(const BoolMatrix& adjacency) {
  BoolMatrix s = adjacency.array() || adjacency.transpose().array();
  s.diagonal().setConstant(false);
  return s;
}

BoolMatrix inter_modal_skeleton(const BoolMatrix& adjacency, const std::vector<int>& modality_of) {
  BoolMatrix s = skeleton(adjacency);
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = 0; j < s.cols(); ++j)
      if (modality_of[i] == modality_of[j]) s(i, j) = false;
  return s;
}

UpDownSets up_down_sets(const LatentGraph& g) {
  const int M = g.num_modalities();
  UpDownSets sets{std::vector<std::vector<int>>(M), std::vector<std::vector<int>>(M)};
  for (int k = 0; k < g.size(); ++k) {
    bool up = false;
    bool down = false;
    for (int other = 0; other < g.size(); ++other) {
      if (!g.is_inter_modal(k, other)) continue;
      up = up || g.adjacency(other, k);
      down = down || g.adjacency(k, other);
    }
    if (up) sets.upstream[g.modality_of[k]].push_back(k);
    if (down) sets.downstream[g.modality_of[k]].push_back(k);
  }
  return sets;
}

}  // namespace mmcrl
