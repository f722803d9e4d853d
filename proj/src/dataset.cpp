#include "mmcrl/dataset.hpp"

#include <numeric>

namespace mmcrl {

std::pair<int, int> latent_block(const std::vector<int>& latent_dims, int m) {
  const int start = std::accumulate(latent_dims.begin(), latent_dims.begin() + m, 0);
  return {start, latent_dims[m]};
}

int MultimodalDataset::total_latent_dim() const {
  return std::accumulate(latent_dims.begin(), latent_dims.end(), 0);
}

void MultimodalDataset::validate() const {
  require(!observations.empty(), "dataset has no modalities");
  const auto n = num_samples();
  for (const auto& x : observations) require(x.rows() == n, "observation row counts differ");
  if (!latent_dims.empty())
    require(static_cast<int>(latent_dims.size()) == num_modalities(),
            "latent_dims must have one entry per modality");
  if (latents) {
    require(latents->rows() == n, "latents row count differs from observations");
    if (!latent_dims.empty())
      require(latents->cols() == total_latent_dim(), "latents width does not match latent_dims");
  }
  if (noise) {
    require(noise->rows() == n, "noise row count differs from observations");
    if (latents) require(noise->cols() == latents->cols(), "noise width differs from latents");
  }
  if (exogenous) require(exogenous->rows() == n, "exogenous row count differs from observations");
  if (graph) {
    graph->validate();
    if (latents) require(graph->size() == latents->cols(), "graph size differs from latents width");
  }
}

MultimodalDataset MultimodalDataset::subset(const std::vector<Eigen::Index>& idx) const {
  auto take = [&](const Matrix& m) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(idx[r]);
    return out;
  };
  MultimodalDataset out;
  for (const auto& x : observations) out.observations.push_back(take(x));
  if (latents) out.latents = take(*latents);
  if (exogenous) out.exogenous = take(*exogenous);
  if (noise) out.noise = take(*noise);
  out.graph = graph;
  out.latent_dims = latent_dims;
  out.exo_dims = exo_dims;
  out.provenance = provenance;
  return out;
}

void MultimodalDataset::save(const std::filesystem::path& dir) const {
  validate();
  TensorStore store("dataset");
  for (int m = 0; m < num_modalities(); ++m) store.put("x" + std::to_string(m), observations[m]);
  if (latents) store.put("latents", *latents);
  if (exogenous) store.put("exogenous", *exogenous);
  if (noise) store.put("noise", *noise);
  if (graph) store.put("graph", graph->adjacency.cast<double>());
  auto& meta = store.meta();
  meta["num_modalities"] = num_modalities();
  meta["num_samples"] = num_samples();
  meta["latent_dims"] = latent_dims;
  meta["exo_dims"] = exo_dims;
  if (graph) meta["modality_of"] = graph->modality_of;
  meta["provenance"] = provenance;
  store.save(dir);
}

MultimodalDataset MultimodalDataset::load(const std::filesystem::path& dir) {
  const auto store = TensorStore::load(dir);
  const auto& meta = store.meta();
  MultimodalDataset d;
  const int M = meta.at("num_modalities").get<int>();
  for (int m = 0; m < M; ++m) d.observations.push_back(store.get("x" + std::to_string(m)));
  if (store.contains("latents")) d.latents = store.get("latents");
  if (store.contains("exogenous")) d.exogenous = store.get("exogenous");
  if (store.contains("noise")) d.noise = store.get("noise");
  d.latent_dims = meta.value("latent_dims", std::vector<int>{});
  d.exo_dims = meta.value("exo_dims", std::vector<int>{});
  if (store.contains("graph")) {
    LatentGraph g;
    g.adjacency = store.get("graph").array() > 0.5;
    g.modality_of = meta.at("modality_of").get<std::vector<int>>();
    d.graph = g;
  }
  d.provenance = meta.value("provenance", Json::object());
  d.validate();
  return d;
}

}  // namespace mmcrl
