#include "mmcrl/experiment.hpp"

#include "mmcrl/graph.hpp"

namespace mmcrl {

Json Recipe::to_json() const { return {{"model", model.to_json()}, {"train", train.to_json()}}; }

Recipe Recipe::from_json(const Json& j, const Recipe& base) {
  require(j.is_object(), "recipe must be a JSON object");
  Recipe r = base;
  for (const auto& [key, v] : j.items()) {
    if (key == "model") r.model = ModelConfig::from_json(v, r.model);
    else if (key == "train") r.train = TrainConfig::from_json(v, r.train);
    else throw ConfigError("recipe: unknown key '" + key + "'");
  }
  return r;
}

Recipe synthetic_recipe() {
  Recipe r;
  r.train.epochs = 200;
  r.train.batch_size = 128;
  r.train.learning_rate = 1e-3;
  return r;
}

Recipe image_recipe() {
  Recipe r;
  r.model.encoder = "conv";
  r.model.image_channels = {3, 1};
  r.model.image_size = 28;
  r.model.conv_channels = 16;
  r.model.hidden_width = 128;
  r.train.epochs = 20;
  r.train.batch_size = 64;
  r.train.learning_rate = 1e-3;
  return r;
}

metrics::MetricsReport evaluate_model(Model& model, const MultimodalDataset& data, std::uint64_t seed) {
  data.validate();
  metrics::MetricsReport rep;
  rep.seed = seed;
  rep.dataset_id = data.provenance.value("source", std::string("unknown"));
  const Matrix z_hat = model.latent_means(data.observations);
  const BoolMatrix est = model.binarize_adjacency(model.config().tau);
  rep.extra["estimated_graph"] = estimated_graph_json(model);

  std::vector<int> perm;
  if (data.latents) {
    const auto m = metrics::mcc(*data.latents, z_hat);
    rep.mcc = m.mcc;
    rep.mcc_permutation = m.permutation;
    for (const auto& r : metrics::mcc_per_modality(*data.latents, z_hat, data.latent_dims)) {
      rep.mcc_per_modality.push_back(r.mcc);
      perm.insert(perm.end(), r.permutation.begin(), r.permutation.end());
    }
    rep.r2 = metrics::r2(*data.latents, z_hat, 0.8, seed);
  }
  if (data.graph && !perm.empty()) {
    const BoolMatrix aligned = metrics::to_true_order(est, perm);
    const auto& truth = data.graph->adjacency;
    rep.shd = metrics::shd(skeleton(truth), skeleton(aligned));
    rep.shd_inter_modal = metrics::shd(inter_modal_skeleton(truth, data.graph->modality_of),
                                       inter_modal_skeleton(aligned, data.graph->modality_of));
    rep.extra["shd_directed"] = metrics::shd(truth, aligned, true);
  }
  return rep;
}

Json estimated_graph_json(Model& model) {
  const Matrix G = model.gate_matrix();
  const double tau = model.config().tau;
  Json nodes = Json::array();
  const auto& dims = model.config().latent_dims;
  for (std::size_t m = 0; m < dims.size(); ++m)
    for (int k = 0; k < dims[m]; ++k) nodes.push_back("z" + std::to_string(m) + "_" + std::to_string(k));
  Json edges = Json::array();
  for (Eigen::Index i = 0; i < G.rows(); ++i)
    for (Eigen::Index j = 0; j < G.cols(); ++j)
      if (i != j && G(i, j) > tau) edges.push_back({{"from", nodes[j]}, {"to", nodes[i]}, {"gate", G(i, j)}});
  return {{"nodes", nodes}, {"edges", edges}, {"tau", tau}};
}

}  // namespace mmcrl
