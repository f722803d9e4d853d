#pragma once

// Synthetic multimodal structural causal models.
//
//   z_i   = f_i(Pa(z_i)) + eps_i                 latent causal relations
//   x^(m) = g_m(z^(m), eta^(m))                  per-modality mixing
//
// eps and eta are i.i.d. standard normal. f_i is a small tanh network of the
// parents; g_m is a stack of full-column-rank affine layers, each followed by
// a leaky ReLU, so it is injective.

#include "mmcrl/common.hpp"
#include "mmcrl/dataset.hpp"
#include "mmcrl/graph.hpp"
#include "mmcrl/tensor_store.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mmcrl {

struct GeneratorSpec {
  int num_modalities = 2;
  std::vector<int> latent_dims{2, 2};
  std::vector<int> exo_dims{1, 1};
  std::vector<int> obs_dims{15, 15};
  /// Fraction of absent inter-modal latent edges among all possible ones.
  double sparsity_ratio = 0.75;
  std::int64_t n_samples = 10000;
  std::uint64_t seed = 0;
  int mixing_depth = 3;
  double leaky_slope = 0.2;
  /// Edge probability inside each modality's latent block.
  double intra_edge_prob = 0.5;
  /// Keep the modality graph connected through inter-modal edges.
  bool enforce_connectivity = true;
  /// Only "gaussian" is implemented.
  std::string noise_family = "gaussian";
  /// Hidden width of each latent mechanism network.
  int mechanism_hidden = 8;
  /// Variance of each latent's parent term relative to its unit noise,
  /// matched on a calibration sample. 0 keeps the raw random draw.
  double mechanism_snr = 1.0;

  int total_latent_dim() const;
  int total_exo_dim() const;
  /// Number of unordered latent pairs that straddle two modalities.
  int inter_modal_pairs() const;
  /// round((1 - sparsity_ratio) * inter_modal_pairs()).
  int inter_modal_edge_target() const;
  std::vector<int> modality_of() const;

  void validate() const;
  Json to_json() const;
  /// Strict: unknown keys are rejected.
  static GeneratorSpec from_json(const Json& j);
};

/// Presets for the numerical experiments: cases 1-3.
GeneratorSpec case_preset(int case_id);
/// Case-1 dimensions at one of the ablation sparsity ratios {0, .25, .5, .75}.
GeneratorSpec ablation_preset(double sparsity_ratio);

/// Dense tanh network for one latent mechanism: w2 . tanh(W1 p + b1) + b2.
struct LatentMechanism {
  std::vector<int> parents;
  Matrix W1;
  Vector b1;
  Vector w2;
  double b2 = 0.0;

  double operator()(const Vector& parent_values) const;
};

/// Stack of affine layers, each followed by leaky ReLU.
struct MixingMap {
  std::vector<Matrix> weights;  // out x in
  std::vector<Vector> biases;
  double slope = 0.2;

  int input_dim() const { return static_cast<int>(weights.front().cols()); }
  int output_dim() const { return static_cast<int>(weights.back().rows()); }
  Vector operator()(const Vector& input) const;
  Matrix apply_rows(const Matrix& inputs) const;
  /// Exact Jacobian at `input` (piecewise linear map).
  Matrix jacobian(const Vector& input) const;
};

struct StructuralModel {
  LatentGraph graph;
  std::vector<int> latent_dims;
  std::vector<int> exo_dims;
  std::vector<LatentMechanism> mechanisms;  // one per latent component
  std::vector<MixingMap> mixing;            // one per modality
  std::vector<int> order;                   // topological order of latents

  /// Parent contribution f_i evaluated on the full latent vector.
  double mechanism(int i, const Vector& z) const;
  /// z from eps in topological order.
  Vector latents_from_noise(const Vector& eps) const;
  Matrix latents_from_noise_rows(const Matrix& eps) const;
  /// x^(m) for one sample.
  Vector observe(int m, const Vector& z_all, const Vector& eta_all) const;
};

LatentGraph sample_latent_graph(const GeneratorSpec& spec, std::uint64_t rng_seed);

/// Rescales each mechanism so Var(parent term) = snr and its mean is zero,
/// in topological order on a calibration sample drawn from `seed`.
void calibrate_mechanisms(StructuralModel& model, double snr, std::uint64_t seed);

/// Resamples weight matrices whose smallest singular value is below the floor
/// and whole models that fail the injectivity probe.
StructuralModel sample_structural_model(const GeneratorSpec& spec, const LatentGraph& graph,
                                        std::uint64_t rng_seed);

MultimodalDataset generate_dataset(const GeneratorSpec& spec, const LatentGraph& graph,
                                   const StructuralModel& model, std::int64_t n);

/// Graph, model, and dataset from spec.seed, as the CLI does it.
struct GeneratedExperiment {
  LatentGraph graph;
  StructuralModel model;
  MultimodalDataset dataset;
};
GeneratedExperiment generate_experiment(const GeneratorSpec& spec);

/// Minimum singular value over `points` exact Jacobians of each mixing map.
double mixing_injectivity_margin(const StructuralModel& model, int points, std::uint64_t seed);

inline constexpr double kSingularValueFloor = 1e-2;
inline constexpr int kMaxResamples = 50;

}  // namespace mmcrl
