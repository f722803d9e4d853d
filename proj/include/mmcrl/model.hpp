#pragma once

// Estimation network: one encoder/decoder pair per modality, a learnable
// gated adjacency over the estimated latents, and one conditional monotone
// flow per latent component mapping z_hat_i (given gated parents) to an
// estimated noise eps_hat_i.
//
// Losses on a batch of n rows:
//   recon    sum_m mean_rows ||x^(m) - x_hat^(m)||^2
//   ind      KL(q(eta|x) || N(0, I)) + flow NLL of eps_hat - H(q(z|x))
//   sparsity sum of off-diagonal gates
//   dag      tr(exp(G o G)) - d (optional, weight 0 by default)
// total = alpha_recon recon + alpha_ind ind + alpha_sp sparsity + alpha_dag dag.

#include "mmcrl/autodiff.hpp"
#include "mmcrl/flow.hpp"
#include "mmcrl/nn.hpp"
#include "mmcrl/tensor_store.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mmcrl {

struct ModelConfig {
  std::vector<int> latent_dims;
  std::vector<int> exo_dims;
  std::vector<int> obs_dims;

  /// "mlp" or "conv". The conv variant expects square images stored CHW.
  std::string encoder = "mlp";
  std::vector<int> image_channels;  // conv only, per modality
  int image_size = 28;              // conv only
  int conv_channels = 16;

  int hidden_width = 128;
  int depth = 3;
  double leaky_slope = 0.2;

  /// "spline" or "affine".
  std::string flow_type = "spline";
  int flow_blocks = 2;
  int flow_hidden = 32;
  int flow_depth = 3;
  flow::SplineConfig spline;

  /// Initial adjacency logit for every off-diagonal entry.
  double adjacency_init = 0.0;

  double alpha_recon = 1.0;
  double alpha_ind = 0.1;
  double alpha_sp = 0.05;
  double alpha_dag = 0.0;
  /// Read-out threshold for the gates.
  double tau = 0.3;

  /// "relaxed": per-sample relaxed-Bernoulli gate draws during training.
  /// "none": the gate probabilities themselves.
  std::string gate_sampling = "relaxed";
  double gate_temperature = 0.5;
  /// Reparameterized Gaussian posterior for z during training.
  bool stochastic_z = true;

  int num_modalities() const { return static_cast<int>(latent_dims.size()); }
  int total_latent_dim() const;
  int total_exo_dim() const;
  void validate() const;
  Json to_json() const;
  /// Strict: unknown keys rejected. Keys absent from `j` keep `base` values.
  static ModelConfig from_json(const Json& j, const ModelConfig& base);
  static ModelConfig from_json(const Json& j);
};

struct EncoderOutput {
  Matrix z_mean;
  Matrix z_logvar;
  Matrix eta_mean;
  Matrix eta_logvar;
};

/// Training-time randomness, drawn by the caller so runs are reproducible.
struct ForwardNoise {
  Matrix z;     // n x d(z) standard normals
  Matrix eta;   // n x d(eta) standard normals
  std::vector<Matrix> gate;  // d(z) matrices n x d(z), uniform (0, 1)
};

struct LossValues {
  double total = 0.0;
  double recon = 0.0;
  double ind = 0.0;
  double kl_eta = 0.0;
  double nll_eps = 0.0;
  double entropy_z = 0.0;
  double sparsity = 0.0;
  double dag = 0.0;

  Json to_json() const;
};

struct LossVars {
  ad::Var total, recon, ind, kl_eta, nll_eps, entropy_z, sparsity, dag;
  LossValues values() const;
};

class Model {
public:
  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  nn::NamedParams parameters();

  // Standardization applied to raw observations before encoding.
  void set_standardization(std::vector<Vector> mean, std::vector<Vector> std);
  Matrix standardize(int m, const Matrix& x) const;
  const std::vector<Vector>& obs_mean() const { return obs_mean_; }
  const std::vector<Vector>& obs_std() const { return obs_std_; }

  // Tape-level pieces.
  struct EncodedVars {
    ad::Var z_mean, z_logvar, eta_mean, eta_logvar;
  };
  EncodedVars encode(nn::Binder& bind, int m, ad::Var x);
  ad::Var decode(nn::Binder& bind, int m, ad::Var z, ad::Var eta);
  ad::Var gates(nn::Binder& bind);
  /// eps_hat (n x d) and summed log-derivative (n x 1). `gate_rows[i]` is the
  /// gate row used for component i: 1 x d or n x d.
  std::pair<ad::Var, ad::Var> flow_noise(nn::Binder& bind, ad::Var z_hat, const std::vector<ad::Var>& gate_rows);

  /// Full objective on one batch of standardized observations. Without
  /// noise the posterior means and gate probabilities are used.
  LossVars loss(nn::Binder& bind, const std::vector<Matrix>& x_std, const ForwardNoise* noise);

  // Plain evaluation helpers (no gradients). Inputs are raw observations.
  EncoderOutput encode(int m, const Matrix& x_raw);
  Matrix decode(int m, const Matrix& z, const Matrix& eta);
  Matrix latent_means(const std::vector<Matrix>& x_raw);
  Matrix gate_matrix();
  std::pair<Matrix, Vector> flow_noise(const Matrix& z_hat, const Matrix& gates);
  /// Per-component inverse given the context latents: returns z_i with
  /// flow_i(z_i; gates_i o context) = eps_i.
  Matrix flow_inverse(const Matrix& eps, const Matrix& context, const Matrix& gates);
  LossValues evaluate_loss(const std::vector<Matrix>& x_raw);

  /// Edge (i, j) iff gate(i, j) > tau; diagonal false.
  BoolMatrix binarize_adjacency(double tau);

  /// Model over modalities reordered so new modality k is old perm[k].
  Model permute_modalities(const std::vector<int>& perm) const;

  void save(TensorStore& store, const std::string& prefix = "") const;
  static Model load(const TensorStore& store, const std::string& prefix = "");

  // Parameters, public for tests and checkpointing.
  struct ConvEncoder {
    nn::Conv c1, c2;
    nn::Linear fc1, fc2;
  };
  struct ConvDecoder {
    nn::Linear fc1, fc2;
    nn::Conv c1, c2;
  };
  std::vector<nn::Mlp> mlp_encoders;
  std::vector<nn::Mlp> mlp_decoders;
  std::vector<ConvEncoder> conv_encoders;
  std::vector<ConvDecoder> conv_decoders;
  nn::Param adjacency_logits;
  std::vector<std::vector<nn::Mlp>> flows;  // [component][block]

private:
  ModelConfig config_;
  std::vector<Vector> obs_mean_;
  std::vector<Vector> obs_std_;

  void build(std::uint64_t seed);
  int flow_raw_size() const;
};

// Loss pieces, exposed for tests.
/// sum over coordinates of KL(N(mu, exp(logvar)) || N(0, 1)), averaged over rows.
ad::Var kl_standard_normal(ad::Var mu, ad::Var logvar);
/// mean over rows of -[log N(eps; 0, I) + logdet].
ad::Var flow_nll(ad::Var eps, ad::Var logdet);
/// sum_m mean over rows of squared error row sums.
ad::Var loss_recon(const std::vector<ad::Var>& x, const std::vector<ad::Var>& x_hat);
/// kl_standard_normal + flow_nll.
ad::Var loss_ind(const std::vector<std::pair<ad::Var, ad::Var>>& eta_posteriors, ad::Var eps, ad::Var logdet);
/// Sum of gate values off the diagonal.
ad::Var loss_sparsity(ad::Var gates);

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

}  // namespace mmcrl
