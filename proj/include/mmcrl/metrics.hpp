#pragma once

#include "mmcrl/common.hpp"
#include "mmcrl/tensor_store.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mmcrl::metrics {

/// Maximum-weight perfect matching on a square matrix (Hungarian method).
/// Returns assignment[row] = column.
std::vector<int> max_weight_assignment(const Matrix& weights);

struct MccResult {
  double mcc = 0.0;
  /// permutation[i] = estimated column matched to true column i.
  std::vector<int> permutation;
  /// |corr(true_i, est_j)|.
  Matrix abs_corr;
  Json to_json() const;
};

/// Mean absolute correlation under the best one-to-one matching.
MccResult mcc(const Matrix& z_true, const Matrix& z_est, bool spearman = false);

/// MCC inside each modality block; the permutation entries are global
/// column indices.
std::vector<MccResult> mcc_per_modality(const Matrix& z_true, const Matrix& z_est,
                                        const std::vector<int>& latent_dims, bool spearman = false);

/// Column-wise ranks (average ranks on ties).
Matrix rank_columns(const Matrix& a);

/// Held-out R^2 of an intercept + linear least-squares map from z_est to
/// z_true, averaged over true columns.
double r2(const Matrix& z_true, const Matrix& z_est, double train_fraction = 0.8, std::uint64_t seed = 0);

/// Symmetric difference of undirected skeletons. With `directed`, each
/// unordered pair counts 1 when its edge state (none, i->j, j->i, both) differs.
int shd(const BoolMatrix& a, const BoolMatrix& b, bool directed = false);

/// Re-indexes an estimated adjacency into the true latent order:
/// out(i, j) = est(perm[i], perm[j]).
BoolMatrix to_true_order(const BoolMatrix& est, const std::vector<int>& perm);

struct MetricsReport {
  std::optional<double> mcc;
  std::optional<std::vector<int>> mcc_permutation;
  std::vector<double> mcc_per_modality;
  std::optional<double> r2;
  std::optional<int> shd;
  std::optional<int> shd_inter_modal;
  std::uint64_t seed = 0;
  std::string dataset_id;
  std::string checkpoint_id;
  Json extra = Json::object();

  Json to_json() const;
};

}  // namespace mmcrl::metrics
