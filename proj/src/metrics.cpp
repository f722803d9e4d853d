#include "mmcrl/metrics.hpp"

#include "mmcrl/dataset.hpp"
#include "mmcrl/kernels.hpp"
#include "mmcrl/rng.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace mmcrl::metrics {

std::vector<int> max_weight_assignment(const Matrix& weights) {
  const int n = static_cast<int>(weights.rows());
  require(weights.cols() == n, "max_weight_assignment: matrix must be square");
  if (n == 0) return {};
  // Shortest augmenting path with potentials on cost = -weight; 1-based arrays.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -weights(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

Matrix rank_columns(const Matrix& a) {
  Matrix r(a.rows(), a.cols());
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](Eigen::Index x, Eigen::Index y) { return a(x, c) < a(y, c); });
    std::size_t i = 0;
    while (i < idx.size()) {
      std::size_t j = i;
      while (j + 1 < idx.size() && a(idx[j + 1], c) == a(idx[i], c)) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r(idx[k], c) = avg;
      i = j + 1;
    }
  }
  return r;
}

Json MccResult::to_json() const { return {{"mcc", mcc}, {"permutation", permutation}}; }

MccResult mcc(const Matrix& z_true, const Matrix& z_est, bool spearman) {
  require(z_true.cols() == z_est.cols(), "mcc: true and estimated latents have different column counts");
  require(z_true.rows() == z_est.rows(), "mcc: row counts differ");
  require(z_true.rows() >= 3, "mcc: need at least 3 samples");
  MccResult out;
  out.abs_corr = spearman ? kernels::omp::abs_correlation(rank_columns(z_true), rank_columns(z_est))
                          : kernels::omp::abs_correlation(z_true, z_est);
  out.permutation = max_weight_assignment(out.abs_corr);
  double total = 0.0;
  for (std::size_t i = 0; i < out.permutation.size(); ++i)
    total += out.abs_corr(static_cast<Eigen::Index>(i), out.permutation[i]);
  out.mcc = out.permutation.empty() ? 0.0 : total / static_cast<double>(out.permutation.size());
  return out;
}

std::vector<MccResult> mcc_per_modality(const Matrix& z_true, const Matrix& z_est,
                                        const std::vector<int>& latent_dims, bool spearman) {
  require(z_true.cols() == std::accumulate(latent_dims.begin(), latent_dims.end(), 0),
          "mcc_per_modality: latent_dims do not add up to the column count");
  std::vector<MccResult> out;
  for (int m = 0; m < static_cast<int>(latent_dims.size()); ++m) {
    const auto [start, size] = latent_block(latent_dims, m);
    MccResult r = mcc(z_true.middleCols(start, size), z_est.middleCols(start, size), spearman);
    for (auto& p : r.permutation) p += start;
    out.push_back(std::move(r));
  }
  return out;
}

double r2(const Matrix& z_true, const Matrix& z_est, double train_fraction, std::uint64_t seed) {
  require(z_true.rows() == z_est.rows(), "r2: row counts differ");
  require(train_fraction > 0.0 && train_fraction < 1.0, "r2: train_fraction must lie in (0, 1)");
  const Eigen::Index n = z_true.rows();
  const auto n_train = static_cast<Eigen::Index>(std::llround(train_fraction * static_cast<double>(n)));
  require(n_train > z_est.cols() + 1 && n - n_train >= 2, "r2: too few samples for the split");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  CounterRng rng(seed, streams::kMetricSplit);
  rng.shuffle(idx);

  auto design = [&](Eigen::Index from, Eigen::Index count) {
    Matrix X(count, z_est.cols() + 1);
    for (Eigen::Index r = 0; r < count; ++r) {
      X(r, 0) = 1.0;
      X.row(r).tail(z_est.cols()) = z_est.row(idx[static_cast<std::size_t>(from + r)]);
    }
    return X;
  };
  auto target = [&](Eigen::Index from, Eigen::Index count) {
    Matrix Y(count, z_true.cols());
    for (Eigen::Index r = 0; r < count; ++r) Y.row(r) = z_true.row(idx[static_cast<std::size_t>(from + r)]);
    return Y;
  };
  const Matrix Xtr = design(0, n_train);
  const Matrix Ytr = target(0, n_train);
  const Matrix Xte = design(n_train, n - n_train);
  const Matrix Yte = target(n_train, n - n_train);
  const Matrix B = Xtr.colPivHouseholderQr().solve(Ytr);
  const Matrix pred = Xte * B;
  double total = 0.0;
  for (Eigen::Index c = 0; c < Yte.cols(); ++c) {
    const double mean = Yte.col(c).mean();
    const double sst = (Yte.col(c).array() - mean).square().sum();
    const double sse = (Yte.col(c) - pred.col(c)).squaredNorm();
    total += sst > 0.0 ? 1.0 - sse / sst : 0.0;
  }
  return total / static_cast<double>(Yte.cols());
}

int shd(const BoolMatrix& a, const BoolMatrix& b, bool directed) {
  require(a.rows() == a.cols() && b.rows() == b.cols() && a.rows() == b.rows(), "shd: graphs must be square and equal size");
  int count = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = i + 1; j < a.cols(); ++j) {
      if (directed) {
        if (a(i, j) != b(i, j) || a(j, i) != b(j, i)) ++count;
      } else if ((a(i, j) || a(j, i)) != (b(i, j) || b(j, i))) {
        ++count;
      }
    }
  return count;
}

BoolMatrix to_true_order(const BoolMatrix& est, const std::vector<int>& perm) {
  const auto d = static_cast<Eigen::Index>(perm.size());
  require(est.rows() == d && est.cols() == d, "to_true_order: permutation size mismatch");
  BoolMatrix out(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) out(i, j) = est(perm[i], perm[j]);
  return out;
}

Json MetricsReport::to_json() const {
  Json j = Json::object();
  j["mcc"] = mcc ? Json(*mcc) : Json(nullptr);
  j["mcc_permutation"] = mcc_permutation ? Json(*mcc_permutation) : Json(nullptr);
  j["mcc_per_modality"] = mcc ? Json(mcc_per_modality) : Json(nullptr);
  j["r2"] = r2 ? Json(*r2) : Json(nullptr);
  j["shd"] = shd ? Json(*shd) : Json(nullptr);
  j["shd_inter_modal"] = shd_inter_modal ? Json(*shd_inter_modal) : Json(nullptr);
  j["seed"] = seed;
  j["dataset_id"] = dataset_id;
  j["checkpoint_id"] = checkpoint_id;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

}  // namespace mmcrl::metrics
