#pragma once

// Checks of the identifiability conditions on a ground-truth structural model.
//
// Support-level tools work on a real matrix A (d1 x d2) where an entry is
// "nonzero" when |a| > zero_tol. Ranks are computed after zeroing the
// sub-tolerance entries and count singular values above
// max(zero_tol, max(d1, d2) * eps * sigma_max).

#include "mmcrl/common.hpp"
#include "mmcrl/graph.hpp"
#include "mmcrl/scm.hpp"
#include "mmcrl/tensor_store.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mmcrl::theory {

inline constexpr double kDefaultZeroTol = 1e-6;
inline constexpr int kExactMaxCols = 8;
inline constexpr int kExactMaxOverlapRows = 20;
inline constexpr int kExactMaxLatents = 12;

Matrix support_clean(const Matrix& A, double zero_tol = kDefaultZeroTol);
int support_size(const Eigen::Ref<const Vector>& v, double zero_tol = kDefaultZeroTol);
int numerical_rank(const Matrix& A, double zero_tol = kDefaultZeroTol);

/// Rows of A with more than one nonzero entry, in their original order.
Matrix overlap_rows(const Matrix& A, double zero_tol = kDefaultZeroTol);

enum class DStarMode { Exact, Sampled };

struct DStarOptions {
  DStarMode mode = DStarMode::Exact;
  double zero_tol = kDefaultZeroTol;
  /// Sampled mode: random greedy maximal rank-deficient row sets. Gives a
  /// lower bound on d*.
  int samples = 256;
  std::uint64_t seed = 0;
};

/// Largest number of Overlap(A) rows whose sub-matrix has rank < d2.
int compute_d_star(const Matrix& A, const DStarOptions& options = {});

struct SparsityCheck {
  bool holds = false;
  int lhs = 0;  // |union of column supports| - d*
  int rhs = 0;  // max column support size
};

SparsityCheck check_sparsity_inequality(const Matrix& A, const DStarOptions& options = {});

// ---------------------------------------------------------------------------
// Model-level checks

struct ConditionReport {
  int modality = 0;
  std::string condition;  // "condition1.A1", "condition1.A2", "condition2"
  bool holds = false;
  double margin = 0.0;
  double min_singular_value = 0.0;
  int points_tested = 0;
  std::string note;

  Json to_json() const;
};

/// Which inequality family condition 2 is evaluated with.
///  PerComponent: for each component i of modality m and each nonempty
///    U subset of U^(m) \ {i}, A = T [G]_{(-m), U+i}; the right-hand side is
///    the support size of the true column [G]_{(-m), i}. Downstream side
///    analogous with rows. This is the form the identification argument uses.
///  Literal: every nonempty C subset of U^(m) (resp. R subset of D^(m)) is
///    plugged straight into the inequality. A single column can never satisfy
///    it, so any graph with a cross-modal edge fails in this mode.
enum class Condition2Form { PerComponent, Literal };

struct Condition2Options {
  int num_points = 16;
  int num_T_samples = 8;
  double zero_tol = kDefaultZeroTol;
  Condition2Form form = Condition2Form::PerComponent;
  std::uint64_t seed = 0;
};

/// Central finite-difference Jacobian of the latent mechanisms,
/// G(i, j) = d g_{z_i} / d z_j, at latent point z.
Matrix mechanism_jacobian(const StructuralModel& model, const Vector& z, double step = 1e-5);

std::vector<ConditionReport> check_condition2(const StructuralModel& model, const LatentGraph& graph,
                                              const Condition2Options& options = {});

struct Condition1Options {
  int num_points = 64;
  double fd_step = 1e-6;
  /// Singular values at or below rel_tol * sigma_max count as zero. Has to
  /// sit above finite-difference noise.
  double rel_tol = 1e-6;
  std::uint64_t seed = 0;
};

struct RankProbe {
  bool full_column_rank = true;
  double min_singular_value = 0.0;  // smallest singular value over all points
  double worst_margin = 0.0;        // min over points of (sigma_min - tolerance)
  int points = 0;
};

using VectorMap = std::function<Vector(const Vector&)>;

Matrix numerical_jacobian(const VectorMap& f, const Vector& at, double step);

/// Numerical Jacobian rank test of f at every point.
RankProbe probe_full_column_rank(const VectorMap& f, const std::vector<Vector>& points,
                                 double fd_step = 1e-6, double rel_tol = 1e-6);

/// A1: (z^(m), eta^(m)) -> x^(m). A2: z^(m) -> x^(-m) with the other
/// modalities' noise and all exogenous variables held fixed.
std::vector<ConditionReport> check_condition1(const StructuralModel& model, const LatentGraph& graph,
                                              const Condition1Options& options = {});

Json reports_to_json(const std::vector<ConditionReport>& reports);

}  // namespace mmcrl::theory
