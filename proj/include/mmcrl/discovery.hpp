#pragma once

// PC algorithm with Fisher-z partial-correlation tests.
//
// Skeleton phase is order-stable: at each conditioning-set size the
// adjacency sets are frozen, every pair (i < j) is tested against subsets of
// adj(i)\{j} and then adj(j)\{i} in lexicographic order, and removals are
// committed together at the end of the level. Rows are put in a canonical
// order before correlations are summed, so the output does not depend on
// the input row order.

#include "mmcrl/common.hpp"
#include "mmcrl/tensor_store.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace mmcrl::discovery {

struct PcOptions {
  double alpha = 0.01;
  int max_cond_set = 3;
};

/// A test whose correlation sub-matrix was singular; counted as independence.
struct SingularTest {
  int i = 0;
  int j = 0;
  std::vector<int> cond;
};

struct Skeleton {
  /// Symmetric, false diagonal.
  BoolMatrix adjacency;
  /// Keyed by (i, j) with i < j, only for removed pairs.
  std::map<std::pair<int, int>, std::vector<int>> sepsets;
  std::vector<SingularTest> singular;
  int tests_run = 0;
};

/// Partially directed graph. marks(i, j) && marks(j, i): undirected i -- j;
/// marks(i, j) alone: i -> j.
struct Pdag {
  BoolMatrix marks;

  bool directed(int i, int j) const { return marks(i, j) && !marks(j, i); }
  bool undirected(int i, int j) const { return marks(i, j) && marks(j, i); }
  bool adjacent(int i, int j) const { return marks(i, j) || marks(j, i); }
  int num_nodes() const { return static_cast<int>(marks.rows()); }

  /// {"nodes": [...], "edges": [{"from", "to", "mark": "--" | "->"}]}
  Json to_json(const std::vector<std::string>& names = {}) const;
  std::string to_dot(const std::vector<std::string>& names = {}) const;
};

/// Pearson correlation of the columns after sorting rows lexicographically.
Matrix canonical_correlation(const Matrix& data);

/// Two-sided Fisher-z p-value for the partial correlation of (i, j) given
/// `cond`. Returns -1 when the correlation sub-matrix is singular.
double fisher_z_pvalue(const Matrix& corr, Eigen::Index n, int i, int j, const std::vector<int>& cond);

Skeleton pc_skeleton(const Matrix& data, const PcOptions& options = {});
Skeleton pc_skeleton_from_correlation(const Matrix& corr, Eigen::Index n, const PcOptions& options = {});

/// Unshielded colliders from the separating sets, then Meek rules 1-3 to closure.
Pdag pc_orient(const Skeleton& skeleton);

/// pc_skeleton + pc_orient.
Pdag pc(const Matrix& data, const PcOptions& options = {});

Json skeleton_report(const Skeleton& s, const std::vector<std::string>& names = {});

}  // namespace mmcrl::discovery
