#include "mmcrl/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mmcrl::discovery {

namespace {

std::string node_name(const std::vector<std::string>& names, int i) {
  return i < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(i)] : "X" + std::to_string(i);
}

// Calls f(subset) for every k-subset of `pool` in lexicographic order until f returns true.
template <class F>
bool for_each_subset(const std::vector<int>& pool, int k, F&& f) {
  const int m = static_cast<int>(pool.size());
  if (k > m) return false;
  std::vector<int> pos(static_cast<std::size_t>(k));
  std::iota(pos.begin(), pos.end(), 0);
  std::vector<int> subset(static_cast<std::size_t>(k));
  while (true) {
    for (int a = 0; a < k; ++a) subset[a] = pool[pos[a]];
    if (f(subset)) return true;
    int a = k - 1;
    while (a >= 0 && pos[a] == m - k + a) --a;
    if (a < 0) return false;
    ++pos[a];
    for (int b = a + 1; b < k; ++b) pos[b] = pos[b - 1] + 1;
  }
}

}  // namespace

Matrix canonical_correlation(const Matrix& data) {
  const Eigen::Index n = data.rows();
  const Eigen::Index p = data.cols();
  require(n >= 3, "correlation: need at least 3 rows");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < p; ++c)
      if (data(a, c) != data(b, c)) return data(a, c) < data(b, c);
    return false;
  });
  Matrix x(n, p);
  for (Eigen::Index r = 0; r < n; ++r) x.row(r) = data.row(order[static_cast<std::size_t>(r)]);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  Matrix cov = x.transpose() * x;
  Matrix corr(p, p);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < p; ++b) {
      const double den = std::sqrt(cov(a, a) * cov(b, b));
      corr(a, b) = a == b ? 1.0 : (den > 0.0 ? cov(a, b) / den : 0.0);
    }
  return corr;
}

double fisher_z_pvalue(const Matrix& corr, Eigen::Index n, int i, int j, const std::vector<int>& cond) {
  const int k = static_cast<int>(cond.size());
  std::vector<int> idx{i, j};
  idx.insert(idx.end(), cond.begin(), cond.end());
  Matrix S(k + 2, k + 2);
  for (int a = 0; a < k + 2; ++a)
    for (int b = 0; b < k + 2; ++b) S(a, b) = corr(idx[a], idx[b]);
  double r = 0.0;
  if (k == 0) {
    r = S(0, 1);
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 1e-10 * std::max(hi, 1.0))) return -1.0;
    const Matrix P = S.inverse();
    r = -P(0, 1) / std::sqrt(P(0, 0) * P(1, 1));
  }
  r = std::clamp(r, -1.0 + 1e-15, 1.0 - 1e-15);
  const double dof = static_cast<double>(n - k - 3);
  const double z = 0.5 * std::log((1.0 + r) / (1.0 - r)) * std::sqrt(dof);
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

Skeleton pc_skeleton(const Matrix& data, const PcOptions& options) {
  return pc_skeleton_from_correlation(canonical_correlation(data), data.rows(), options);
}

Skeleton pc_skeleton_from_correlation(const Matrix& corr, Eigen::Index n, const PcOptions& options) {
  const int p = static_cast<int>(corr.rows());
  require(corr.cols() == p, "pc: correlation matrix must be square");
  require(options.alpha > 0.0 && options.alpha < 1.0, "pc: alpha must lie in (0, 1)");
  require(options.max_cond_set >= 0, "pc: max_cond_set must be non-negative");
  require(n > p + options.max_cond_set + 3, "pc: need n > p + max_cond_set + 3 (n = " + std::to_string(n) +
                                                ", p = " + std::to_string(p) + ")");
  Skeleton out;
  out.adjacency = BoolMatrix::Constant(p, p, true);
  out.adjacency.diagonal().setConstant(false);

  for (int level = 0; level <= options.max_cond_set; ++level) {
    const BoolMatrix frozen = out.adjacency;
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(p));
    bool any = false;
    for (int i = 0; i < p; ++i) {
      for (int j = 0; j < p; ++j)
        if (frozen(i, j)) adj[i].push_back(j);
      any = any || static_cast<int>(adj[i].size()) - 1 >= level;
    }
    if (!any) break;

    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < p; ++i)
      for (int j = i + 1; j < p; ++j)
        if (frozen(i, j)) pairs.emplace_back(i, j);

    struct Outcome {
      bool removed = false;
      std::vector<int> sepset;
      std::vector<SingularTest> singular;
      int tests = 0;
    };
    std::vector<Outcome> results(pairs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t e = 0; e < pairs.size(); ++e) {
      const auto [i, j] = pairs[e];
      Outcome& o = results[e];
      auto test_from = [&](int a, int b) {
        std::vector<int> pool;
        for (int v : adj[a])
          if (v != b) pool.push_back(v);
        return for_each_subset(pool, level, [&](const std::vector<int>& S) {
          ++o.tests;
          const double pv = fisher_z_pvalue(corr, n, i, j, S);
          if (pv < 0.0) {
            o.singular.push_back({i, j, S});
            o.sepset = S;
            return true;
          }
          if (pv > options.alpha) {
            o.sepset = S;
            return true;
          }
          return false;
        });
      };
      o.removed = test_from(i, j) || test_from(j, i);
    }
    for (std::size_t e = 0; e < pairs.size(); ++e) {
      const auto [i, j] = pairs[e];
      out.tests_run += results[e].tests;
      out.singular.insert(out.singular.end(), results[e].singular.begin(), results[e].singular.end());
      if (results[e].removed) {
        out.adjacency(i, j) = out.adjacency(j, i) = false;
        out.sepsets[{i, j}] = results[e].sepset;
      }
    }
  }
  return out;
}

Pdag pc_orient(const Skeleton& skeleton) {
  const int p = static_cast<int>(skeleton.adjacency.rows());
  Pdag g{skeleton.adjacency};
  auto adjacent = [&](int a, int b) { return skeleton.adjacency(a, b); };

  // Unshielded colliders a -> c <- b.
  for (int a = 0; a < p; ++a)
    for (int b = a + 1; b < p; ++b) {
      if (adjacent(a, b)) continue;
      const auto it = skeleton.sepsets.find({a, b});
      const std::vector<int> empty;
      const std::vector<int>& sep = it == skeleton.sepsets.end() ? empty : it->second;
      for (int c = 0; c < p; ++c) {
        if (c == a || c == b || !adjacent(a, c) || !adjacent(b, c)) continue;
        if (std::find(sep.begin(), sep.end(), c) != sep.end()) continue;
        // Leave an edge alone if it already points the other way.
        if (g.marks(a, c) && !g.directed(c, a)) g.marks(c, a) = false;
        if (g.marks(b, c) && !g.directed(c, b)) g.marks(c, b) = false;
      }
    }

  bool changed = true;
  while (changed) {
    changed = false;
    for (int a = 0; a < p; ++a)
      for (int b = 0; b < p; ++b) {
        if (a == b || !g.undirected(a, b)) continue;
        bool orient = false;
        for (int c = 0; c < p && !orient; ++c) {
          if (c == a || c == b) continue;
          // R1: c -> a -- b, c and b nonadjacent.
          if (g.directed(c, a) && !g.adjacent(c, b)) orient = true;
          // R2: a -> c -> b with a -- b.
          if (g.directed(a, c) && g.directed(c, b)) orient = true;
        }
        // R3: a -- c -> b, a -- d -> b, c and d nonadjacent.
        for (int c = 0; c < p && !orient; ++c) {
          if (c == a || c == b || !g.undirected(a, c) || !g.directed(c, b)) continue;
          for (int d = c + 1; d < p && !orient; ++d) {
            if (d == a || d == b || !g.undirected(a, d) || !g.directed(d, b)) continue;
            if (!g.adjacent(c, d)) orient = true;
          }
        }
        if (orient) {
          g.marks(b, a) = false;
          changed = true;
        }
      }
  }
  return g;
}

Pdag pc(const Matrix& data, const PcOptions& options) { return pc_orient(pc_skeleton(data, options)); }

Json Pdag::to_json(const std::vector<std::string>& names) const {
  Json nodes = Json::array();
  for (int i = 0; i < num_nodes(); ++i) nodes.push_back(node_name(names, i));
  Json edges = Json::array();
  for (int i = 0; i < num_nodes(); ++i)
    for (int j = 0; j < num_nodes(); ++j) {
      if (undirected(i, j) && i < j)
        edges.push_back({{"from", node_name(names, i)}, {"to", node_name(names, j)}, {"mark", "--"}});
      else if (directed(i, j))
        edges.push_back({{"from", node_name(names, i)}, {"to", node_name(names, j)}, {"mark", "->"}});
    }
  return {{"nodes", nodes}, {"edges", edges}};
}

std::string Pdag::to_dot(const std::vector<std::string>& names) const {
  std::ostringstream os;
  os << "digraph pc {\n";
  for (int i = 0; i < num_nodes(); ++i) os << "  \"" << node_name(names, i) << "\";\n";
  for (int i = 0; i < num_nodes(); ++i)
    for (int j = 0; j < num_nodes(); ++j) {
      if (undirected(i, j) && i < j)
        os << "  \"" << node_name(names, i) << "\" -> \"" << node_name(names, j) << "\" [dir=none];\n";
      else if (directed(i, j))
        os << "  \"" << node_name(names, i) << "\" -> \"" << node_name(names, j) << "\";\n";
    }
  os << "}\n";
  return os.str();
}

Json skeleton_report(const Skeleton& s, const std::vector<std::string>& names) {
  Json sep = Json::array();
  for (const auto& [key, set] : s.sepsets) {
    Json members = Json::array();
    for (int v : set) members.push_back(node_name(names, v));
    sep.push_back({{"a", node_name(names, key.first)}, {"b", node_name(names, key.second)}, {"sepset", members}});
  }
  Json singular = Json::array();
  for (const auto& t : s.singular) {
    Json cond = Json::array();
    for (int v : t.cond) cond.push_back(node_name(names, v));
    singular.push_back({{"a", node_name(names, t.i)}, {"b", node_name(names, t.j)}, {"cond", cond}});
  }
  return {{"sepsets", sep}, {"singular_tests", singular}, {"tests_run", s.tests_run}};
}

}  // namespace mmcrl::discovery
