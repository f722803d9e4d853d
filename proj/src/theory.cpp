#include "mmcrl/theory.hpp"

#include "mmcrl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mmcrl::theory {

Matrix support_clean(const Matrix& A, double zero_tol) {
  return (A.array().abs() > zero_tol).select(A, 0.0);
}

int support_size(const Eigen::Ref<const Vector>& v, double zero_tol) {
  return static_cast<int>((v.array().abs() > zero_tol).count());
}

int numerical_rank(const Matrix& A, double zero_tol) {
  if (A.rows() == 0 || A.cols() == 0) return 0;
  const Matrix clean = support_clean(A, zero_tol);
  Eigen::JacobiSVD<Matrix> svd(clean);
  const auto& s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  const double tol = std::max(zero_tol, static_cast<double>(std::max(A.rows(), A.cols())) *
                                            std::numeric_limits<double>::epsilon() * smax);
  return static_cast<int>((s.array() > tol).count());
}

Matrix overlap_rows(const Matrix& A, double zero_tol) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index r = 0; r < A.rows(); ++r)
    if ((A.row(r).array().abs() > zero_tol).count() > 1) keep.push_back(r);
  Matrix out(static_cast<Eigen::Index>(keep.size()), A.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = A.row(keep[k]);
  return out;
}

namespace {

Matrix take_rows(const Matrix& A, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), A.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = A.row(rows[k]);
  return out;
}

// Visits all size-k subsets of [0, n) in lexicographic order until `visit` returns true.
template <class F>
bool any_subset_of_size(int n, int k, F&& visit) {
  std::vector<int> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    if (visit(idx)) return true;
    int pos = k - 1;
    while (pos >= 0 && idx[pos] == n - k + pos) --pos;
    if (pos < 0) return false;
    ++idx[pos];
    for (int t = pos + 1; t < k; ++t) idx[t] = idx[t - 1] + 1;
  }
}

}  // namespace

int compute_d_star(const Matrix& A, const DStarOptions& options) {
  const Matrix O = overlap_rows(A, options.zero_tol);
  const int r = static_cast<int>(O.rows());
  const int d2 = static_cast<int>(A.cols());
  if (r == 0) return 0;

  if (options.mode == DStarMode::Exact) {
    if (d2 > kExactMaxCols)
      throw ConfigError("compute_d_star: exact mode supports at most " + std::to_string(kExactMaxCols) +
                        " columns, got " + std::to_string(d2));
    if (r > kExactMaxOverlapRows)
      throw ConfigError("compute_d_star: exact mode supports at most " +
                        std::to_string(kExactMaxOverlapRows) + " overlap rows, got " + std::to_string(r));
    // Rank deficiency is inherited by subsets, so the first size (from the
    // top) with a deficient subset is the answer. Any fewer than d2 rows are
    // trivially deficient.
    for (int k = r; k >= d2; --k) {
      const bool found = any_subset_of_size(r, k, [&](const std::vector<int>& rows) {
        return numerical_rank(take_rows(O, rows), options.zero_tol) < d2;
      });
      if (found) return k;
    }
    return std::min(r, d2 - 1);
  }

  CounterRng rng(options.seed, streams::kTheory);
  int best = std::min(r, d2 - 1);
  std::vector<int> order(r);
  for (int s = 0; s < options.samples; ++s) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<int> chosen;
    for (int row : order) {
      chosen.push_back(row);
      if (numerical_rank(take_rows(O, chosen), options.zero_tol) >= d2) chosen.pop_back();
    }
    best = std::max(best, static_cast<int>(chosen.size()));
  }
  return best;
}

SparsityCheck check_sparsity_inequality(const Matrix& A, const DStarOptions& options) {
  SparsityCheck out;
  int union_size = 0;
  for (Eigen::Index r = 0; r < A.rows(); ++r)
    if ((A.row(r).array().abs() > options.zero_tol).any()) ++union_size;
  for (Eigen::Index c = 0; c < A.cols(); ++c) out.rhs = std::max(out.rhs, support_size(A.col(c), options.zero_tol));
  out.lhs = union_size - compute_d_star(A, options);
  out.holds = out.lhs > out.rhs;
  return out;
}

Json ConditionReport::to_json() const {
  Json j = {{"modality", modality},
            {"condition", condition},
            {"holds", holds},
            {"margin", margin},
            {"min_singular_value", min_singular_value},
            {"points_tested", points_tested}};
  if (!note.empty()) j["note"] = note;
  return j;
}

Json reports_to_json(const std::vector<ConditionReport>& reports) {
  Json arr = Json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  return arr;
}

// ---------------------------------------------------------------------------
// Condition 2

Matrix mechanism_jacobian(const StructuralModel& model, const Vector& z, double step) {
  const auto d = z.size();
  Matrix G = Matrix::Zero(d, d);
  Vector zp = z;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (int j : model.mechanisms[static_cast<std::size_t>(i)].parents) {
      const double keep = zp(j);
      zp(j) = keep + step;
      const double up = model.mechanism(static_cast<int>(i), zp);
      zp(j) = keep - step;
      const double down = model.mechanism(static_cast<int>(i), zp);
      zp(j) = keep;
      G(i, j) = (up - down) / (2.0 * step);
    }
  }
  return G;
}

namespace {

std::vector<std::vector<int>> nonempty_subsets(const std::vector<int>& items) {
  std::vector<std::vector<int>> out;
  const auto n = items.size();
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << n); ++mask) {
    std::vector<int> s;
    for (std::size_t b = 0; b < n; ++b)
      if (mask & (std::uint64_t{1} << b)) s.push_back(items[b]);
    out.push_back(std::move(s));
  }
  return out;
}

// Random invertible block-diagonal matrix acting on the latents outside m.
Matrix sample_block_diagonal(CounterRng& rng, const std::vector<int>& others, const LatentGraph& g) {
  const auto n = static_cast<Eigen::Index>(others.size());
  Matrix T = Matrix::Zero(n, n);
  for (int mod = 0; mod < g.num_modalities(); ++mod) {
    std::vector<Eigen::Index> pos;
    for (Eigen::Index k = 0; k < n; ++k)
      if (g.modality_of[others[k]] == mod) pos.push_back(k);
    if (pos.empty()) continue;
    const auto b = static_cast<Eigen::Index>(pos.size());
    Matrix block(b, b);
    for (int attempt = 0;; ++attempt) {
      for (Eigen::Index r = 0; r < b; ++r)
        for (Eigen::Index c = 0; c < b; ++c) block(r, c) = rng.normal();
      Eigen::JacobiSVD<Matrix> svd(block);
      if (svd.singularValues().minCoeff() > 1e-2) break;
      if (attempt > 100) throw NumericalError("could not sample an invertible block for T");
    }
    for (Eigen::Index r = 0; r < b; ++r)
      for (Eigen::Index c = 0; c < b; ++c) T(pos[r], pos[c]) = block(r, c);
  }
  return T;
}

Matrix select(const Matrix& G, const std::vector<int>& rows, const std::vector<int>& cols) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = G(rows[r], cols[c]);
  return out;
}

}  // namespace

std::vector<ConditionReport> check_condition2(const StructuralModel& model, const LatentGraph& graph,
                                              const Condition2Options& options) {
  graph.validate();
  require(graph.size() <= kExactMaxLatents,
          "check_condition2: exact mode supports at most " + std::to_string(kExactMaxLatents) + " latents");
  require(options.num_points >= 1 && options.num_T_samples >= 0, "check_condition2: bad point/sample counts");
  const int d = graph.size();
  const int M = graph.num_modalities();
  const UpDownSets ud = up_down_sets(graph);
  DStarOptions dso;
  dso.zero_tol = options.zero_tol;

  CounterRng rng(options.seed, streams::kTheory + 1);
  std::vector<Matrix> Gs;
  for (int p = 0; p < options.num_points; ++p) {
    Vector eps(d);
    for (int i = 0; i < d; ++i) eps(i) = rng.normal();
    Gs.push_back(mechanism_jacobian(model, model.latents_from_noise(eps)));
  }

  std::vector<ConditionReport> reports;
  for (int m = 0; m < M; ++m) {
    ConditionReport rep;
    rep.modality = m;
    rep.condition = "condition2";
    rep.points_tested = options.num_points;
    rep.holds = true;
    rep.margin = std::numeric_limits<double>::infinity();

    const auto& U = ud.upstream[m];
    const auto& D = ud.downstream[m];
    if (U.empty() && D.empty()) {
      rep.note = "no cross-modal influence";
      rep.margin = 0.0;
      reports.push_back(rep);
      continue;
    }
    std::vector<int> others;
    for (int k = 0; k < d; ++k)
      if (graph.modality_of[k] != m) others.push_back(k);
    const std::vector<int> mine = graph.members(m);

    std::vector<Matrix> Ts{Matrix::Identity(static_cast<Eigen::Index>(others.size()),
                                            static_cast<Eigen::Index>(others.size()))};
    for (int t = 0; t < options.num_T_samples; ++t) Ts.push_back(sample_block_diagonal(rng, others, graph));

    auto record = [&](const SparsityCheck& c) {
      rep.margin = std::min(rep.margin, static_cast<double>(c.lhs - c.rhs));
      rep.holds = rep.holds && c.holds;
    };

    for (const Matrix& G : Gs) {
      for (const Matrix& T : Ts) {
        const Matrix Tinv = T.inverse();
        if (options.form == Condition2Form::Literal) {
          for (const auto& C : nonempty_subsets(U)) record(check_sparsity_inequality(T * select(G, others, C), dso));
          for (const auto& R : nonempty_subsets(D))
            record(check_sparsity_inequality((select(G, R, others) * Tinv).transpose(), dso));
          continue;
        }
        for (int i : mine) {
          std::vector<int> Ui;
          std::vector<int> Di;
          for (int u : U)
            if (u != i) Ui.push_back(u);
          for (int v : D)
            if (v != i) Di.push_back(v);
          const int rhs_up = support_size(select(G, others, {i}).col(0), options.zero_tol);
          const int rhs_down = support_size(select(G, {i}, others).row(0).transpose(), options.zero_tol);
          for (auto cols : nonempty_subsets(Ui)) {
            cols.push_back(i);
            auto c = check_sparsity_inequality(T * select(G, others, cols), dso);
            c.rhs = rhs_up;
            c.holds = c.lhs > c.rhs;
            record(c);
          }
          for (auto rows : nonempty_subsets(Di)) {
            rows.push_back(i);
            auto c = check_sparsity_inequality((select(G, rows, others) * Tinv).transpose(), dso);
            c.rhs = rhs_down;
            c.holds = c.lhs > c.rhs;
            record(c);
          }
        }
      }
    }
    if (!std::isfinite(rep.margin)) {
      // Only one upstream/downstream component: no subset to test.
      rep.margin = 0.0;
      rep.note = "no subsets to test";
    }
    reports.push_back(rep);
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Condition 1

Matrix numerical_jacobian(const VectorMap& f, const Vector& at, double step) {
  const Vector f0 = f(at);
  Matrix J(f0.size(), at.size());
  Vector x = at;
  for (Eigen::Index k = 0; k < at.size(); ++k) {
    const double keep = x(k);
    x(k) = keep + step;
    const Vector up = f(x);
    x(k) = keep - step;
    const Vector down = f(x);
    x(k) = keep;
    J.col(k) = (up - down) / (2.0 * step);
  }
  return J;
}

RankProbe probe_full_column_rank(const VectorMap& f, const std::vector<Vector>& points, double fd_step,
                                 double rel_tol) {
  RankProbe probe;
  probe.min_singular_value = std::numeric_limits<double>::infinity();
  probe.worst_margin = std::numeric_limits<double>::infinity();
  for (const auto& p : points) {
    const Matrix J = numerical_jacobian(f, p, fd_step);
    ++probe.points;
    if (J.rows() < J.cols()) {
      probe.full_column_rank = false;
      probe.min_singular_value = 0.0;
      probe.worst_margin = std::min(probe.worst_margin, 0.0);
      continue;
    }
    Eigen::JacobiSVD<Matrix> svd(J);
    const auto& s = svd.singularValues();
    const double smin = s(s.size() - 1);
    const double tol = std::max(rel_tol * s(0), std::numeric_limits<double>::min());
    probe.min_singular_value = std::min(probe.min_singular_value, smin);
    probe.worst_margin = std::min(probe.worst_margin, smin - tol);
    if (smin <= tol) probe.full_column_rank = false;
  }
  return probe;
}

std::vector<ConditionReport> check_condition1(const StructuralModel& model, const LatentGraph& graph,
                                              const Condition1Options& options) {
  graph.validate();
  require(options.num_points >= 1, "check_condition1: num_points must be positive");
  const int d = graph.size();
  const int M = graph.num_modalities();
  const int E = std::accumulate(model.exo_dims.begin(), model.exo_dims.end(), 0);
  CounterRng rng(options.seed, streams::kTheory + 2);

  std::vector<Vector> eps_pts;
  std::vector<Vector> eta_pts;
  for (int p = 0; p < options.num_points; ++p) {
    Vector eps(d);
    Vector eta(E);
    for (int i = 0; i < d; ++i) eps(i) = rng.normal();
    for (int i = 0; i < E; ++i) eta(i) = rng.normal();
    eps_pts.push_back(eps);
    eta_pts.push_back(eta);
  }

  std::vector<ConditionReport> reports;
  for (int m = 0; m < M; ++m) {
    const auto [zs, zn] = latent_block(model.latent_dims, m);
    const auto [es, en] = latent_block(model.exo_dims, m);

    // A1
    std::vector<Vector> pts;
    for (int p = 0; p < options.num_points; ++p) {
      const Vector z = model.latents_from_noise(eps_pts[p]);
      Vector in(zn + en);
      in << z.segment(zs, zn), eta_pts[p].segment(es, en);
      pts.push_back(in);
    }
    const auto& mix = model.mixing[static_cast<std::size_t>(m)];
    const RankProbe a1 = probe_full_column_rank([&](const Vector& v) { return mix(v); }, pts, options.fd_step,
                                                options.rel_tol);
    ConditionReport r1;
    r1.modality = m;
    r1.condition = "condition1.A1";
    r1.holds = a1.full_column_rank;
    r1.margin = a1.worst_margin;
    r1.min_singular_value = a1.min_singular_value;
    r1.points_tested = a1.points;
    reports.push_back(r1);

    // A2: z^(m) held as free inputs, the other latents follow their mechanisms.
    ConditionReport r2;
    r2.modality = m;
    r2.condition = "condition1.A2";
    r2.points_tested = options.num_points;
    RankProbe a2;
    a2.min_singular_value = std::numeric_limits<double>::infinity();
    a2.worst_margin = std::numeric_limits<double>::infinity();
    for (int p = 0; p < options.num_points; ++p) {
      const Vector eps = eps_pts[p];
      const Vector eta = eta_pts[p];
      auto f = [&](const Vector& zm) {
        Vector z = Vector::Zero(d);
        for (int i : model.order) {
          if (graph.modality_of[i] == m) z(i) = zm(i - zs);
          else z(i) = model.mechanism(i, z) + eps(i);
        }
        std::vector<Vector> outs;
        Eigen::Index total = 0;
        for (int n = 0; n < M; ++n) {
          if (n == m) continue;
          outs.push_back(model.observe(n, z, eta));
          total += outs.back().size();
        }
        Vector x(total);
        Eigen::Index off = 0;
        for (const auto& o : outs) {
          x.segment(off, o.size()) = o;
          off += o.size();
        }
        return x;
      };
      const Vector base = model.latents_from_noise(eps).segment(zs, zn);
      const RankProbe one = probe_full_column_rank(f, {base}, options.fd_step, options.rel_tol);
      a2.full_column_rank = a2.full_column_rank && one.full_column_rank;
      a2.min_singular_value = std::min(a2.min_singular_value, one.min_singular_value);
      a2.worst_margin = std::min(a2.worst_margin, one.worst_margin);
    }
    r2.holds = a2.full_column_rank;
    r2.margin = a2.worst_margin;
    r2.min_singular_value = a2.min_singular_value;
    reports.push_back(r2);
  }
  return reports;
}

}  // namespace mmcrl::theory
