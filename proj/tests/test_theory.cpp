#include <doctest.h>

#include "oracles.hpp"

#include "mmcrl/rng.hpp"
#include "mmcrl/scm.hpp"
#include "mmcrl/theory.hpp"

#include <algorithm>
#include <numeric>

using namespace mmcrl;
using namespace mmcrl::theory;
using namespace mmcrl::oracle;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

}  // namespace

TEST_CASE("overlap_rows examples") {
  CHECK(overlap_rows(Matrix::Identity(3, 3)).rows() == 0);
  CHECK(overlap_rows(mat({{1, 0}, {0, 1}, {1, 1}})) == mat({{1, 1}}));
  CHECK(overlap_rows(Matrix::Ones(3, 2)).rows() == 3);
}

TEST_CASE("d* examples") {
  CHECK(compute_d_star(Matrix::Identity(3, 3)) == 0);
  CHECK(compute_d_star(Matrix::Ones(3, 2)) == 3);
  CHECK(compute_d_star(mat({{1, 0}, {1, 0}, {0, 1}, {0, 1}, {1, 1}})) == 1);
  CHECK_THROWS_AS(compute_d_star(Matrix::Ones(3, 9)), ConfigError);
}

TEST_CASE("sparsity inequality examples") {
  auto r = check_sparsity_inequality(Matrix::Identity(3, 3));
  CHECK(r.lhs == 3);
  CHECK(r.rhs == 1);
  CHECK(r.holds);
  r = check_sparsity_inequality(Matrix::Ones(3, 2));
  CHECK(r.lhs == 0);
  CHECK(r.rhs == 3);
  CHECK_FALSE(r.holds);
  r = check_sparsity_inequality(mat({{1, 0}, {1, 0}, {0, 1}, {0, 1}, {1, 1}}));
  CHECK(r.lhs == 4);
  CHECK(r.rhs == 3);
  CHECK(r.holds);
}

TEST_CASE("d* equals exhaustive enumeration on random matrices") {
  CounterRng rng(2024, 1);
  int mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto A = random_int_matrix(rng);
    if (compute_d_star(to_matrix(A)) != brute_d_star(A)) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("sampled d* is a lower bound and usually exact") {
  CounterRng rng(77, 1);
  int exact = 0;
  for (int t = 0; t < 200; ++t) {
    const Matrix A = to_matrix(random_int_matrix(rng));
    DStarOptions o;
    o.mode = DStarMode::Sampled;
    o.samples = 64;
    const int s = compute_d_star(A, o);
    const int e = compute_d_star(A);
    CHECK(s <= e);
    exact += s == e;
  }
  CHECK(exact >= 190);
}

TEST_CASE("support-level properties") {
  CounterRng rng(9, 3);
  for (int t = 0; t < 300; ++t) {
    const Matrix A = to_matrix(random_int_matrix(rng));
    const auto base = check_sparsity_inequality(A);

    const Matrix O = overlap_rows(A);
    CHECK(overlap_rows(O) == O);

    std::vector<int> rp(A.rows()), cp(A.cols());
    std::iota(rp.begin(), rp.end(), 0);
    std::iota(cp.begin(), cp.end(), 0);
    rng.shuffle(rp);
    rng.shuffle(cp);
    Matrix P(A.rows(), A.cols());
    for (Eigen::Index r = 0; r < A.rows(); ++r)
      for (Eigen::Index c = 0; c < A.cols(); ++c) P(r, c) = A(rp[r], cp[c]);
    const auto perm = check_sparsity_inequality(P);
    CHECK(perm.lhs == base.lhs);
    CHECK(perm.rhs == base.rhs);
    CHECK(perm.holds == base.holds);

    Matrix S = A;
    for (Eigen::Index r = 0; r < S.rows(); ++r) S.row(r) *= (rng.bernoulli(0.5) ? -1.0 : 1.0) * (1e-5 + 50 * rng.uniform());
    for (Eigen::Index c = 0; c < S.cols(); ++c) S.col(c) *= 1e-2 + 10 * rng.uniform();
    const auto scaled = check_sparsity_inequality(S);
    CHECK(scaled.lhs == base.lhs);
    CHECK(scaled.rhs == base.rhs);
  }
}

TEST_CASE("condition 2 on the Case-1 preset and on a fully connected graph") {
  const auto spec = case_preset(1);
  const auto g = sample_latent_graph(spec, spec.seed);
  const auto model = sample_structural_model(spec, g, spec.seed);
  const auto reports = check_condition2(model, g);
  REQUIRE(reports.size() == 2);
  for (const auto& r : reports) CHECK(r.holds);

  auto dense = ablation_preset(0.0);
  const auto gd = sample_latent_graph(dense, dense.seed);
  CHECK(gd.inter_modal_edge_count() == 4);
  const auto md = sample_structural_model(dense, gd, dense.seed);
  const auto rd = check_condition2(md, gd);
  CHECK(std::any_of(rd.begin(), rd.end(), [](const ConditionReport& r) { return !r.holds; }));
}

TEST_CASE("condition 2 literal form fails any single-column subset") {
  const auto spec = case_preset(1);
  const auto g = sample_latent_graph(spec, 0);
  const auto model = sample_structural_model(spec, g, 0);
  Condition2Options o;
  o.form = Condition2Form::Literal;
  const auto reports = check_condition2(model, g, o);
  CHECK(std::any_of(reports.begin(), reports.end(), [](const ConditionReport& r) { return !r.holds; }));
}

TEST_CASE("condition 2 is vacuous without cross-modal edges") {
  auto spec = case_preset(1);
  spec.sparsity_ratio = 1.0;
  spec.enforce_connectivity = false;
  const auto g = sample_latent_graph(spec, 0);
  const auto model = sample_structural_model(spec, g, 0);
  for (const auto& r : check_condition2(model, g)) {
    CHECK(r.holds);
    CHECK(r.note == "no cross-modal influence");
  }
}

TEST_CASE("mechanism jacobian is supported on the graph") {
  const auto spec = case_preset(2);
  const auto g = sample_latent_graph(spec, 4);
  const auto model = sample_structural_model(spec, g, 4);
  Vector eps = Vector::LinSpaced(6, -1, 1);
  const Matrix G = mechanism_jacobian(model, model.latents_from_noise(eps));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      if (!g.adjacency(i, j)) CHECK(G(i, j) == 0.0);
      else CHECK(std::abs(G(i, j)) > 1e-6);
}

TEST_CASE("rank probe on linear maps") {
  Matrix A(5, 2);
  A << 1, 0, 0, 1, 1, 1, 2, -1, 0.5, 3;
  const Vector eta = Vector::Constant(5, 0.3);
  std::vector<Vector> pts{Vector::Zero(2), Vector::Ones(2), Vector::LinSpaced(2, -2, 5)};
  const auto ok = probe_full_column_rank([&](const Vector& z) { return Vector(A * z + eta); }, pts);
  CHECK(ok.full_column_rank);
  CHECK(ok.points == 3);
  Matrix B = A;
  B.col(1) = B.col(0);
  const auto bad = probe_full_column_rank([&](const Vector& z) { return Vector(B * z + eta); }, pts);
  CHECK_FALSE(bad.full_column_rank);
}

TEST_CASE("condition 1 on generated models") {
  const auto spec = case_preset(1);
  const auto g = sample_latent_graph(spec, 0);
  const auto model = sample_structural_model(spec, g, 0);
  const auto reports = check_condition1(model, g);
  for (const auto& r : reports)
    if (r.condition == "condition1.A1") {
      CHECK(r.holds);
      CHECK(r.min_singular_value > 0.0);
    }

  auto iso = case_preset(1);
  iso.sparsity_ratio = 1.0;
  iso.enforce_connectivity = false;
  const auto gi = sample_latent_graph(iso, 0);
  const auto mi = sample_structural_model(iso, gi, 0);
  for (const auto& r : check_condition1(mi, gi))
    if (r.condition == "condition1.A2") CHECK_FALSE(r.holds);
}
