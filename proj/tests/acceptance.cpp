// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// MMCRL_ACCEPT_ONLY=1,4 restricts the run to the listed criteria.

#include "oracles.hpp"

#include "mmcrl/discovery.hpp"
#include "mmcrl/experiment.hpp"
#include "mmcrl/graph.hpp"
#include "mmcrl/metrics.hpp"
#include "mmcrl/mnist.hpp"
#include "mmcrl/scm.hpp"
#include "mmcrl/theory.hpp"

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

using namespace mmcrl;
using namespace mmcrl::oracle;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct RunResult {
  double mcc = 0.0;
  double r2 = 0.0;
  int shd_inter = -1;
  double seconds = 0.0;
};

constexpr int kSeeds = 3;
// Pairs per variant-MNIST seed; sized so three seeds train within the hour.
constexpr std::int64_t kMnistPairs = 5000;

double now() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
}

std::string fmt(double x, int digits = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

RunResult train_and_evaluate(const MultimodalDataset& data, Recipe recipe, std::uint64_t seed) {
  const double t0 = now();
  recipe.train.seed = seed;
  recipe.model = model_config_for(data, recipe.model);
  TrainResult res = train(data, recipe.model, recipe.train);
  const auto rep = evaluate_model(res.model, data, seed);
  RunResult r;
  r.mcc = rep.mcc.value_or(0.0);
  r.r2 = rep.r2.value_or(0.0);
  r.shd_inter = rep.shd_inter_modal.value_or(-1);
  r.seconds = now() - t0;
  return r;
}

// Synthetic Case-1 runs, memoized by (sparsity ratio, seed).
const RunResult& synthetic_run(double sparsity, int seed) {
  static std::map<std::pair<double, int>, RunResult> cache;
  const auto key = std::make_pair(sparsity, seed);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  GeneratorSpec spec = ablation_preset(sparsity);
  spec.seed = static_cast<std::uint64_t>(seed);
  const GeneratedExperiment ex = generate_experiment(spec);
  const RunResult r = train_and_evaluate(ex.dataset, synthetic_recipe(), static_cast<std::uint64_t>(seed));
  std::cout << "  run sparsity=" << sparsity << " seed=" << seed << " mcc=" << fmt(r.mcc) << " r2=" << fmt(r.r2)
            << " shd_inter=" << r.shd_inter << " time=" << fmt(r.seconds, 0) << "s" << std::endl;
  return cache.emplace(key, r).first->second;
}

Outcome criterion1() {
  int exact = 0;
  std::string shds;
  double slowest = 0.0;
  for (int s = 0; s < kSeeds; ++s) {
    const RunResult& r = synthetic_run(0.75, s);
    exact += r.shd_inter == 0;
    shds += (s ? "," : "") + std::to_string(r.shd_inter);
    slowest = std::max(slowest, r.seconds);
  }
  return {exact >= 2, "inter-modal SHD per seed [" + shds + "], " + std::to_string(exact) +
                          "/3 exact (need 2); slowest seed " + fmt(slowest, 0) + "s"};
}

Outcome criterion2() {
  std::vector<double> m;
  for (int s = 0; s < kSeeds; ++s) m.push_back(synthetic_run(0.75, s).mcc);
  return {mean(m) >= 0.80, "mean MCC " + fmt(mean(m)) + " (need >= 0.80)"};
}

Outcome criterion3() {
  const std::vector<double> ratios{0.0, 0.25, 0.5, 0.75};
  std::vector<double> avg;
  std::string line;
  for (double q : ratios) {
    std::vector<double> m;
    for (int s = 0; s < kSeeds; ++s) m.push_back(synthetic_run(q, s).mcc);
    avg.push_back(mean(m));
    line += (line.empty() ? "" : ", ") + fmt(q, 2) + ":" + fmt(avg.back());
  }
  bool monotone = true;
  for (std::size_t i = 1; i < avg.size(); ++i) monotone = monotone && avg[i] >= avg[i - 1];
  const double gain = avg.back() - avg.front();
  return {monotone && gain >= 0.05, "mean MCC by sparsity {" + line + "}, non-decreasing " +
                                        (monotone ? "yes" : "no") + ", gain " + fmt(gain) + " (need >= 0.05)"};
}

Outcome criterion4() {
  const auto root = mnist::data_root();
  const double t0 = now();
  const auto digits = mnist::load_training_split(root / "mnist");
  const auto fashion = mnist::load_training_split(root / "fashion-mnist");
  std::vector<double> mcc, r2;
  for (int s = 0; s < kSeeds; ++s) {
    mnist::VariantConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(s);
    cfg.n_pairs = kMnistPairs;
    const MultimodalDataset data = mnist::build_variant_mnist(digits, fashion, cfg);
    const RunResult r = train_and_evaluate(data, image_recipe(), static_cast<std::uint64_t>(s));
    std::cout << "  run variant-mnist seed=" << s << " mcc=" << fmt(r.mcc) << " r2=" << fmt(r.r2)
              << " time=" << fmt(r.seconds, 0) << "s" << std::endl;
    mcc.push_back(r.mcc);
    r2.push_back(r.r2);
  }
  const double total = now() - t0;
  const bool within = std::abs(mean(mcc) - 0.87) <= 0.10 && std::abs(mean(r2) - 0.89) <= 0.10;
  const bool floor = mean(mcc) >= 0.75 && mean(r2) >= 0.75;
  std::string detail = "MCC " + fmt(mean(mcc)) + " +- " + fmt(stddev(mcc)) + ", R2 " + fmt(mean(r2)) + " +- " +
                       fmt(stddev(r2)) + ", total " + fmt(total, 0) + "s (limit 3600s)";
  if (!within && floor) detail += "; outside +-0.10 of the reference, fallback floor 0.75 met";
  if (!within && !floor) detail += "; outside +-0.10 of the reference and below the 0.75 floor";
  return {(within || floor) && total <= 3600.0, detail};
}

Outcome criterion5() {
  CounterRng rng(2024, 1);
  int mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto A = random_int_matrix(rng);
    if (theory::compute_d_star(to_matrix(A)) != brute_d_star(A)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches over 1000 matrices up to 8x6"};
}

Outcome criterion6() {
  CounterRng rng(6, 1);
  double worst = 0.0;
  for (int trial = 0; trial < 120; ++trial) {
    const int d = 1 + trial % 6;
    const Matrix t = gaussian(200, d, 1000 + trial);
    Matrix mix(d, d);
    for (Eigen::Index i = 0; i < mix.size(); ++i) mix.data()[i] = rng.normal();
    const Matrix e = t * mix + 0.5 * gaussian(200, d, 5000 + trial);
    worst = std::max(worst, std::abs(metrics::mcc(t, e).mcc - brute_force_mcc(t, e)));
  }
  const Matrix z = gaussian(1000000, 2, 21);
  Matrix e(z.rows(), 2);
  e.col(0) = z.col(0) + z.col(1);
  e.col(1) = z.col(1);
  const double analytic = (1.0 / std::sqrt(2.0) + 1.0) / 2.0;
  const double got = metrics::mcc(z, e).mcc;

  CounterRng g(61, 1);
  int violations = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int p = 2 + static_cast<int>(g.below(7));
    const BoolMatrix a = random_skeleton(p, 0.4, g);
    const BoolMatrix b = random_skeleton(p, 0.4, g);
    const BoolMatrix c = random_skeleton(p, 0.4, g);
    const bool ok = metrics::shd(a, b) == metrics::shd(b, a) && (metrics::shd(a, b) == 0) == (a == b) &&
                    metrics::shd(a, c) <= metrics::shd(a, b) + metrics::shd(b, c) && metrics::shd(a, a) == 0;
    violations += !ok;
  }
  const bool pass = worst < 1e-12 && std::abs(got - analytic) < 0.01 && violations == 0;
  std::ostringstream s;
  s << "brute-force gap " << worst << ", analytic " << fmt(got, 4) << " vs " << fmt(analytic, 4)
    << ", SHD axiom violations " << violations << "/500";
  return {pass, s.str()};
}

Outcome criterion7() {
  double grad = 0.0, round_trip = 0.0;
  for (const std::string type : {"spline", "affine"}) {
    ModelConfig c = tiny_config();
    c.flow_type = type;
    c.alpha_dag = 0.3;
    Model model(c, 7);
    perturb(model, 700, 0.3);
    const std::vector<Matrix> x{randn(4, 3, 131), randn(4, 3, 132)};
    grad = std::max(grad, worst_loss_gradient_error(model, x, make_noise(c, 4, 133)));

    Model flow_model(c, 5);
    perturb(flow_model, 500, 0.5);
    const Matrix gates = flow_model.gate_matrix();
    const Matrix z = randn(1000, 3, 93, 2.0);
    const auto [eps, logdet] = flow_model.flow_noise(z, gates);
    round_trip = std::max(round_trip, (flow_model.flow_inverse(eps, z, gates) - z).cwiseAbs().maxCoeff());
  }
  ad::Tape t;
  const double kl = kl_standard_normal(t.constant(Matrix::Zero(64, 5)), t.constant(Matrix::Zero(64, 5))).scalar();
  const bool pass = grad < 1e-3 && round_trip < 1e-5 && std::abs(kl) <= std::numeric_limits<double>::epsilon();
  std::ostringstream s;
  s << "gradient rel. error " << grad << ", flow round trip " << round_trip << ", KL " << kl;
  return {pass, s.str()};
}

Outcome criterion8() {
  using namespace discovery;
  Matrix chain = gaussian(5000, 3, 71);
  chain.col(1) += chain.col(0);
  chain.col(2) += chain.col(1);
  const Skeleton s = pc_skeleton(chain);
  const Pdag gc = pc_orient(s);
  const bool chain_ok = s.adjacency(0, 1) && s.adjacency(1, 2) && !s.adjacency(0, 2) && s.sepsets.count({0, 2}) == 1 &&
                        s.sepsets.at({0, 2}) == std::vector<int>{1} && gc.undirected(0, 1) && gc.undirected(1, 2);

  Matrix coll = gaussian(5000, 3, 81);
  coll.col(2) += coll.col(0) + coll.col(1);
  const Pdag g = pc(coll);
  const bool collider_ok = g.directed(0, 2) && g.directed(1, 2) && !g.adjacent(0, 1);

  int empty = 0;
  for (int trial = 0; trial < 100; ++trial) empty += pc_skeleton(gaussian(5000, 3, 10000 + trial)).adjacency.any() ? 0 : 1;
  return {chain_ok && collider_ok && empty >= 97,
          std::string("chain ") + (chain_ok ? "exact" : "wrong") + ", collider " + (collider_ok ? "exact" : "wrong") +
              ", independent null empty in " + std::to_string(empty) + "/100 (need >= 97)"};
}

Outcome criterion9() {
  const auto holds_all = [](const GeneratorSpec& spec) {
    const auto g = sample_latent_graph(spec, spec.seed);
    const auto m = sample_structural_model(spec, g, spec.seed);
    const auto reports = theory::check_condition2(m, g);
    return std::all_of(reports.begin(), reports.end(), [](const theory::ConditionReport& r) { return r.holds; });
  };
  const bool sparse = holds_all(case_preset(1));
  const bool dense = holds_all(ablation_preset(0.0));
  return {sparse && !dense, std::string("sparsity 0.75 ") + (sparse ? "holds" : "fails") + ", fully connected " +
                                (dense ? "holds" : "fails")};
}

std::set<int> selected() {
  std::set<int> out;
  const char* env = std::getenv("MMCRL_ACCEPT_ONLY");
  if (env == nullptr || *env == '\0') {
    for (int i = 1; i <= 9; ++i) out.insert(i);
    return out;
  }
  std::stringstream s(env);
  for (std::string tok; std::getline(s, tok, ',');) out.insert(std::stoi(tok));
  return out;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"Case-1 graph recovery", criterion1},
      {"Case-1 identifiability", criterion2},
      {"sparsity ablation trend", criterion3},
      {"variant MNIST", criterion4},
      {"d* oracle equivalence", criterion5},
      {"metric oracles", criterion6},
      {"numerical integrity", criterion7},
      {"PC correctness", criterion8},
      {"condition checker end-to-end", criterion9},
  };
  // Numerical criteria first so their lines appear before the long training runs.
  const std::vector<int> order{5, 6, 7, 8, 9, 1, 2, 3, 4};
  const std::set<int> only = selected();
  int failed = 0;
  for (int id : order) {
    if (!only.count(id)) continue;
    const auto& [name, fn] = criteria[static_cast<std::size_t>(id - 1)];
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
