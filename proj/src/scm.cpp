#include "mmcrl/scm.hpp"

#include "mmcrl/kernels.hpp"
#include "mmcrl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace mmcrl {

// ---------------------------------------------------------------------------
// GeneratorSpec

int GeneratorSpec::total_latent_dim() const {
  return std::accumulate(latent_dims.begin(), latent_dims.end(), 0);
}

int GeneratorSpec::total_exo_dim() const { return std::accumulate(exo_dims.begin(), exo_dims.end(), 0); }

int GeneratorSpec::inter_modal_pairs() const {
  int pairs = 0;
  for (int a = 0; a < num_modalities; ++a)
    for (int b = a + 1; b < num_modalities; ++b) pairs += latent_dims[a] * latent_dims[b];
  return pairs;
}

int GeneratorSpec::inter_modal_edge_target() const {
  return static_cast<int>(std::lround((1.0 - sparsity_ratio) * inter_modal_pairs()));
}

std::vector<int> GeneratorSpec::modality_of() const {
  std::vector<int> out;
  for (int m = 0; m < num_modalities; ++m) out.insert(out.end(), latent_dims[m], m);
  return out;
}

void GeneratorSpec::validate() const {
  require(num_modalities >= 1, "num_modalities must be positive");
  const auto M = static_cast<std::size_t>(num_modalities);
  require(latent_dims.size() == M && exo_dims.size() == M && obs_dims.size() == M,
          "latent_dims, exo_dims and obs_dims need one entry per modality");
  for (std::size_t m = 0; m < M; ++m) {
    require(latent_dims[m] >= 1 && exo_dims[m] >= 1 && obs_dims[m] >= 1, "all dims must be >= 1");
    require(obs_dims[m] >= latent_dims[m] + exo_dims[m],
            "obs_dims[m] must be at least latent_dims[m] + exo_dims[m] for an injective mixing map");
  }
  require(sparsity_ratio >= 0.0 && sparsity_ratio <= 1.0, "sparsity_ratio must lie in [0, 1]");
  require(n_samples >= 1, "n_samples must be positive");
  require(mixing_depth >= 1, "mixing_depth must be positive");
  require(leaky_slope > 0.0 && leaky_slope <= 1.0, "leaky_slope must lie in (0, 1]");
  require(intra_edge_prob >= 0.0 && intra_edge_prob <= 1.0, "intra_edge_prob must lie in [0, 1]");
  require(noise_family == "gaussian", "noise_family: only \"gaussian\" is implemented");
  require(mechanism_hidden >= 1, "mechanism_hidden must be positive");
  require(mechanism_snr >= 0.0, "mechanism_snr must be non-negative");
}

Json GeneratorSpec::to_json() const {
  return {{"num_modalities", num_modalities},
          {"latent_dims", latent_dims},
          {"exo_dims", exo_dims},
          {"obs_dims", obs_dims},
          {"sparsity_ratio", sparsity_ratio},
          {"n_samples", n_samples},
          {"seed", seed},
          {"mixing_depth", mixing_depth},
          {"leaky_slope", leaky_slope},
          {"intra_edge_prob", intra_edge_prob},
          {"enforce_connectivity", enforce_connectivity},
          {"noise_family", noise_family},
          {"mechanism_hidden", mechanism_hidden},
          {"mechanism_snr", mechanism_snr}};
}

GeneratorSpec GeneratorSpec::from_json(const Json& j) {
  require(j.is_object(), "generator spec must be a JSON object");
  GeneratorSpec s;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "num_modalities") s.num_modalities = value.get<int>();
      else if (key == "latent_dims") s.latent_dims = value.get<std::vector<int>>();
      else if (key == "exo_dims") s.exo_dims = value.get<std::vector<int>>();
      else if (key == "obs_dims") s.obs_dims = value.get<std::vector<int>>();
      else if (key == "sparsity_ratio") s.sparsity_ratio = value.get<double>();
      else if (key == "n_samples") s.n_samples = value.get<std::int64_t>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else if (key == "mixing_depth") s.mixing_depth = value.get<int>();
      else if (key == "leaky_slope") s.leaky_slope = value.get<double>();
      else if (key == "intra_edge_prob") s.intra_edge_prob = value.get<double>();
      else if (key == "enforce_connectivity") s.enforce_connectivity = value.get<bool>();
      else if (key == "noise_family") s.noise_family = value.get<std::string>();
      else if (key == "mechanism_hidden") s.mechanism_hidden = value.get<int>();
      else if (key == "mechanism_snr") s.mechanism_snr = value.get<double>();
      else throw ConfigError("unknown generator key '" + key + "'");
    } catch (const Json::exception& e) {
      throw ConfigError("generator key '" + key + "': " + e.what());
    }
  }
  s.validate();
  return s;
}

GeneratorSpec case_preset(int case_id) {
  GeneratorSpec s;
  switch (case_id) {
    case 1:
      s.num_modalities = 2;
      s.latent_dims = {2, 2};
      s.exo_dims = {1, 1};
      s.obs_dims = {15, 15};
      break;
    case 2:
      s.num_modalities = 2;
      s.latent_dims = {3, 3};
      s.exo_dims = {1, 1};
      s.obs_dims = {20, 20};
      break;
    case 3:
      s.num_modalities = 4;
      s.latent_dims = {2, 2, 2, 2};
      s.exo_dims = {1, 1, 1, 1};
      s.obs_dims = {15, 15, 15, 15};
      break;
    default:
      throw ConfigError("unknown case id " + std::to_string(case_id) + " (expected 1, 2 or 3)");
  }
  s.sparsity_ratio = 0.75;
  s.n_samples = 10000;
  return s;
}

GeneratorSpec ablation_preset(double sparsity_ratio) {
  const double known[] = {0.0, 0.25, 0.5, 0.75};
  const bool ok = std::any_of(std::begin(known), std::end(known),
                              [&](double r) { return std::abs(r - sparsity_ratio) < 1e-12; });
  require(ok, "ablation sparsity ratio must be one of 0, 0.25, 0.5, 0.75");
  GeneratorSpec s = case_preset(1);
  s.sparsity_ratio = sparsity_ratio;
  return s;
}

// ---------------------------------------------------------------------------
// Mechanisms and mixing maps

double LatentMechanism::operator()(const Vector& parent_values) const {
  if (parents.empty()) return b2;
  const Vector h = (W1 * parent_values + b1).array().tanh().matrix();
  return w2.dot(h) + b2;
}

Vector MixingMap::operator()(const Vector& input) const {
  Vector v = input;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    v = weights[l] * v + biases[l];
    for (Eigen::Index k = 0; k < v.size(); ++k)
      if (v(k) < 0.0) v(k) *= slope;
  }
  return v;
}

Matrix MixingMap::apply_rows(const Matrix& inputs) const {
  Matrix v = inputs;
  for (std::size_t l = 0; l < weights.size(); ++l)
    v = kernels::omp::affine_leaky(v, weights[l], biases[l], slope);
  return v;
}

Matrix MixingMap::jacobian(const Vector& input) const {
  Vector v = input;
  Matrix J = Matrix::Identity(input.size(), input.size());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    v = weights[l] * v + biases[l];
    Matrix layer = weights[l];
    for (Eigen::Index k = 0; k < v.size(); ++k)
      if (v(k) < 0.0) {
        v(k) *= slope;
        layer.row(k) *= slope;
      }
    J = layer * J;
  }
  return J;
}

double StructuralModel::mechanism(int i, const Vector& z) const {
  const auto& mech = mechanisms[static_cast<std::size_t>(i)];
  Vector p(static_cast<Eigen::Index>(mech.parents.size()));
  for (std::size_t k = 0; k < mech.parents.size(); ++k) p(static_cast<Eigen::Index>(k)) = z(mech.parents[k]);
  return mech(p);
}

Vector StructuralModel::latents_from_noise(const Vector& eps) const {
  Vector z = Vector::Zero(eps.size());
  for (int i : order) z(i) = mechanism(i, z) + eps(i);
  return z;
}

Matrix StructuralModel::latents_from_noise_rows(const Matrix& eps) const {
  Matrix z(eps.rows(), eps.cols());
  const Eigen::Index n = eps.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index r = 0; r < n; ++r) z.row(r) = latents_from_noise(eps.row(r).transpose()).transpose();
  return z;
}

Vector StructuralModel::observe(int m, const Vector& z_all, const Vector& eta_all) const {
  const auto [zs, zn] = latent_block(latent_dims, m);
  const auto [es, en] = latent_block(exo_dims, m);
  Vector in(zn + en);
  in << z_all.segment(zs, zn), eta_all.segment(es, en);
  return mixing[static_cast<std::size_t>(m)](in);
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

bool modalities_connected(const std::vector<std::pair<int, int>>& chosen,
                          const std::vector<int>& modality_of, int M) {
  std::vector<int> parent(M);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (auto [a, b] : chosen) parent[find(modality_of[a])] = find(modality_of[b]);
  const int root = find(0);
  for (int m = 1; m < M; ++m)
    if (find(m) != root) return false;
  return true;
}

Matrix gaussian_matrix(CounterRng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Matrix W(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) W(i, j) = scale * rng.normal();
  return W;
}

double min_singular_value(const Matrix& W) {
  Eigen::JacobiSVD<Matrix> svd(W);
  return svd.singularValues().minCoeff();
}

Matrix full_rank_matrix(CounterRng& rng, Eigen::Index rows, Eigen::Index cols) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    Matrix W = gaussian_matrix(rng, rows, cols, scale);
    if (min_singular_value(W) >= kSingularValueFloor) return W;
  }
  throw NumericalError("could not sample a full-rank mixing layer within the resample budget");
}

}  // namespace

LatentGraph sample_latent_graph(const GeneratorSpec& spec, std::uint64_t rng_seed) {
  spec.validate();
  CounterRng rng(rng_seed, streams::kGraph);
  const int d = spec.total_latent_dim();
  const int M = spec.num_modalities;

  LatentGraph g;
  g.modality_of = spec.modality_of();
  g.adjacency = BoolMatrix::Constant(d, d, false);

  std::vector<int> perm(d);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<int> rank(d);
  for (int r = 0; r < d; ++r) rank[perm[r]] = r;

  auto add_edge = [&](int a, int b) {
    if (rank[a] < rank[b]) g.adjacency(b, a) = true;
    else g.adjacency(a, b) = true;
  };

  for (int a = 0; a < d; ++a)
    for (int b = a + 1; b < d; ++b)
      if (g.modality_of[a] == g.modality_of[b] && rng.bernoulli(spec.intra_edge_prob)) add_edge(a, b);

  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < d; ++a)
    for (int b = a + 1; b < d; ++b)
      if (g.modality_of[a] != g.modality_of[b]) pairs.emplace_back(a, b);
  const int k = spec.inter_modal_edge_target();
  const bool enforce = spec.enforce_connectivity && M > 1;
  if (enforce && k < M - 1)
    throw ConfigError("sparsity_ratio " + std::to_string(spec.sparsity_ratio) + " leaves " +
                      std::to_string(k) + " inter-modal edges, fewer than the " +
                      std::to_string(M - 1) + " needed to connect all modalities");

  std::vector<std::pair<int, int>> chosen;
  bool found = false;
  for (int attempt = 0; attempt < 10000 && !found; ++attempt) {
    auto shuffled = pairs;
    rng.shuffle(shuffled);
    chosen.assign(shuffled.begin(), shuffled.begin() + k);
    found = !enforce || modalities_connected(chosen, g.modality_of, M);
  }
  if (!found) {
    // Constructive fallback: a random spanning tree over modalities first.
    chosen.clear();
    std::vector<int> mods(M);
    std::iota(mods.begin(), mods.end(), 0);
    rng.shuffle(mods);
    std::set<std::pair<int, int>> used;
    for (int t = 1; t < M; ++t) {
      const int a_mod = mods[t];
      const int b_mod = mods[rng.below(static_cast<std::uint64_t>(t))];
      std::vector<std::pair<int, int>> options;
      for (auto p : pairs) {
        const int ma = g.modality_of[p.first];
        const int mb = g.modality_of[p.second];
        if ((ma == a_mod && mb == b_mod) || (ma == b_mod && mb == a_mod)) options.push_back(p);
      }
      const auto p = options[rng.below(options.size())];
      chosen.push_back(p);
      used.insert(p);
    }
    std::vector<std::pair<int, int>> rest;
    for (auto p : pairs)
      if (!used.count(p)) rest.push_back(p);
    rng.shuffle(rest);
    for (int t = 0; static_cast<int>(chosen.size()) < k; ++t) chosen.push_back(rest[t]);
  }
  for (auto [a, b] : chosen) add_edge(a, b);
  g.validate();
  return g;
}

double mixing_injectivity_margin(const StructuralModel& model, int points, std::uint64_t seed) {
  CounterRng rng(seed, streams::kProbe);
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& map : model.mixing) {
    for (int p = 0; p < points; ++p) {
      Vector in(map.input_dim());
      for (Eigen::Index k = 0; k < in.size(); ++k) in(k) = 2.0 * rng.normal();
      const Matrix J = map.jacobian(in);
      Eigen::JacobiSVD<Matrix> svd(J);
      const auto& s = svd.singularValues();
      const double tol = static_cast<double>(std::max(J.rows(), J.cols())) *
                         std::numeric_limits<double>::epsilon() * s(0);
      worst = std::min(worst, s(s.size() - 1) - tol);
    }
  }
  return worst;
}

void calibrate_mechanisms(StructuralModel& model, double snr, std::uint64_t seed) {
  constexpr Eigen::Index kRows = 4096;
  const int d = model.graph.size();
  Matrix eps(kRows, d);
  CounterRng rng(seed, streams::kProbe);
  for (Eigen::Index r = 0; r < kRows; ++r)
    for (int i = 0; i < d; ++i) eps(r, i) = rng.normal();
  Matrix z = Matrix::Zero(kRows, d);
  for (int i : model.order) {
    auto& mech = model.mechanisms[static_cast<std::size_t>(i)];
    if (mech.parents.empty()) {
      z.col(i) = eps.col(i);
      continue;
    }
    Vector f(kRows);
    Vector pa(static_cast<Eigen::Index>(mech.parents.size()));
    for (Eigen::Index r = 0; r < kRows; ++r) {
      for (std::size_t k = 0; k < mech.parents.size(); ++k) pa(static_cast<Eigen::Index>(k)) = z(r, mech.parents[k]);
      f(r) = mech(pa);
    }
    const double mean = f.mean();
    const double var = (f.array() - mean).square().mean();
    if (var > 1e-12) {
      const double scale = std::sqrt(snr / var);
      mech.w2 *= scale;
      mech.b2 = -scale * (mean - mech.b2);
      f = ((f.array() - mean) * scale).matrix();
    }
    z.col(i) = f + eps.col(i);
  }
}

StructuralModel sample_structural_model(const GeneratorSpec& spec, const LatentGraph& graph,
                                        std::uint64_t rng_seed) {
  spec.validate();
  graph.validate();
  require(graph.size() == spec.total_latent_dim(), "graph size does not match spec latent dims");
  require(graph.modality_of == spec.modality_of(), "graph modality partition does not match spec");
  CounterRng rng(rng_seed, streams::kStructural);

  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    StructuralModel model;
    model.graph = graph;
    model.latent_dims = spec.latent_dims;
    model.exo_dims = spec.exo_dims;
    model.order = *topological_order(graph.adjacency);

    const int h = spec.mechanism_hidden;
    for (int i = 0; i < graph.size(); ++i) {
      LatentMechanism mech;
      mech.parents = graph.parents(i);
      const auto k = static_cast<Eigen::Index>(mech.parents.size());
      if (k > 0) {
        mech.W1 = gaussian_matrix(rng, h, k, 1.0 / std::sqrt(static_cast<double>(k)));
        mech.b1 = gaussian_matrix(rng, h, 1, 0.1);
        mech.w2 = gaussian_matrix(rng, h, 1, 2.0 / std::sqrt(static_cast<double>(h)));
      }
      model.mechanisms.push_back(std::move(mech));
    }
    if (spec.mechanism_snr > 0.0)
      calibrate_mechanisms(model, spec.mechanism_snr, counter_hash(rng_seed, streams::kProbe, attempt));

    for (int m = 0; m < spec.num_modalities; ++m) {
      MixingMap map;
      map.slope = spec.leaky_slope;
      Eigen::Index in = spec.latent_dims[m] + spec.exo_dims[m];
      const Eigen::Index out = spec.obs_dims[m];
      for (int l = 0; l < spec.mixing_depth; ++l) {
        map.weights.push_back(full_rank_matrix(rng, out, in));
        map.biases.push_back(gaussian_matrix(rng, out, 1, 0.1));
        in = out;
      }
      model.mixing.push_back(std::move(map));
    }

    if (mixing_injectivity_margin(model, 100, rng.next_u64()) > 0.0) return model;
  }
  throw NumericalError("no sampled structural model passed the injectivity probe");
}

MultimodalDataset generate_dataset(const GeneratorSpec& spec, const LatentGraph& graph,
                                   const StructuralModel& model, std::int64_t n) {
  require(n >= 1, "generate_dataset: n must be positive");
  spec.validate();
  const auto rows = static_cast<Eigen::Index>(n);
  Matrix eps(rows, spec.total_latent_dim());
  Matrix eta(rows, spec.total_exo_dim());
  kernels::omp::fill_normal(eps, spec.seed, streams::kNoise);
  kernels::omp::fill_normal(eta, spec.seed, streams::kExogenous);
  const Matrix z = model.latents_from_noise_rows(eps);

  auto as_float = [](const Matrix& m) -> Matrix { return m.cast<float>().cast<double>(); };

  MultimodalDataset d;
  for (int m = 0; m < spec.num_modalities; ++m) {
    const auto [zs, zn] = latent_block(spec.latent_dims, m);
    const auto [es, en] = latent_block(spec.exo_dims, m);
    Matrix in(rows, zn + en);
    in << z.middleCols(zs, zn), eta.middleCols(es, en);
    d.observations.push_back(as_float(model.mixing[static_cast<std::size_t>(m)].apply_rows(in)));
  }
  d.latents = as_float(z);
  d.exogenous = as_float(eta);
  d.noise = as_float(eps);
  d.graph = graph;
  d.latent_dims = spec.latent_dims;
  d.exo_dims = spec.exo_dims;
  d.provenance = {{"source", "scm_datagen"}, {"generator", spec.to_json()}};
  d.validate();
  return d;
}

GeneratedExperiment generate_experiment(const GeneratorSpec& spec) {
  auto graph = sample_latent_graph(spec, spec.seed);
  auto model = sample_structural_model(spec, graph, spec.seed);
  auto data = generate_dataset(spec, graph, model, spec.n_samples);
  return {std::move(graph), std::move(model), std::move(data)};
}

}  // namespace mmcrl
