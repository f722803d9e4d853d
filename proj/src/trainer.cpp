#include "mmcrl/trainer.hpp"

#include "mmcrl/metrics.hpp"
#include "mmcrl/rng.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace mmcrl {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  require(epochs >= 0, "train: epochs must be non-negative");
  require(batch_size > 0, "train: batch_size must be positive");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "train: learning_rate must be positive");
  require(eval_every > 0, "train: eval_every must be positive");
  require(patience > 0, "train: patience must be positive");
  require(val_fraction > 0.0 && val_fraction < 1.0, "train: val_fraction must lie in (0, 1)");
  require(clip_norm >= 0.0, "train: clip_norm must be non-negative");
}

void TrainConfig::validate(Eigen::Index n_samples) const {
  validate();
  require(n_samples >= 2, "train: need at least two samples");
  const auto [tr, va] = train_val_split(n_samples, val_fraction, seed);
  require(batch_size <= static_cast<Eigen::Index>(tr.size()),
          "train: batch_size " + std::to_string(batch_size) + " exceeds the " + std::to_string(tr.size()) +
              " training rows");
}

Json TrainConfig::to_json() const {
  return {{"epochs", epochs},           {"batch_size", batch_size},   {"learning_rate", learning_rate},
          {"seed", seed},               {"eval_every", eval_every},   {"checkpoint_dir", checkpoint_dir},
          {"patience", patience},       {"val_fraction", val_fraction}, {"clip_norm", clip_norm}};
}

TrainConfig TrainConfig::from_json(const Json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const Json& j, const TrainConfig& base) {
  require(j.is_object(), "train config must be a JSON object");
  TrainConfig c = base;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "eval_every") c.eval_every = v.get<int>();
      else if (key == "checkpoint_dir") c.checkpoint_dir = v.get<std::string>();
      else if (key == "patience") c.patience = v.get<int>();
      else if (key == "val_fraction") c.val_fraction = v.get<double>();
      else if (key == "clip_norm") c.clip_norm = v.get<double>();
      else throw ConfigError("train config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("train config: bad value for '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> train_val_split(Eigen::Index n, double val_fraction,
                                                                                 std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  CounterRng rng(seed, streams::kSplit);
  rng.shuffle(idx);
  auto n_val = static_cast<Eigen::Index>(std::llround(val_fraction * static_cast<double>(n)));
  n_val = std::clamp<Eigen::Index>(n_val, n > 1 ? 1 : 0, n - 1);
  std::vector<Eigen::Index> val(idx.begin(), idx.begin() + n_val);
  std::vector<Eigen::Index> tr(idx.begin() + n_val, idx.end());
  return {tr, val};
}

BoolMatrix binarize_adjacency(const Matrix& gates, double tau) {
  require(gates.rows() == gates.cols(), "binarize_adjacency: gates must be square");
  require(tau >= 0.0 && tau <= 1.0, "binarize_adjacency: tau must lie in [0, 1]");
  BoolMatrix b = gates.array() > tau;
  b.diagonal().setConstant(false);
  return b;
}

ModelConfig model_config_for(const MultimodalDataset& data, const ModelConfig& base) {
  ModelConfig c = base;
  c.latent_dims = data.latent_dims;
  c.exo_dims = data.exo_dims;
  c.obs_dims.clear();
  for (const auto& x : data.observations) c.obs_dims.push_back(static_cast<int>(x.cols()));
  c.validate();
  return c;
}

namespace {

struct State {
  Model model;
  Model best;
  nn::Adam adam;
  int epoch = 0;  // completed epochs
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int bad_evals = 0;
  bool stopped = false;
  std::vector<Json> log;
};

std::vector<Matrix> rows_of(const std::vector<Matrix>& x, const std::vector<Eigen::Index>& idx) {
  std::vector<Matrix> out;
  for (const auto& m : x) {
    Matrix s(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) s.row(static_cast<Eigen::Index>(r)) = m.row(idx[r]);
    out.push_back(std::move(s));
  }
  return out;
}

ForwardNoise draw_noise(const ModelConfig& c, Eigen::Index n, std::uint64_t seed, std::uint64_t step) {
  const int dz = c.total_latent_dim();
  const int de = c.total_exo_dim();
  ForwardNoise noise;
  noise.z.resize(n, dz);
  noise.eta.resize(n, de);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (int k = 0; k < dz; ++k) noise.z(r, k) = counter_normal(seed, streams::kReparam, step, static_cast<std::uint64_t>(r * dz + k));
    for (int k = 0; k < de; ++k)
      noise.eta(r, k) = counter_normal(seed, streams::kReparam, step, static_cast<std::uint64_t>(n * dz + r * de + k));
  }
  if (c.gate_sampling == "relaxed") {
    for (int i = 0; i < dz; ++i) {
      Matrix u(n, dz);
      for (Eigen::Index r = 0; r < n; ++r)
        for (int k = 0; k < dz; ++k)
          u(r, k) = counter_uniform(seed, streams::kGateNoise, step, static_cast<std::uint64_t>((i * n + r) * dz + k));
      noise.gate.push_back(std::move(u));
    }
  }
  return noise;
}

void check_finite(const LossValues& v, int epoch, std::int64_t step) {
  const std::pair<const char*, double> terms[] = {{"recon", v.recon},         {"ind.kl_eta", v.kl_eta},
                                                  {"ind.nll_eps", v.nll_eps}, {"ind.entropy_z", v.entropy_z},
                                                  {"sparsity", v.sparsity},   {"dag", v.dag},
                                                  {"total", v.total}};
  for (const auto& [name, value] : terms)
    if (!std::isfinite(value))
      throw NumericalError("non-finite loss term '" + std::string(name) + "' at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step));
}

void check_grads(const nn::NamedParams& params, int epoch, std::int64_t step) {
  for (const auto& [name, p] : params)
    if (!p->grad.allFinite())
      throw NumericalError("non-finite gradient for parameter '" + name + "' at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step));
}

void save_checkpoint(const State& s, const TrainConfig& config, const fs::path& dir) {
  TensorStore store("checkpoint");
  s.model.save(store, "model.");
  s.best.save(store, "best.");
  for (const auto& [name, mv] : s.adam.moments()) {
    store.put("adam_m." + name, mv.first, DType::Float64);
    store.put("adam_v." + name, mv.second, DType::Float64);
  }
  Json& meta = store.meta();
  meta["train_config"] = config.to_json();
  meta["epoch"] = s.epoch;
  meta["step"] = s.adam.steps();
  meta["best_val"] = s.best_val;
  meta["best_epoch"] = s.best_epoch;
  meta["bad_evals"] = s.bad_evals;
  meta["stopped"] = s.stopped;
  meta["log"] = s.log;
  store.save(dir);
}

State load_checkpoint(const fs::path& dir, const nn::AdamConfig& adam_config) {
  const TensorStore store = TensorStore::load(dir);
  State s;
  s.model = Model::load(store, "model.");
  s.best = Model::load(store, "best.");
  s.adam = nn::Adam(adam_config);
  for (const auto& [name, p] : s.model.parameters()) {
    if (!store.contains("adam_m." + name)) continue;
    s.adam.moments()[name] = {store.get("adam_m." + name), store.get("adam_v." + name)};
  }
  const Json& meta = store.meta();
  s.adam.set_steps(meta.at("step").get<std::int64_t>());
  s.epoch = meta.at("epoch").get<int>();
  s.best_val = meta.at("best_val").is_number() ? meta.at("best_val").get<double>()
                                               : std::numeric_limits<double>::infinity();
  s.best_epoch = meta.at("best_epoch").get<int>();
  s.bad_evals = meta.at("bad_evals").get<int>();
  s.stopped = meta.at("stopped").get<bool>();
  for (const auto& r : meta.at("log")) s.log.push_back(r);
  return s;
}

Json loss_json(const LossValues& v) { return v.to_json(); }

}  // namespace

TrainResult train(const MultimodalDataset& data, const ModelConfig& model_config, const TrainConfig& config,
                  bool resume, const EpochHook& hook) {
  data.validate();
  config.validate(data.num_samples());
  const ModelConfig mc = model_config_for(data, model_config);
  const auto [train_idx, val_idx] = train_val_split(data.num_samples(), config.val_fraction, config.seed);
  const std::vector<Matrix> x_val = rows_of(data.observations, val_idx);

  nn::AdamConfig adam_config;
  adam_config.learning_rate = config.learning_rate;
  adam_config.clip_norm = config.clip_norm;

  const bool to_disk = !config.checkpoint_dir.empty();
  const fs::path root = config.checkpoint_dir;
  TrainResult result;
  if (to_disk) {
    fs::create_directories(root);
    result.log_path = root / kTrainLogFile;
    result.checkpoint_path = root / kCheckpointDir;
    result.model_path = root / kModelDir;
  }

  State s;
  if (resume) {
    require(to_disk, "train: resume needs a checkpoint_dir");
    if (!fs::exists(result.checkpoint_path / "manifest.json"))
      throw IoError("no checkpoint to resume from in " + result.checkpoint_path.string());
    s = load_checkpoint(result.checkpoint_path, adam_config);
    if (s.model.config().to_json() != mc.to_json())
      throw ConfigError("train: model config differs from the checkpoint's");
    // Rewrite the log so it matches the checkpointed epochs exactly.
    std::ofstream out(result.log_path, std::ios::trunc);
    for (const auto& r : s.log) out << r.dump() << "\n";
  } else {
    s.model = Model(mc, config.seed);
    std::vector<Vector> mean, sd;
    for (const auto& x : rows_of(data.observations, train_idx)) {
      const Vector mu = x.colwise().mean().transpose();
      Vector v = ((x.rowwise() - mu.transpose()).array().square().colwise().sum() /
                  std::max<double>(1.0, static_cast<double>(x.rows() - 1)))
                     .sqrt()
                     .transpose();
      for (Eigen::Index k = 0; k < v.size(); ++k)
        if (!(v(k) > 1e-8)) v(k) = 1.0;
      if (mc.encoder == "conv") {
        // One scale per image modality: per-pixel scaling would blow up
        // near-constant border pixels and distort the spatial structure.
        const double m = x.mean();
        const double s = std::sqrt((x.array() - m).square().mean());
        mean.push_back(Vector::Constant(mu.size(), m));
        sd.push_back(Vector::Constant(v.size(), s > 1e-8 ? s : 1.0));
        continue;
      }
      mean.push_back(mu);
      sd.push_back(v);
    }
    s.model.set_standardization(mean, sd);
    s.best = s.model;
    s.adam = nn::Adam(adam_config);
    if (to_disk) std::ofstream(result.log_path, std::ios::trunc);
  }

  const bool has_truth = data.latents.has_value();
  const Matrix z_val_true = has_truth ? rows_of({*data.latents}, val_idx)[0] : Matrix();
  const auto n_train = static_cast<Eigen::Index>(train_idx.size());
  const auto t0 = std::chrono::steady_clock::now();

  while (!s.stopped && s.epoch < config.epochs) {
    const int e = s.epoch;
    std::vector<Eigen::Index> order = train_idx;
    CounterRng shuffle_rng(mix64(config.seed ^ static_cast<std::uint64_t>(e)), streams::kShuffle);
    shuffle_rng.shuffle(order);

    LossValues sum;
    for (Eigen::Index start = 0; start < n_train; start += config.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(config.batch_size, n_train - start);
      const std::vector<Eigen::Index> rows(order.begin() + start, order.begin() + start + len);
      std::vector<Matrix> xb;
      for (const auto& x : rows_of(data.observations, rows)) xb.push_back(s.model.standardize(static_cast<int>(xb.size()), x));
      const ForwardNoise noise = draw_noise(mc, len, config.seed, static_cast<std::uint64_t>(s.adam.steps()));

      ad::Tape tape;
      nn::Binder bind(tape);
      const LossVars L = s.model.loss(bind, xb, &noise);
      const LossValues v = L.values();
      check_finite(v, e, s.adam.steps());
      tape.backward(L.total);
      const nn::NamedParams params = s.model.parameters();
      bind.collect_grads(params);
      check_grads(params, e, s.adam.steps());
      s.adam.step(params);

      const double w = static_cast<double>(len) / static_cast<double>(n_train);
      sum.total += w * v.total;
      sum.recon += w * v.recon;
      sum.ind += w * v.ind;
      sum.kl_eta += w * v.kl_eta;
      sum.nll_eps += w * v.nll_eps;
      sum.entropy_z += w * v.entropy_z;
      sum.sparsity += w * v.sparsity;
      sum.dag += w * v.dag;
    }
    s.epoch = e + 1;

    Json record = {{"epoch", s.epoch},
                   {"step", s.adam.steps()},
                   {"wall_time", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
                   {"recon", sum.recon},
                   {"ind", sum.ind},
                   {"sparsity", sum.sparsity},
                   {"train", loss_json(sum)}};

    if (s.epoch % config.eval_every == 0 || s.epoch == config.epochs) {
      const LossValues val = s.model.evaluate_loss(x_val);
      check_finite(val, e, s.adam.steps());
      record["val"] = loss_json(val);
      if (val.total < s.best_val) {
        s.best_val = val.total;
        s.best_epoch = s.epoch;
        s.best = s.model;
        s.bad_evals = 0;
      } else if (++s.bad_evals >= config.patience) {
        s.stopped = true;
        record["early_stop"] = true;
      }
      if (has_truth) {
        const Matrix z_hat = s.model.latent_means(x_val);
        const auto per = metrics::mcc_per_modality(z_val_true, z_hat, mc.latent_dims);
        std::vector<double> modal;
        for (const auto& r : per) modal.push_back(r.mcc);
        record["mcc"] = metrics::mcc(z_val_true, z_hat).mcc;
        record["mcc_per_modality"] = modal;
        try {
          record["r2"] = metrics::r2(z_val_true, z_hat, 0.8, config.seed);
        } catch (const ConfigError&) {
          record["r2"] = nullptr;
        }
      }
    }
    s.log.push_back(record);
    if (to_disk) {
      std::ofstream(result.log_path, std::ios::app) << record.dump() << "\n";
      save_checkpoint(s, config, result.checkpoint_path);
    }
    if (hook) hook(record);
  }

  if (to_disk) {
    TensorStore store("model");
    s.best.save(store);
    store.meta()["best_epoch"] = s.best_epoch;
    store.meta()["best_val"] = s.best_val;
    store.meta()["train_config"] = config.to_json();
    store.save(result.model_path);
  }
  result.model = s.best;
  result.last = s.model;
  result.log = s.log;
  result.best_epoch = s.best_epoch;
  result.best_val = s.best_val;
  result.epochs_run = s.epoch;
  result.stopped_early = s.stopped;
  return result;
}

}  // namespace mmcrl
