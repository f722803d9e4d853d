#include <doctest.h>

#include "mmcrl/scm.hpp"
#include "mmcrl/trainer.hpp"

#include <filesystem>
#include <fstream>
#include <cmath>
#include <iomanip>
#include <limits>

using namespace mmcrl;
namespace fs = std::filesystem;

namespace {

MultimodalDataset small_dataset(std::int64_t n, std::uint64_t seed) {
  GeneratorSpec g = case_preset(1);
  g.n_samples = n;
  g.seed = seed;
  return generate_experiment(g).dataset;
}

ModelConfig small_model() {
  ModelConfig c;
  c.hidden_width = 16;
  c.flow_hidden = 8;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mmcrl_trainer_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<Json> read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  std::vector<Json> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(Json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("all loss weights zero leave parameters unchanged") {
  const MultimodalDataset data = small_dataset(300, 1);
  ModelConfig c = small_model();
  c.alpha_recon = c.alpha_ind = c.alpha_sp = 0.0;
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 64;
  t.seed = 3;
  const TrainResult r = train(data, c, t);
  Model init(model_config_for(data, c), t.seed);
  Model last = r.last;
  auto a = init.parameters();
  auto b = last.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    INFO(a[k].first);
    CHECK(a[k].second->value == b[k].second->value);
  }
}

TEST_CASE("training is deterministic given the seed") {
  const MultimodalDataset data = small_dataset(300, 2);
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 50;
  const TrainResult a = train(data, small_model(), t);
  const TrainResult b = train(data, small_model(), t);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t k = 0; k < a.log.size(); ++k) CHECK(a.log[k]["train"] == b.log[k]["train"]);
  t.seed = 9;
  const TrainResult c = train(data, small_model(), t);
  CHECK(c.log[0]["train"] != a.log[0]["train"]);
}

TEST_CASE("log records, checkpoint files and the saved best model") {
  const MultimodalDataset data = small_dataset(400, 3);
  TrainConfig t;
  t.epochs = 3;
  t.batch_size = 64;
  t.checkpoint_dir = scratch("files").string();
  const TrainResult r = train(data, small_model(), t);
  CHECK(fs::exists(r.log_path));
  CHECK(fs::exists(r.checkpoint_path / "manifest.json"));
  CHECK(fs::exists(r.model_path / "manifest.json"));
  const auto lines = read_jsonl(r.log_path);
  REQUIRE(lines.size() == 3);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    CHECK(lines[k]["epoch"] == static_cast<int>(k) + 1);
    for (const char* key : {"wall_time", "recon", "ind", "sparsity", "train", "val", "mcc", "r2"}) {
      INFO(key);
      CHECK(lines[k].contains(key));
    }
  }
  Model saved = Model::load(TensorStore::load(r.model_path));
  Model best = r.model;
  const std::vector<Matrix> x{data.observations[0].topRows(20), data.observations[1].topRows(20)};
  CHECK(saved.evaluate_loss(x).total == best.evaluate_loss(x).total);
  CHECK(r.best_epoch >= 1);
  CHECK(lines[static_cast<std::size_t>(r.best_epoch - 1)]["val"]["total"].get<double>() == doctest::Approx(r.best_val));
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted trajectory") {
  const MultimodalDataset data = small_dataset(400, 4);
  TrainConfig t;
  t.epochs = 4;
  t.batch_size = 64;
  t.checkpoint_dir = scratch("full").string();
  const TrainResult full = train(data, small_model(), t);

  TrainConfig half = t;
  half.checkpoint_dir = scratch("resumed").string();
  half.epochs = 2;
  train(data, small_model(), half);
  half.epochs = 4;
  const TrainResult resumed = train(data, small_model(), half, true);

  REQUIRE(resumed.log.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(resumed.log[k]["train"] == full.log[k]["train"]);
    CHECK(resumed.log[k]["val"] == full.log[k]["val"]);
    CHECK(resumed.log[k]["step"] == full.log[k]["step"]);
  }
  CHECK(read_jsonl(resumed.log_path).size() == 4);
  Model a = full.last, b = resumed.last;
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k].second->value == pb[k].second->value);

  TrainConfig missing = t;
  missing.checkpoint_dir = scratch("missing").string();
  CHECK_THROWS_AS(train(data, small_model(), missing, true), IoError);
  ModelConfig other = small_model();
  other.hidden_width = 8;
  CHECK_THROWS_AS(train(data, other, half, true), ConfigError);
}

TEST_CASE("early stopping keeps the best state") {
  const MultimodalDataset data = small_dataset(300, 5);
  TrainConfig t;
  t.epochs = 60;
  t.batch_size = 128;
  t.patience = 1;
  t.learning_rate = 0.05;  // noisy enough to stop early
  const TrainResult r = train(data, small_model(), t);
  CHECK(r.stopped_early);
  CHECK(r.epochs_run < 60);
  CHECK(r.log.back().value("early_stop", false));
  double best = std::numeric_limits<double>::infinity();
  for (const auto& rec : r.log) best = std::min(best, rec["val"]["total"].get<double>());
  CHECK(r.best_val == best);
}

TEST_CASE("non-finite loss aborts and names the term") {
  MultimodalDataset data = small_dataset(200, 6);
  data.observations[0](5, 3) = std::numeric_limits<double>::infinity();
  TrainConfig t;
  t.epochs = 1;
  t.batch_size = 32;
  try {
    train(data, small_model(), t);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("non-finite loss term 'recon'") != std::string::npos);
  }
}

TEST_CASE("train config validation") {
  const MultimodalDataset data = small_dataset(100, 7);
  TrainConfig t;
  t.batch_size = 91;  // 90 training rows
  CHECK_THROWS_AS(train(data, small_model(), t), ConfigError);
  t.batch_size = 90;
  t.epochs = 0;
  CHECK_NOTHROW(train(data, small_model(), t));
  CHECK_THROWS_AS(TrainConfig::from_json({{"epoch", 3}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json({{"learning_rate", -1.0}}), ConfigError);
  CHECK(TrainConfig::from_json(t.to_json()).to_json() == t.to_json());

  const auto [tr, va] = train_val_split(10000, 0.1, 0);
  CHECK(tr.size() == 9000);
  CHECK(va.size() == 1000);
}

TEST_CASE("Case-1 defaults: recon decreases over the first five epochs") {
  GeneratorSpec g = case_preset(1);
  const MultimodalDataset data = generate_experiment(g).dataset;
  TrainConfig t;
  t.epochs = 5;
  const TrainResult r = train(data, ModelConfig{}, t);
  for (std::size_t k = 1; k < r.log.size(); ++k) {
    INFO("epoch " << k + 1);
    CHECK(r.log[k]["recon"].get<double>() < r.log[k - 1]["recon"].get<double>());
  }
}

TEST_CASE("Case-1 one-epoch golden fixture") {
  const fs::path fixture = fs::path(MMCRL_FIXTURE_DIR) / "train_golden.json";
  const Json golden = read_json(fixture);
  GeneratorSpec g = case_preset(1);
  g.seed = golden.at("seed").get<std::uint64_t>();
  const MultimodalDataset data = generate_experiment(g).dataset;
  TrainConfig t;
  t.epochs = 1;
  t.seed = g.seed;
  const TrainResult r = train(data, ModelConfig::from_json(golden.at("model_config")), t);
  const double total = r.log.at(0)["train"]["total"].get<double>();
  const double val = r.log.at(0)["val"]["total"].get<double>();
  MESSAGE("train total " << std::setprecision(17) << total << ", val total " << val);
  CHECK(std::isfinite(total));
  CHECK(total > 0.0);
  CHECK(std::abs(total - golden.at("train_total").get<double>()) < 1e-6);
  CHECK(std::abs(val - golden.at("val_total").get<double>()) < 1e-6);
}
