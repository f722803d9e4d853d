// mmcrl: command-line entry point.
//
// Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical failure.

#include "mmcrl/discovery.hpp"
#include "mmcrl/experiment.hpp"
#include "mmcrl/mnist.hpp"
#include "mmcrl/scm.hpp"
#include "mmcrl/theory.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

using namespace mmcrl;
namespace fs = std::filesystem;

namespace {

// Config file, then --set overrides (dotted keys, values parsed as JSON when
// possible, otherwise taken as strings).
Json load_config(const std::string& path, const std::vector<std::string>& sets) {
  Json j = path.empty() ? Json::object() : read_json(path);
  require(j.is_object(), "config file must hold a JSON object");
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    require(eq != std::string::npos && eq > 0, "--set expects KEY=VALUE, got '" + s + "'");
    std::string key = s.substr(0, eq);
    const std::string text = s.substr(eq + 1);
    Json value = Json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    std::replace(key.begin(), key.end(), '.', '/');
    j[Json::json_pointer("/" + key)] = value;
  }
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void write_resolved(const fs::path& out, const std::string& command, Json body) {
  body["command"] = command;
  write_json(out / "config.resolved.json", body);
}

// Generator spec from --case, the config file, --set and the direct flags, in
// that order of precedence (later wins).
struct GenerateArgs {
  int case_id = 1;
  std::string config;
  std::vector<std::string> sets;
  std::optional<double> sparsity;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> n;
  std::string out;
};

GeneratorSpec resolve_generator(const GenerateArgs& a) {
  Json j = case_preset(a.case_id).to_json();
  const Json overrides = load_config(a.config, a.sets);
  for (const auto& [k, v] : overrides.items()) j[k] = v;
  if (a.sparsity) j["sparsity_ratio"] = *a.sparsity;
  if (a.seed) j["seed"] = *a.seed;
  if (a.n) j["n_samples"] = *a.n;
  return GeneratorSpec::from_json(j);
}

void add_generator_options(CLI::App* cmd, GenerateArgs& a) {
  cmd->add_option("--case", a.case_id, "Preset 1, 2 or 3")->check(CLI::Range(1, 3));
  cmd->add_option("--config", a.config, "Generator spec JSON");
  cmd->add_option("--set", a.sets, "KEY=VALUE override");
  cmd->add_option("--sparsity", a.sparsity, "Fraction of absent inter-modal edges");
  cmd->add_option("--seed", a.seed);
  cmd->add_option("--n", a.n, "Number of samples");
  cmd->add_option("--out", a.out)->required();
}

Json graph_json(const LatentGraph& g) {
  Json edges = Json::array();
  for (int i = 0; i < g.size(); ++i)
    for (int j : g.parents(i)) edges.push_back({{"from", j}, {"to", i}, {"inter_modal", g.is_inter_modal(i, j)}});
  return {{"modality_of", g.modality_of}, {"edges", edges}};
}

void cmd_generate(const GenerateArgs& a) {
  const GeneratorSpec spec = resolve_generator(a);
  const GeneratedExperiment e = generate_experiment(spec);
  const fs::path out = a.out;
  e.dataset.save(out);
  write_json(out / "graph.json", graph_json(e.graph));
  write_resolved(out, "generate", {{"generator", spec.to_json()}});
  std::cout << "wrote " << spec.n_samples << " samples, " << e.graph.inter_modal_edge_count()
            << " inter-modal edges to " << out.string() << "\n";
}

void cmd_check_conditions(const GenerateArgs& a, const std::string& form) {
  const GeneratorSpec spec = resolve_generator(a);
  const GeneratedExperiment e = generate_experiment(spec);
  theory::Condition2Options c2;
  require(form == "per-component" || form == "literal", "--form must be per-component or literal");
  c2.form = form == "literal" ? theory::Condition2Form::Literal : theory::Condition2Form::PerComponent;
  c2.seed = spec.seed;
  theory::Condition1Options c1;
  c1.seed = spec.seed;
  const auto r1 = theory::check_condition1(e.model, e.graph, c1);
  const auto r2 = theory::check_condition2(e.model, e.graph, c2);
  bool c1_ok = true, c2_ok = true;
  for (const auto& r : r1) c1_ok = c1_ok && r.holds;
  for (const auto& r : r2) c2_ok = c2_ok && r.holds;
  const fs::path out = a.out;
  fs::create_directories(out);
  write_json(out / "conditions.json", {{"condition1", theory::reports_to_json(r1)},
                                       {"condition2", theory::reports_to_json(r2)},
                                       {"condition1_holds", c1_ok},
                                       {"condition2_holds", c2_ok},
                                       {"graph", graph_json(e.graph)}});
  write_resolved(out, "check-conditions", {{"generator", spec.to_json()}, {"form", form}});
  std::cout << "condition 1: " << (c1_ok ? "holds" : "fails") << "\ncondition 2: " << (c2_ok ? "holds" : "fails")
            << "\n";
}

struct TrainArgs {
  std::string data, config, recipe = "auto", out;
  std::vector<std::string> sets;
  std::optional<int> epochs, batch_size;
  std::optional<double> lr, alpha_sp;
  std::optional<std::uint64_t> seed;
  bool resume = false;
};

std::string dataset_hash(const fs::path& dir) { return read_json(dir / "manifest.json").value("content_hash", ""); }

void cmd_train(const TrainArgs& a) {
  const MultimodalDataset data = MultimodalDataset::load(a.data);
  std::string kind = a.recipe;
  if (kind == "auto") kind = data.provenance.value("source", "") == "variant_mnist" ? "image" : "synthetic";
  require(kind == "synthetic" || kind == "image", "--recipe must be auto, synthetic or image");
  Recipe r = Recipe::from_json(load_config(a.config, a.sets), kind == "image" ? image_recipe() : synthetic_recipe());
  if (a.epochs) r.train.epochs = *a.epochs;
  if (a.batch_size) r.train.batch_size = *a.batch_size;
  if (a.lr) r.train.learning_rate = *a.lr;
  if (a.seed) r.train.seed = *a.seed;
  if (a.alpha_sp) r.model.alpha_sp = *a.alpha_sp;
  r.train.checkpoint_dir = a.out;
  r.model = model_config_for(data, r.model);
  r.train.validate(data.num_samples());

  const fs::path out = a.out;
  fs::create_directories(out);
  write_resolved(out, "train",
                 {{"data", fs::absolute(a.data).string()},
                  {"data_hash", dataset_hash(a.data)},
                  {"recipe", r.to_json()},
                  {"resume", a.resume}});
  const TrainResult res = train(data, r.model, r.train, a.resume, [](const Json& rec) {
    std::cout << "epoch " << rec["epoch"] << " total " << rec["train"]["total"] << " val " << rec["val"]["total"];
    if (rec.contains("mcc") && !rec["mcc"].is_null()) std::cout << " mcc " << rec["mcc"];
    std::cout << std::endl;
  });
  Model best = res.model;
  auto rep = evaluate_model(best, data, r.train.seed);
  rep.checkpoint_id = (out / kModelDir).string();
  rep.extra["best_epoch"] = res.best_epoch;
  rep.extra["epochs_run"] = res.epochs_run;
  rep.extra["stopped_early"] = res.stopped_early;
  if (data.provenance.contains("generator"))
    rep.extra["sparsity_ratio"] = data.provenance["generator"].value("sparsity_ratio", -1.0);
  write_json(out / "metrics.json", rep.to_json());
  write_json(out / "graph.json", estimated_graph_json(best));
  std::cout << rep.to_json().dump(2) << "\n";
}

fs::path model_dir(const fs::path& p) {
  if (fs::exists(p / kModelDir / "manifest.json")) return p / kModelDir;
  return p;
}

void cmd_evaluate(const std::string& model_path, const std::string& data_path, std::uint64_t seed,
                  const std::string& out_dir) {
  const MultimodalDataset data = MultimodalDataset::load(data_path);
  const fs::path mdir = model_dir(model_path);
  Model model = Model::load(TensorStore::load(mdir));
  auto rep = evaluate_model(model, data, seed);
  rep.checkpoint_id = mdir.string();
  if (data.provenance.contains("generator"))
    rep.extra["sparsity_ratio"] = data.provenance["generator"].value("sparsity_ratio", -1.0);
  const fs::path out = out_dir;
  fs::create_directories(out);
  write_json(out / "metrics.json", rep.to_json());
  write_resolved(out, "evaluate",
                 {{"model", fs::absolute(mdir).string()},
                  {"data", fs::absolute(data_path).string()},
                  {"data_hash", dataset_hash(data_path)},
                  {"seed", seed}});
  std::cout << rep.to_json().dump(2) << "\n";
}

void cmd_discover(const std::string& data_path, const std::string& source, const std::string& model_path,
                  const discovery::PcOptions& opt, const std::string& out_dir) {
  const MultimodalDataset data = MultimodalDataset::load(data_path);
  Matrix table;
  std::vector<std::string> names;
  if (source == "latents") {
    if (!data.latents) throw ConfigError("dataset has no ground-truth latents; use --source estimated or observations");
    table = *data.latents;
  } else if (source == "estimated") {
    require(!model_path.empty(), "--source estimated needs --model");
    Model model = Model::load(TensorStore::load(model_dir(model_path)));
    table = model.latent_means(data.observations);
  } else if (source == "observations") {
    Eigen::Index cols = 0;
    for (const auto& x : data.observations) cols += x.cols();
    table.resize(data.num_samples(), cols);
    cols = 0;
    for (int m = 0; m < data.num_modalities(); ++m) {
      table.middleCols(cols, data.observations[m].cols()) = data.observations[m];
      for (Eigen::Index k = 0; k < data.observations[m].cols(); ++k)
        names.push_back("x" + std::to_string(m) + "_" + std::to_string(k));
      cols += data.observations[m].cols();
    }
  } else {
    throw ConfigError("--source must be latents, estimated or observations");
  }
  if (names.empty()) {
    int idx = 0;
    for (int m = 0; m < static_cast<int>(data.latent_dims.size()); ++m)
      for (int k = 0; k < data.latent_dims[m]; ++k, ++idx) names.push_back("z" + std::to_string(m) + "_" + std::to_string(k));
    names.resize(static_cast<std::size_t>(table.cols()));
  }
  const auto sk = discovery::pc_skeleton(table, opt);
  const auto pdag = discovery::pc_orient(sk);
  const fs::path out = out_dir;
  fs::create_directories(out);
  Json j = pdag.to_json(names);
  j["skeleton"] = discovery::skeleton_report(sk, names);
  write_json(out / "pdag.json", j);
  write_text(out / "pdag.dot", pdag.to_dot(names));
  write_resolved(out, "discover",
                 {{"data", fs::absolute(data_path).string()},
                  {"data_hash", dataset_hash(data_path)},
                  {"source", source},
                  {"model", model_path},
                  {"alpha", opt.alpha},
                  {"max_cond_set", opt.max_cond_set}});
  std::cout << pdag.to_dot(names);
}

void cmd_mnist_build(const std::string& raw, const std::string& config, const std::vector<std::string>& sets,
                     std::optional<std::uint64_t> seed, std::optional<std::int64_t> n_pairs, const std::string& out_dir) {
  mnist::VariantConfig cfg = mnist::VariantConfig::from_json(load_config(config, sets));
  if (seed) cfg.seed = *seed;
  if (n_pairs) cfg.n_pairs = *n_pairs;
  const fs::path root = raw.empty() ? mnist::data_root() : fs::path(raw);
  const MultimodalDataset d = mnist::build_variant_mnist(root / "mnist", root / "fashion-mnist", cfg);
  const fs::path out = out_dir;
  d.save(out);
  write_resolved(out, "mnist-build", {{"raw", fs::absolute(root).string()}, {"mnist", cfg.to_json()}});
  std::cout << "wrote " << cfg.n_pairs << " pairs to " << out.string() << "\n";
}

// ---------------------------------------------------------------------------
// report

struct RunRow {
  std::string dir;
  Json metrics;
  double sparsity = -1.0;
};

std::string fmt(const Json& v, int prec = 3) {
  if (v.is_null()) return "absent";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v.get<double>();
  return os.str();
}

std::string svg_bar_chart(const std::vector<std::pair<double, std::vector<double>>>& groups) {
  const int W = 480, H = 320, left = 60, bottom = 50, top = 30;
  const double plot_h = H - bottom - top;
  const int n = static_cast<int>(groups.size());
  const double slot = n > 0 ? (W - left - 20.0) / n : 0.0;
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\">MCC vs sparsity ratio</text>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = t / 5.0;
    const double y = top + plot_h * (1.0 - v);
    s << "<line x1=\"" << left << "\" x2=\"" << W - 20 << "\" y1=\"" << y << "\" y2=\"" << y
      << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  for (int g = 0; g < n; ++g) {
    const auto& vals = groups[g].second;
    double mean = 0.0, sd = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    for (double v : vals) sd += (v - mean) * (v - mean);
    sd = vals.size() > 1 ? std::sqrt(sd / static_cast<double>(vals.size() - 1)) : 0.0;
    const double x = left + slot * g + slot * 0.2;
    const double w = slot * 0.6;
    const double y = top + plot_h * (1.0 - std::clamp(mean, 0.0, 1.0));
    s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << top + plot_h - y
      << "\" fill=\"#4c72b0\"/>\n";
    const double cx = x + w / 2;
    const double y_hi = top + plot_h * (1.0 - std::clamp(mean + sd, 0.0, 1.0));
    const double y_lo = top + plot_h * (1.0 - std::clamp(mean - sd, 0.0, 1.0));
    s << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << y_hi << "\" y2=\"" << y_lo
      << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << cx << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\">";
    if (groups[g].first < 0) s << "n/a";
    else s << std::setprecision(2) << groups[g].first;
    s << "</text>\n";
  }
  s << "<line x1=\"" << left << "\" x2=\"" << W - 20 << "\" y1=\"" << top + plot_h << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">sparsity ratio</text>\n";
  s << "</svg>\n";
  return s.str();
}

void cmd_report(const std::vector<std::string>& runs, const std::string& out_dir) {
  std::vector<RunRow> rows;
  for (const auto& r : runs) {
    const fs::path p = fs::path(r) / "metrics.json";
    if (!fs::exists(p)) {
      std::cerr << "skipping " << r << ": no metrics.json\n";
      continue;
    }
    RunRow row{r, read_json(p)};
    row.sparsity = row.metrics.value("sparsity_ratio", -1.0);
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), "report: none of the given run directories holds metrics.json");
  std::sort(rows.begin(), rows.end(),
            [](const RunRow& a, const RunRow& b) { return std::tie(a.sparsity, a.dir) < std::tie(b.sparsity, b.dir); });

  std::map<double, std::vector<double>> by_ratio;
  std::ostringstream md;
  md << "| run | sparsity | seed | MCC | R2 | SHD | SHD inter-modal |\n|---|---|---|---|---|---|---|\n";
  Json table = Json::array();
  for (const auto& r : rows) {
    const Json& m = r.metrics;
    md << "| " << r.dir << " | " << (r.sparsity < 0 ? "n/a" : fmt(r.sparsity, 2)) << " | " << m.value("seed", 0)
       << " | " << fmt(m["mcc"]) << " | " << fmt(m["r2"]) << " | "
       << (m["shd"].is_null() ? "absent" : m["shd"].dump()) << " | "
       << (m["shd_inter_modal"].is_null() ? "absent" : m["shd_inter_modal"].dump()) << " |\n";
    table.push_back({{"run", r.dir}, {"sparsity_ratio", r.sparsity}, {"metrics", m}});
    if (!m["mcc"].is_null()) by_ratio[r.sparsity].push_back(m["mcc"].get<double>());
  }
  Json summary = Json::array();
  std::vector<std::pair<double, std::vector<double>>> groups(by_ratio.begin(), by_ratio.end());
  md << "\n| sparsity | runs | mean MCC |\n|---|---|---|\n";
  for (const auto& [ratio, vals] : groups) {
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    md << "| " << (ratio < 0 ? "n/a" : fmt(ratio, 2)) << " | " << vals.size() << " | " << fmt(mean) << " |\n";
    summary.push_back({{"sparsity_ratio", ratio}, {"runs", vals.size()}, {"mean_mcc", mean}, {"mcc", vals}});
  }
  const fs::path out = out_dir;
  fs::create_directories(out);
  write_json(out / "report.json", {{"runs", table}, {"by_sparsity", summary}});
  write_text(out / "report.md", md.str());
  if (!groups.empty()) write_text(out / "mcc_vs_sparsity.svg", svg_bar_chart(groups));
  std::cout << md.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal causal representation learning toolkit"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Sample a synthetic multimodal dataset");
  add_generator_options(generate, gen);

  GenerateArgs chk;
  std::string form = "per-component";
  auto* check = app.add_subcommand("check-conditions", "Check the identifiability conditions of a generated model");
  add_generator_options(check, chk);
  check->add_option("--form", form, "per-component or literal");

  TrainArgs tr;
  auto* trainc = app.add_subcommand("train", "Train a model on a dataset directory");
  trainc->add_option("--data", tr.data)->required();
  trainc->add_option("--config", tr.config, "Recipe JSON {model, train}");
  trainc->add_option("--set", tr.sets, "KEY=VALUE override, e.g. model.alpha_sp=0.01");
  trainc->add_option("--recipe", tr.recipe, "auto, synthetic or image");
  trainc->add_option("--epochs", tr.epochs);
  trainc->add_option("--batch-size", tr.batch_size);
  trainc->add_option("--lr", tr.lr);
  trainc->add_option("--alpha-sp", tr.alpha_sp);
  trainc->add_option("--seed", tr.seed);
  trainc->add_flag("--resume", tr.resume, "Continue from <out>/checkpoint");
  trainc->add_option("--out", tr.out)->required();

  std::string ev_model, ev_data, ev_out;
  std::uint64_t ev_seed = 0;
  auto* evaluate = app.add_subcommand("evaluate", "Score a trained model against a dataset");
  evaluate->add_option("--model", ev_model, "Run directory or model directory")->required();
  evaluate->add_option("--data", ev_data)->required();
  evaluate->add_option("--seed", ev_seed);
  evaluate->add_option("--out", ev_out)->required();

  std::string dc_data, dc_source = "latents", dc_model, dc_out;
  discovery::PcOptions pc;
  auto* discover = app.add_subcommand("discover", "Run the PC algorithm");
  discover->add_option("--data", dc_data)->required();
  discover->add_option("--source", dc_source, "latents, estimated or observations");
  discover->add_option("--model", dc_model);
  discover->add_option("--alpha", pc.alpha);
  discover->add_option("--max-cond-set", pc.max_cond_set);
  discover->add_option("--out", dc_out)->required();

  std::string mn_raw, mn_config, mn_out;
  std::vector<std::string> mn_sets;
  std::optional<std::uint64_t> mn_seed;
  std::optional<std::int64_t> mn_pairs;
  auto* mnistc = app.add_subcommand("mnist-build", "Build the colored/rotated image dataset");
  mnistc->add_option("--raw", mn_raw, "Raw data root (default $MMCRL_DATA_DIR)");
  mnistc->add_option("--config", mn_config);
  mnistc->add_option("--set", mn_sets);
  mnistc->add_option("--seed", mn_seed);
  mnistc->add_option("--n-pairs", mn_pairs);
  mnistc->add_option("--out", mn_out)->required();

  std::vector<std::string> rp_runs;
  std::string rp_out = "report";
  auto* report = app.add_subcommand("report", "Aggregate run metrics into tables and a chart");
  report->add_option("--runs", rp_runs, "Run directories")->required()->expected(1, -1);
  report->add_option("--out", rp_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*generate) cmd_generate(gen);
    else if (*check) cmd_check_conditions(chk, form);
    else if (*trainc) cmd_train(tr);
    else if (*evaluate) cmd_evaluate(ev_model, ev_data, ev_seed, ev_out);
    else if (*discover) cmd_discover(dc_data, dc_source, dc_model, pc, dc_out);
    else if (*mnistc) cmd_mnist_build(mn_raw, mn_config, mn_sets, mn_seed, mn_pairs, mn_out);
    else if (*report) cmd_report(rp_runs, rp_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
