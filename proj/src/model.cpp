#include "mmcrl/model.hpp"

#include "mmcrl/dataset.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace mmcrl {

// ---------------------------------------------------------------------------
// ModelConfig

int ModelConfig::total_latent_dim() const { return std::accumulate(latent_dims.begin(), latent_dims.end(), 0); }
int ModelConfig::total_exo_dim() const { return std::accumulate(exo_dims.begin(), exo_dims.end(), 0); }

void ModelConfig::validate() const {
  const auto M = latent_dims.size();
  require(M >= 1, "model: at least one modality");
  require(exo_dims.size() == M && obs_dims.size() == M, "model: latent/exo/obs dims need one entry per modality");
  for (std::size_t m = 0; m < M; ++m)
    require(latent_dims[m] >= 1 && exo_dims[m] >= 1 && obs_dims[m] >= 1, "model: dims must be positive");
  require(encoder == "mlp" || encoder == "conv", "model: encoder must be \"mlp\" or \"conv\"");
  if (encoder == "conv") {
    require(image_channels.size() == M, "model: conv encoder needs image_channels per modality");
    require(image_size % 4 == 0 && image_size >= 4, "model: image_size must be a positive multiple of 4");
    for (std::size_t m = 0; m < M; ++m)
      require(obs_dims[m] == image_channels[m] * image_size * image_size,
              "model: obs_dims must equal channels * image_size^2 for the conv encoder");
    require(conv_channels >= 1, "model: conv_channels must be positive");
  }
  require(hidden_width >= 1 && depth >= 1, "model: hidden_width and depth must be positive");
  require(leaky_slope >= 0.0 && leaky_slope < 1.0, "model: leaky_slope must lie in [0, 1)");
  require(flow_type == "spline" || flow_type == "affine", "model: flow_type must be \"spline\" or \"affine\"");
  require(flow_blocks >= 1 && flow_hidden >= 1 && flow_depth >= 1, "model: flow sizes must be positive");
  require(spline.bins >= 2 && spline.bound > 0.0, "model: spline needs >= 2 bins and a positive bound");
  require(spline.min_width * spline.bins < 1.0 && spline.min_height * spline.bins < 1.0,
          "model: spline minimum bin sizes too large");
  require(std::isfinite(adjacency_init), "model: adjacency_init must be finite");
  require(alpha_recon >= 0 && alpha_ind >= 0 && alpha_sp >= 0 && alpha_dag >= 0, "model: loss weights must be >= 0");
  require(tau > 0.0 && tau < 1.0, "model: tau must lie in (0, 1)");
  require(gate_sampling == "relaxed" || gate_sampling == "none", "model: gate_sampling must be \"relaxed\" or \"none\"");
  require(gate_temperature > 0.0, "model: gate_temperature must be positive");
}

Json ModelConfig::to_json() const {
  return {{"latent_dims", latent_dims},
          {"exo_dims", exo_dims},
          {"obs_dims", obs_dims},
          {"encoder", encoder},
          {"image_channels", image_channels},
          {"image_size", image_size},
          {"conv_channels", conv_channels},
          {"hidden_width", hidden_width},
          {"depth", depth},
          {"leaky_slope", leaky_slope},
          {"flow_type", flow_type},
          {"flow_blocks", flow_blocks},
          {"flow_hidden", flow_hidden},
          {"flow_depth", flow_depth},
          {"spline_bins", spline.bins},
          {"spline_bound", spline.bound},
          {"adjacency_init", adjacency_init},
          {"alpha_recon", alpha_recon},
          {"alpha_ind", alpha_ind},
          {"alpha_sp", alpha_sp},
          {"alpha_dag", alpha_dag},
          {"tau", tau},
          {"gate_sampling", gate_sampling},
          {"gate_temperature", gate_temperature},
          {"stochastic_z", stochastic_z}};
}

ModelConfig ModelConfig::from_json(const Json& j) { return from_json(j, ModelConfig{}); }

ModelConfig ModelConfig::from_json(const Json& j, const ModelConfig& base) {
  require(j.is_object(), "model config must be a JSON object");
  ModelConfig c = base;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "latent_dims") c.latent_dims = v.get<std::vector<int>>();
      else if (key == "exo_dims") c.exo_dims = v.get<std::vector<int>>();
      else if (key == "obs_dims") c.obs_dims = v.get<std::vector<int>>();
      else if (key == "encoder") c.encoder = v.get<std::string>();
      else if (key == "image_channels") c.image_channels = v.get<std::vector<int>>();
      else if (key == "image_size") c.image_size = v.get<int>();
      else if (key == "conv_channels") c.conv_channels = v.get<int>();
      else if (key == "hidden_width") c.hidden_width = v.get<int>();
      else if (key == "depth") c.depth = v.get<int>();
      else if (key == "leaky_slope") c.leaky_slope = v.get<double>();
      else if (key == "flow_type") c.flow_type = v.get<std::string>();
      else if (key == "flow_blocks") c.flow_blocks = v.get<int>();
      else if (key == "flow_hidden") c.flow_hidden = v.get<int>();
      else if (key == "flow_depth") c.flow_depth = v.get<int>();
      else if (key == "spline_bins") c.spline.bins = v.get<int>();
      else if (key == "spline_bound") c.spline.bound = v.get<double>();
      else if (key == "adjacency_init") c.adjacency_init = v.get<double>();
      else if (key == "alpha_recon") c.alpha_recon = v.get<double>();
      else if (key == "alpha_ind") c.alpha_ind = v.get<double>();
      else if (key == "alpha_sp") c.alpha_sp = v.get<double>();
      else if (key == "alpha_dag") c.alpha_dag = v.get<double>();
      else if (key == "tau") c.tau = v.get<double>();
      else if (key == "gate_sampling") c.gate_sampling = v.get<std::string>();
      else if (key == "gate_temperature") c.gate_temperature = v.get<double>();
      else if (key == "stochastic_z") c.stochastic_z = v.get<bool>();
      else throw ConfigError("unknown model key '" + key + "'");
    } catch (const Json::exception& e) {
      throw ConfigError("model key '" + key + "': " + e.what());
    }
  }
  return c;
}

Json LossValues::to_json() const {
  return {{"total", total},         {"recon", recon},       {"ind", ind},           {"kl_eta", kl_eta},
          {"nll_eps", nll_eps},     {"entropy_z", entropy_z}, {"sparsity", sparsity}, {"dag", dag}};
}

LossValues LossVars::values() const {
  LossValues v;
  v.total = total.scalar();
  v.recon = recon.scalar();
  v.ind = ind.scalar();
  v.kl_eta = kl_eta.scalar();
  v.nll_eps = nll_eps.scalar();
  v.entropy_z = entropy_z.scalar();
  v.sparsity = sparsity.scalar();
  v.dag = dag.scalar();
  return v;
}

// ---------------------------------------------------------------------------
// Loss pieces

ad::Var kl_standard_normal(ad::Var mu, ad::Var logvar) {
  using namespace ad;
  const Var inner = sub(add(square(mu), exp(logvar)), add_scalar(logvar, 1.0));
  return scale(sum(inner), 0.5 / static_cast<double>(mu.rows()));
}

ad::Var flow_nll(ad::Var eps, ad::Var logdet) {
  using namespace ad;
  const double n = static_cast<double>(eps.rows());
  const double c = 0.5 * std::log(2.0 * std::numbers::pi) * static_cast<double>(eps.cols());
  const Var quad = scale(sum(square(eps)), 0.5 / n);
  return sub(add_scalar(quad, c), scale(sum(logdet), 1.0 / n));
}

ad::Var loss_recon(const std::vector<ad::Var>& x, const std::vector<ad::Var>& x_hat) {
  using namespace ad;
  require(!x.empty() && x.size() == x_hat.size(), "loss_recon: one reconstruction per modality");
  Var total = scale(sum(square(sub(x[0], x_hat[0]))), 1.0 / static_cast<double>(x[0].rows()));
  for (std::size_t m = 1; m < x.size(); ++m)
    total = add(total, scale(sum(square(sub(x[m], x_hat[m]))), 1.0 / static_cast<double>(x[m].rows())));
  return total;
}

ad::Var loss_ind(const std::vector<std::pair<ad::Var, ad::Var>>& eta_posteriors, ad::Var eps, ad::Var logdet) {
  ad::Var total = flow_nll(eps, logdet);
  for (const auto& [mu, lv] : eta_posteriors) total = ad::add(total, kl_standard_normal(mu, lv));
  return total;
}

ad::Var loss_sparsity(ad::Var gates) {
  const Eigen::Index d = gates.rows();
  Matrix off = Matrix::Ones(d, d) - Matrix::Identity(d, d);
  return ad::sum(ad::mul(gates, gates.tape->constant(off)));
}

// ---------------------------------------------------------------------------
// Model

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  build(seed);
}

int Model::flow_raw_size() const { return config_.flow_type == "spline" ? config_.spline.raw_size() : 2; }

void Model::build(std::uint64_t seed) {
  CounterRng rng(seed, streams::kModelInit);
  const int M = config_.num_modalities();
  const int d = config_.total_latent_dim();
  const int h = config_.hidden_width;
  for (int m = 0; m < M; ++m) {
    const int code = config_.latent_dims[m] + config_.exo_dims[m];
    if (config_.encoder == "mlp") {
      mlp_encoders.emplace_back(config_.obs_dims[m], h, 2 * code, config_.depth, config_.leaky_slope, rng);
      mlp_decoders.emplace_back(code, h, config_.obs_dims[m], config_.depth, config_.leaky_slope, rng);
    } else {
      const int C = config_.image_channels[m];
      const int ch = config_.conv_channels;
      const int q = config_.image_size / 4;
      ConvEncoder e{nn::Conv(C, ch, 4, 2, 1, rng), nn::Conv(ch, 2 * ch, 4, 2, 1, rng),
                    nn::Linear(2 * ch * q * q, h, rng), nn::Linear(h, 2 * code, rng)};
      conv_encoders.push_back(std::move(e));
      ConvDecoder dec{nn::Linear(code, h, rng), nn::Linear(h, 2 * ch * q * q, rng), nn::Conv(2 * ch, ch, 3, 1, 1, rng),
                      nn::Conv(ch, C, 3, 1, 1, rng)};
      conv_decoders.push_back(std::move(dec));
    }
  }
  adjacency_logits.value = Matrix::Constant(d, d, config_.adjacency_init);
  adjacency_logits.value.diagonal().setZero();
  flows.assign(static_cast<std::size_t>(d), {});
  for (int i = 0; i < d; ++i)
    for (int b = 0; b < config_.flow_blocks; ++b) {
      nn::Mlp net(d, config_.flow_hidden, flow_raw_size(), config_.flow_depth, config_.leaky_slope, rng);
      net.layers.back().zero();
      flows[static_cast<std::size_t>(i)].push_back(std::move(net));
    }
  obs_mean_.clear();
  obs_std_.clear();
  for (int m = 0; m < M; ++m) {
    obs_mean_.push_back(Vector::Zero(config_.obs_dims[m]));
    obs_std_.push_back(Vector::Ones(config_.obs_dims[m]));
  }
}

nn::NamedParams Model::parameters() {
  nn::NamedParams out;
  for (std::size_t m = 0; m < mlp_encoders.size(); ++m) {
    mlp_encoders[m].add_params("enc" + std::to_string(m), out);
    mlp_decoders[m].add_params("dec" + std::to_string(m), out);
  }
  for (std::size_t m = 0; m < conv_encoders.size(); ++m) {
    const std::string e = "enc" + std::to_string(m);
    const std::string d = "dec" + std::to_string(m);
    auto& E = conv_encoders[m];
    auto& D = conv_decoders[m];
    out.emplace_back(e + ".c1.W", &E.c1.W);
    out.emplace_back(e + ".c1.b", &E.c1.b);
    out.emplace_back(e + ".c2.W", &E.c2.W);
    out.emplace_back(e + ".c2.b", &E.c2.b);
    out.emplace_back(e + ".fc1.W", &E.fc1.W);
    out.emplace_back(e + ".fc1.b", &E.fc1.b);
    out.emplace_back(e + ".fc2.W", &E.fc2.W);
    out.emplace_back(e + ".fc2.b", &E.fc2.b);
    out.emplace_back(d + ".fc1.W", &D.fc1.W);
    out.emplace_back(d + ".fc1.b", &D.fc1.b);
    out.emplace_back(d + ".fc2.W", &D.fc2.W);
    out.emplace_back(d + ".fc2.b", &D.fc2.b);
    out.emplace_back(d + ".c1.W", &D.c1.W);
    out.emplace_back(d + ".c1.b", &D.c1.b);
    out.emplace_back(d + ".c2.W", &D.c2.W);
    out.emplace_back(d + ".c2.b", &D.c2.b);
  }
  out.emplace_back("adjacency_logits", &adjacency_logits);
  for (std::size_t i = 0; i < flows.size(); ++i)
    for (std::size_t b = 0; b < flows[i].size(); ++b)
      flows[i][b].add_params("flow" + std::to_string(i) + "." + std::to_string(b), out);
  return out;
}

void Model::set_standardization(std::vector<Vector> mean, std::vector<Vector> std) {
  require(static_cast<int>(mean.size()) == config_.num_modalities() && std.size() == mean.size(),
          "set_standardization: one entry per modality");
  for (std::size_t m = 0; m < mean.size(); ++m) {
    require(mean[m].size() == config_.obs_dims[m] && std[m].size() == config_.obs_dims[m],
            "set_standardization: width mismatch");
    require((std[m].array() > 0.0).all(), "set_standardization: std must be positive");
  }
  obs_mean_ = std::move(mean);
  obs_std_ = std::move(std);
}

Matrix Model::standardize(int m, const Matrix& x) const {
  require(x.cols() == config_.obs_dims[m],
          "modality " + std::to_string(m) + ": expected " + std::to_string(config_.obs_dims[m]) + " columns, got " +
              std::to_string(x.cols()));
  Matrix out = x.rowwise() - obs_mean_[m].transpose();
  out.array().rowwise() /= obs_std_[m].transpose().array();
  return out;
}

Model::EncodedVars Model::encode(nn::Binder& bind, int m, ad::Var x) {
  using namespace ad;
  require(x.cols() == config_.obs_dims[m], "encode: input width does not match obs_dims");
  const int dz = config_.latent_dims[m];
  const int de = config_.exo_dims[m];
  Var out;
  if (config_.encoder == "mlp") {
    out = mlp_encoders[m].forward(bind, x);
  } else {
    auto& E = conv_encoders[m];
    const double s = config_.leaky_slope;
    ConvShape in{config_.image_channels[m], config_.image_size, config_.image_size};
    Var h = leaky_relu(conv2d(x, bind(E.c1.W), bind(E.c1.b), in, 4, 2, 1), s);
    const ConvShape s1 = conv2d_output(in, config_.conv_channels, 4, 2, 1);
    h = leaky_relu(conv2d(h, bind(E.c2.W), bind(E.c2.b), s1, 4, 2, 1), s);
    h = leaky_relu(E.fc1.forward(bind, h), s);
    out = E.fc2.forward(bind, h);
  }
  return {slice_cols(out, 0, dz), clamp(slice_cols(out, dz, dz), kLogvarMin, kLogvarMax),
          slice_cols(out, 2 * dz, de), clamp(slice_cols(out, 2 * dz + de, de), kLogvarMin, kLogvarMax)};
}

ad::Var Model::decode(nn::Binder& bind, int m, ad::Var z, ad::Var eta) {
  using namespace ad;
  require(z.cols() == config_.latent_dims[m] && eta.cols() == config_.exo_dims[m], "decode: code width mismatch");
  const Var code = concat_cols({z, eta});
  if (config_.encoder == "mlp") return mlp_decoders[m].forward(bind, code);
  auto& D = conv_decoders[m];
  const double s = config_.leaky_slope;
  const int q = config_.image_size / 4;
  const int ch = config_.conv_channels;
  Var h = leaky_relu(D.fc1.forward(bind, code), s);
  h = leaky_relu(D.fc2.forward(bind, h), s);
  h = upsample2d(h, {2 * ch, q, q}, 2);
  h = leaky_relu(conv2d(h, bind(D.c1.W), bind(D.c1.b), {2 * ch, 2 * q, 2 * q}, 3, 1, 1), s);
  h = upsample2d(h, {ch, 2 * q, 2 * q}, 2);
  return conv2d(h, bind(D.c2.W), bind(D.c2.b), {ch, 4 * q, 4 * q}, 3, 1, 1);
}

ad::Var Model::gates(nn::Binder& bind) {
  const Eigen::Index d = adjacency_logits.value.rows();
  const Matrix off = Matrix::Ones(d, d) - Matrix::Identity(d, d);
  return ad::mul(ad::sigmoid(bind(adjacency_logits)), bind.tape().constant(off));
}

std::pair<ad::Var, ad::Var> Model::flow_noise(nn::Binder& bind, ad::Var z_hat,
                                              const std::vector<ad::Var>& gate_rows) {
  using namespace ad;
  const int d = config_.total_latent_dim();
  require(z_hat.cols() == d, "flow_noise: z_hat width must equal the total latent dimension");
  require(static_cast<int>(gate_rows.size()) == d, "flow_noise: one gate row per component");
  std::vector<Var> eps_cols;
  Var logdet;
  for (int i = 0; i < d; ++i) {
    const Var ctx = mul(z_hat, gate_rows[i]);
    Var u = slice_cols(z_hat, i, 1);
    for (auto& net : flows[i]) {
      const Var raw = net.forward(bind, ctx);
      const flow::FlowOut o =
          config_.flow_type == "spline" ? flow::rq_spline(u, raw, config_.spline) : flow::affine(u, raw);
      u = o.y;
      logdet = logdet.valid() ? add(logdet, o.logdet) : o.logdet;
    }
    eps_cols.push_back(u);
  }
  return {concat_cols(eps_cols), logdet};
}

LossVars Model::loss(nn::Binder& bind, const std::vector<Matrix>& x_std, const ForwardNoise* noise) {
  using namespace ad;
  Tape& t = bind.tape();
  const int M = config_.num_modalities();
  const int d = config_.total_latent_dim();
  require(static_cast<int>(x_std.size()) == M, "loss: one observation matrix per modality");
  const Eigen::Index n = x_std[0].rows();
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<Var> xs, xhats, z_parts;
  std::vector<std::pair<Var, Var>> eta_post;
  Var entropy = t.constant(Matrix::Zero(1, 1));
  int zoff = 0, eoff = 0;
  for (int m = 0; m < M; ++m) {
    require(x_std[m].rows() == n, "loss: row counts differ across modalities");
    const Var x = t.constant(x_std[m]);
    const EncodedVars enc = encode(bind, m, x);
    const int dz = config_.latent_dims[m];
    const int de = config_.exo_dims[m];
    Var z = enc.z_mean;
    Var eta = enc.eta_mean;
    if (noise) {
      if (config_.stochastic_z) {
        z = add(z, mul(exp(scale(enc.z_logvar, 0.5)), t.constant(noise->z.middleCols(zoff, dz))));
        const double c = 0.5 * (std::log(2.0 * std::numbers::pi) + 1.0) * dz;
        entropy = add(entropy, add_scalar(scale(sum(enc.z_logvar), 0.5 * inv_n), c));
      }
      eta = add(eta, mul(exp(scale(enc.eta_logvar, 0.5)), t.constant(noise->eta.middleCols(eoff, de))));
    }
    xs.push_back(x);
    xhats.push_back(decode(bind, m, z, eta));
    z_parts.push_back(z);
    eta_post.emplace_back(enc.eta_mean, enc.eta_logvar);
    zoff += dz;
    eoff += de;
  }
  const Var z_all = concat_cols(z_parts);
  const Var G = gates(bind);

  std::vector<Var> rows;
  const bool relaxed = noise && config_.gate_sampling == "relaxed";
  const Var logits = bind(adjacency_logits);
  for (int i = 0; i < d; ++i) {
    if (!relaxed) {
      rows.push_back(slice_rows(G, i, 1));
      continue;
    }
    const Matrix& u = noise->gate[static_cast<std::size_t>(i)];
    const Matrix logistic = (u.array().log() - (1.0 - u.array()).log()).matrix();
    Matrix mask = Matrix::Ones(1, d);
    mask(0, i) = 0.0;
    const Var soft = sigmoid(scale(add(slice_rows(logits, i, 1), t.constant(logistic)), 1.0 / config_.gate_temperature));
    rows.push_back(mul(soft, t.constant(mask)));
  }
  const auto [eps, logdet] = flow_noise(bind, z_all, rows);

  LossVars L;
  L.recon = loss_recon(xs, xhats);
  L.kl_eta = t.constant(Matrix::Zero(1, 1));
  for (const auto& [mu, lv] : eta_post) L.kl_eta = add(L.kl_eta, kl_standard_normal(mu, lv));
  L.nll_eps = flow_nll(eps, logdet);
  L.entropy_z = entropy;
  L.ind = sub(add(L.kl_eta, L.nll_eps), entropy);
  L.sparsity = loss_sparsity(G);
  if (config_.alpha_dag > 0.0) {
    const Var GG = square(G);
    const Var I = t.constant(Matrix::Identity(d, d));
    Var term = I;
    Var E = I;
    for (int k = 1; k <= d + 4; ++k) {
      term = scale(matmul(term, GG), 1.0 / k);
      E = add(E, term);
    }
    L.dag = add_scalar(sum(mul(E, I)), -static_cast<double>(d));
  } else {
    L.dag = t.constant(Matrix::Zero(1, 1));
  }
  L.total = add(add(scale(L.recon, config_.alpha_recon), scale(L.ind, config_.alpha_ind)),
                add(scale(L.sparsity, config_.alpha_sp), scale(L.dag, config_.alpha_dag)));
  return L;
}

EncoderOutput Model::encode(int m, const Matrix& x_raw) {
  ad::Tape t;
  nn::Binder bind(t, false);
  const EncodedVars v = encode(bind, m, t.constant(standardize(m, x_raw)));
  return {v.z_mean.value(), v.z_logvar.value(), v.eta_mean.value(), v.eta_logvar.value()};
}

Matrix Model::decode(int m, const Matrix& z, const Matrix& eta) {
  ad::Tape t;
  nn::Binder bind(t, false);
  return decode(bind, m, t.constant(z), t.constant(eta)).value();
}

Matrix Model::latent_means(const std::vector<Matrix>& x_raw) {
  const int M = config_.num_modalities();
  require(static_cast<int>(x_raw.size()) == M, "latent_means: one observation matrix per modality");
  const Eigen::Index n = x_raw[0].rows();
  Matrix z(n, config_.total_latent_dim());
  const Eigen::Index chunk = 2048;
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min(chunk, n - start);
    int off = 0;
    for (int m = 0; m < M; ++m) {
      const EncoderOutput e = encode(m, x_raw[m].middleRows(start, len));
      z.block(start, off, len, config_.latent_dims[m]) = e.z_mean;
      off += config_.latent_dims[m];
    }
  }
  return z;
}

Matrix Model::gate_matrix() {
  ad::Tape t;
  nn::Binder bind(t, false);
  return gates(bind).value();
}

std::pair<Matrix, Vector> Model::flow_noise(const Matrix& z_hat, const Matrix& gates_in) {
  ad::Tape t;
  nn::Binder bind(t, false);
  const int d = config_.total_latent_dim();
  require(gates_in.rows() == d && gates_in.cols() == d, "flow_noise: gates must be d x d");
  Matrix g = gates_in;
  g.diagonal().setZero();
  std::vector<ad::Var> rows;
  for (int i = 0; i < d; ++i) rows.push_back(t.constant(g.row(i)));
  const auto [eps, logdet] = flow_noise(bind, t.constant(z_hat), rows);
  return {eps.value(), logdet.value().col(0)};
}

Matrix Model::flow_inverse(const Matrix& eps, const Matrix& context, const Matrix& gates_in) {
  const int d = config_.total_latent_dim();
  require(eps.cols() == d && context.cols() == d && eps.rows() == context.rows(), "flow_inverse: shape mismatch");
  Matrix g = gates_in;
  g.diagonal().setZero();
  Matrix z(eps.rows(), d);
  for (int i = 0; i < d; ++i) {
    ad::Tape t;
    nn::Binder bind(t, false);
    const Matrix ctx = context.array().rowwise() * g.row(i).array();
    std::vector<Matrix> raws;
    for (auto& net : flows[i]) raws.push_back(net.forward(bind, t.constant(ctx)).value());
    for (Eigen::Index r = 0; r < eps.rows(); ++r) {
      double u = eps(r, i);
      for (auto it = raws.rbegin(); it != raws.rend(); ++it) {
        const Eigen::RowVectorXd row = it->row(r);
        u = config_.flow_type == "spline" ? flow::rq_spline_inverse(u, row.data(), config_.spline)
                                          : flow::affine_inverse(u, row.data());
      }
      z(r, i) = u;
    }
  }
  return z;
}

LossValues Model::evaluate_loss(const std::vector<Matrix>& x_raw) {
  const int M = config_.num_modalities();
  require(static_cast<int>(x_raw.size()) == M, "evaluate_loss: one observation matrix per modality");
  const Eigen::Index n = x_raw[0].rows();
  const Eigen::Index chunk = 2048;
  LossValues acc;
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min(chunk, n - start);
    std::vector<Matrix> xs;
    for (int m = 0; m < M; ++m) xs.push_back(standardize(m, x_raw[m].middleRows(start, len)));
    ad::Tape t;
    nn::Binder bind(t, false);
    const LossValues v = loss(bind, xs, nullptr).values();
    const double w = static_cast<double>(len) / static_cast<double>(n);
    acc.recon += w * v.recon;
    acc.ind += w * v.ind;
    acc.kl_eta += w * v.kl_eta;
    acc.nll_eps += w * v.nll_eps;
    acc.entropy_z += w * v.entropy_z;
    acc.sparsity = v.sparsity;
    acc.dag = v.dag;
  }
  acc.total = config_.alpha_recon * acc.recon + config_.alpha_ind * acc.ind + config_.alpha_sp * acc.sparsity +
              config_.alpha_dag * acc.dag;
  return acc;
}

BoolMatrix Model::binarize_adjacency(double tau) {
  require(tau >= 0.0 && tau <= 1.0, "binarize_adjacency: tau must lie in [0, 1]");
  BoolMatrix b = gate_matrix().array() > tau;
  b.diagonal().setConstant(false);
  return b;
}

Model Model::permute_modalities(const std::vector<int>& perm) const {
  const int M = config_.num_modalities();
  require(static_cast<int>(perm.size()) == M, "permute_modalities: permutation size mismatch");
  std::vector<int> seen(M, 0);
  for (int p : perm) {
    require(p >= 0 && p < M && !seen[p], "permute_modalities: not a permutation");
    seen[p] = 1;
  }
  Model out = *this;
  auto reorder = [&](auto& v) {
    auto copy = v;
    for (int k = 0; k < M; ++k) v[k] = copy[perm[k]];
  };
  reorder(out.config_.latent_dims);
  reorder(out.config_.exo_dims);
  reorder(out.config_.obs_dims);
  if (!out.config_.image_channels.empty()) reorder(out.config_.image_channels);
  if (!out.mlp_encoders.empty()) {
    reorder(out.mlp_encoders);
    reorder(out.mlp_decoders);
  }
  if (!out.conv_encoders.empty()) {
    reorder(out.conv_encoders);
    reorder(out.conv_decoders);
  }
  reorder(out.obs_mean_);
  reorder(out.obs_std_);

  std::vector<int> old_of;
  for (int k = 0; k < M; ++k) {
    const auto [start, size] = latent_block(config_.latent_dims, perm[k]);
    for (int j = 0; j < size; ++j) old_of.push_back(start + j);
  }
  const int d = static_cast<int>(old_of.size());
  for (int p = 0; p < d; ++p)
    for (int q = 0; q < d; ++q) out.adjacency_logits.value(p, q) = adjacency_logits.value(old_of[p], old_of[q]);
  for (int p = 0; p < d; ++p) {
    out.flows[p] = flows[old_of[p]];
    for (auto& net : out.flows[p]) {
      const Matrix W = net.layers.front().W.value;
      for (int q = 0; q < d; ++q) net.layers.front().W.value.col(q) = W.col(old_of[q]);
    }
  }
  return out;
}

void Model::save(TensorStore& store, const std::string& prefix) const {
  auto* self = const_cast<Model*>(this);
  for (const auto& [name, p] : self->parameters()) store.put(prefix + name, p->value, DType::Float64);
  for (int m = 0; m < config_.num_modalities(); ++m) {
    store.put(prefix + "obs_mean" + std::to_string(m), obs_mean_[m].transpose(), DType::Float64);
    store.put(prefix + "obs_std" + std::to_string(m), obs_std_[m].transpose(), DType::Float64);
  }
  store.meta()[prefix + "model_config"] = config_.to_json();
}

Model Model::load(const TensorStore& store, const std::string& prefix) {
  const auto& meta = store.meta();
  if (!meta.contains(prefix + "model_config")) throw IoError("checkpoint has no model config");
  const ModelConfig config = ModelConfig::from_json(meta.at(prefix + "model_config"));
  Model model(config, 0);
  for (const auto& [name, p] : model.parameters()) {
    if (!store.contains(prefix + name)) throw IoError("checkpoint is missing parameter '" + name + "'");
    const Matrix& v = store.get(prefix + name);
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
      throw IoError("checkpoint parameter '" + name + "' has the wrong shape");
    p->value = v;
  }
  std::vector<Vector> mean, std;
  for (int m = 0; m < config.num_modalities(); ++m) {
    mean.push_back(store.get(prefix + "obs_mean" + std::to_string(m)).row(0).transpose());
    std.push_back(store.get(prefix + "obs_std" + std::to_string(m)).row(0).transpose());
  }
  model.set_standardization(std::move(mean), std::move(std));
  return model;
}

}  // namespace mmcrl
