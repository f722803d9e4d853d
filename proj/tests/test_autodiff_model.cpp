#include <doctest.h>

#include "oracles.hpp"

#include "mmcrl/autodiff.hpp"
#include "mmcrl/flow.hpp"
#include "mmcrl/model.hpp"
#include "mmcrl/nn.hpp"
#include "mmcrl/rng.hpp"
#include "mmcrl/scm.hpp"

#include <cmath>
#include <functional>
#include <numbers>

using namespace mmcrl;
using namespace mmcrl::oracle;

namespace {

// Scalar readout of an arbitrary-shape op: sum(out * fixed weights).
using OpFn = std::function<ad::Var(ad::Tape&, ad::Var)>;

double check_op(const OpFn& op, const Matrix& at, double step = 1e-6) {
  Matrix weights;
  auto f = [&](const Matrix& x) {
    ad::Tape t;
    const ad::Var out = op(t, t.constant(x));
    if (weights.size() == 0) weights = randn(out.rows(), out.cols(), 99);
    return ad::sum(ad::mul(out, t.constant(weights))).scalar();
  };
  f(at);
  ad::Tape t;
  const ad::Var x = t.variable(at);
  const ad::Var out = ad::sum(ad::mul(op(t, x), t.constant(weights)));
  t.backward(out);
  return relative_error(t.grad(x.id), ad::finite_difference(f, at, step));
}

}  // namespace

TEST_CASE("element-wise ops match finite differences") {
  const Matrix a = randn(3, 4, 1);
  const Matrix pos = uniform(3, 4, 2, 0.5, 2.0);
  const Matrix row = randn(1, 4, 3);
  const Matrix col = randn(3, 1, 4);
  auto c = [](ad::Tape& t, const Matrix& m) { return t.constant(m); };

  CHECK(check_op([&](ad::Tape& t, ad::Var x) { return ad::add(x, c(t, row)); }, a) < 1e-6);
  CHECK(check_op([&](ad::Tape& t, ad::Var x) { return ad::sub(c(t, col), x); }, a) < 1e-6);
  CHECK(check_op([&](ad::Tape& t, ad::Var x) { return ad::mul(x, c(t, a)); }, a) < 1e-6);
  CHECK(check_op([&](ad::Tape& t, ad::Var x) { return ad::div(c(t, a), x); }, pos) < 1e-6);
  CHECK(check_op([&](ad::Tape& t, ad::Var x) { return ad::div(x, c(t, pos)); }, a) < 1e-6);
  // broadcast operand is the differentiated one
  CHECK(check_op([&](ad::Tape& t, ad::Var x) { return ad::mul(c(t, a), x); }, row) < 1e-6);
  CHECK(check_op([&](ad::Tape& t, ad::Var x) { return ad::add(c(t, a), x); }, col) < 1e-6);
  CHECK(check_op([&](ad::Tape& t, ad::Var x) { return ad::div(c(t, a), x); }, uniform(1, 1, 5, 1.0, 2.0)) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::neg(ad::scale(x, 3.0)); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::add_scalar(x, 2.0); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::exp(x); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::log(x); }, pos) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::tanh(x); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::sigmoid(x); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::softplus(x); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::leaky_relu(x, 0.2); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::square(x); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::sqrt(x); }, pos) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::clamp(x, -0.5, 0.5); }, a) < 1e-6);
}

TEST_CASE("reductions, shapes and indexing match finite differences") {
  const Matrix a = randn(3, 5, 11);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::sum(x); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::mean(x); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::row_sum(x); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::col_sum(x); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::slice_cols(x, 1, 3); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::slice_rows(x, 1, 2); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::concat_cols({x, ad::square(x), ad::slice_cols(x, 0, 1)}); }, a) <
        1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::softmax_rows(x); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::cumsum_rows(x); }, a) < 1e-6);
  CHECK(check_op([](ad::Tape&, ad::Var x) { return ad::gather_cols(x, {4, 0, 2}); }, a) < 1e-6);
  BoolMatrix mask = (randn(3, 5, 12).array() > 0.0);
  CHECK(check_op([&](ad::Tape&, ad::Var x) { return ad::select(mask, ad::exp(x), ad::square(x)); }, a) < 1e-6);

  const Matrix W = randn(4, 5, 13);
  const Matrix b = randn(1, 4, 14);
  CHECK(check_op([&](ad::Tape& t, ad::Var x) { return ad::linear(x, t.constant(W), t.constant(b)); }, a) < 1e-6);
  CHECK(check_op([&](ad::Tape& t, ad::Var w) { return ad::linear(t.constant(a), w, t.constant(b)); }, W) < 1e-6);
  CHECK(check_op([&](ad::Tape& t, ad::Var bb) { return ad::linear(t.constant(a), t.constant(W), bb); }, b) < 1e-6);
  CHECK(check_op([&](ad::Tape& t, ad::Var x) { return ad::matmul(x, t.constant(W.transpose())); }, a) < 1e-6);
  CHECK(check_op([&](ad::Tape& t, ad::Var w) { return ad::matmul(t.constant(a), w); }, W.transpose()) < 1e-6);
}

TEST_CASE("conv2d and upsample2d match finite differences") {
  const ad::ConvShape in{2, 6, 6};
  const Matrix x = randn(2, 2 * 36, 21);
  const Matrix W = randn(3, 2 * 4 * 4, 22, 0.3);
  const Matrix b = randn(1, 3, 23);
  auto conv = [&](ad::Tape& t, ad::Var xx, ad::Var ww, ad::Var bb) { return ad::conv2d(xx, ww, bb, in, 4, 2, 1); };
  CHECK(check_op([&](ad::Tape& t, ad::Var v) { return conv(t, v, t.constant(W), t.constant(b)); }, x) < 1e-6);
  CHECK(check_op([&](ad::Tape& t, ad::Var v) { return conv(t, t.constant(x), v, t.constant(b)); }, W) < 1e-6);
  CHECK(check_op([&](ad::Tape& t, ad::Var v) { return conv(t, t.constant(x), t.constant(W), v); }, b) < 1e-6);
  const Matrix W3 = randn(1, 2 * 9, 24, 0.3);
  CHECK(check_op([&](ad::Tape& t, ad::Var v) { return ad::conv2d(v, t.constant(W3), t.constant(Matrix::Zero(1, 1)), in, 3, 1, 1); },
                 x) < 1e-6);
  CHECK(check_op([&](ad::Tape&, ad::Var v) { return ad::upsample2d(v, in, 2); }, x) < 1e-6);

  const ad::ConvShape out = ad::conv2d_output(in, 3, 4, 2, 1);
  CHECK(out.channels == 3);
  CHECK(out.height == 3);
  CHECK(out.width == 3);
}

TEST_CASE("conv2d agrees with a direct loop") {
  const ad::ConvShape in{2, 5, 4};
  const int k = 3, stride = 2, pad = 1, oc = 2;
  const Matrix x = randn(1, 2 * 20, 31);
  const Matrix W = randn(oc, 2 * k * k, 32);
  const Matrix b = randn(1, oc, 33);
  ad::Tape t;
  const Matrix y = ad::conv2d(t.constant(x), t.constant(W), t.constant(b), in, k, stride, pad).value();
  const ad::ConvShape out = ad::conv2d_output(in, oc, k, stride, pad);
  REQUIRE(y.cols() == oc * out.height * out.width);
  for (int o = 0; o < oc; ++o)
    for (int r = 0; r < out.height; ++r)
      for (int s = 0; s < out.width; ++s) {
        double acc = b(0, o);
        for (int c = 0; c < in.channels; ++c)
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
              const int yy = r * stride - pad + i;
              const int xx = s * stride - pad + j;
              if (yy < 0 || yy >= in.height || xx < 0 || xx >= in.width) continue;
              acc += W(o, (c * k + i) * k + j) * x(0, (c * in.height + yy) * in.width + xx);
            }
        CHECK(y(0, (o * out.height + r) * out.width + s) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("gradients accumulate over repeated use of one input") {
  ad::Tape t;
  const ad::Var x = t.variable(Matrix::Constant(1, 1, 3.0));
  t.backward(ad::sum(ad::mul(x, x) + x));
  CHECK(t.grad(x.id)(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("spline tape and scalar versions agree, round trip and derivative") {
  const flow::SplineConfig cfg;
  const int n = 1000;
  const Matrix raw = randn(n, cfg.raw_size(), 41, 1.5);
  const Matrix x = uniform(n, 1, 42, -6.0, 6.0);
  ad::Tape t;
  const flow::FlowOut o = flow::rq_spline(t.constant(x), t.constant(raw), cfg);
  double worst_roundtrip = 0.0;
  for (int r = 0; r < n; ++r) {
    const Eigen::RowVectorXd row = raw.row(r);
    const auto [y, ld] = flow::rq_spline_forward(x(r, 0), row.data(), cfg);
    CHECK(o.y.value()(r, 0) == doctest::Approx(y).epsilon(1e-12));
    CHECK(o.logdet.value()(r, 0) == doctest::Approx(ld).epsilon(1e-9));
    worst_roundtrip = std::max(worst_roundtrip, std::abs(flow::rq_spline_inverse(y, row.data(), cfg) - x(r, 0)));
    const double h = 1e-6;
    if (std::abs(std::abs(x(r, 0)) - cfg.bound) > 1e-3) {
      const double fd = (flow::rq_spline_forward(x(r, 0) + h, row.data(), cfg).first -
                         flow::rq_spline_forward(x(r, 0) - h, row.data(), cfg).first) /
                        (2 * h);
      CHECK(std::log(fd) == doctest::Approx(ld).epsilon(1e-4));
    }
  }
  CHECK(worst_roundtrip < 1e-5);
}

TEST_CASE("spline inverse agrees with bisection and map is monotone") {
  const flow::SplineConfig cfg;
  const Matrix raw = randn(50, cfg.raw_size(), 51, 2.0);
  const Matrix y = uniform(50, 1, 52, -4.99, 4.99);
  for (int r = 0; r < 50; ++r) {
    const Eigen::RowVectorXd row = raw.row(r);
    double lo = -cfg.bound, hi = cfg.bound;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (flow::rq_spline_forward(mid, row.data(), cfg).first < y(r, 0) ? lo : hi) = mid;
    }
    CHECK(flow::rq_spline_inverse(y(r, 0), row.data(), cfg) == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-9));
    double prev = -1e9;
    for (double v = -6.0; v <= 6.0; v += 0.01) {
      const double f = flow::rq_spline_forward(v, row.data(), cfg).first;
      CHECK(f > prev);
      prev = f;
    }
  }
}

TEST_CASE("zero raw parameters give the identity spline") {
  const flow::SplineConfig cfg;
  const std::vector<double> raw(static_cast<std::size_t>(cfg.raw_size()), 0.0);
  for (double v : {-7.0, -4.2, -0.3, 0.0, 1.7, 4.99, 5.0, 8.0}) {
    const auto [y, ld] = flow::rq_spline_forward(v, raw.data(), cfg);
    CHECK(y == doctest::Approx(v).epsilon(1e-12));
    CHECK(ld == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("affine flow round trip and tape gradient") {
  const Matrix raw = randn(1000, 2, 61);
  const Matrix x = randn(1000, 1, 62, 3.0);
  double worst = 0.0;
  for (int r = 0; r < 1000; ++r) {
    const Eigen::RowVectorXd row = raw.row(r);
    worst = std::max(worst, std::abs(flow::affine_inverse(flow::affine_forward(x(r, 0), row.data()).first, row.data()) - x(r, 0)));
  }
  CHECK(worst < 1e-5);
  CHECK(check_op([&](ad::Tape& t, ad::Var v) { return flow::affine(t.constant(x.topRows(5)), v).y; }, raw.topRows(5)) < 1e-6);
}

TEST_CASE("spline gradient w.r.t. input and raw parameters") {
  const flow::SplineConfig cfg;
  const Matrix raw = randn(6, cfg.raw_size(), 71);
  const Matrix x = uniform(6, 1, 72, -4.5, 4.5);
  CHECK(check_op([&](ad::Tape& t, ad::Var v) { return flow::rq_spline(v, t.constant(raw), cfg).y; }, x) < 1e-5);
  CHECK(check_op([&](ad::Tape& t, ad::Var v) { return flow::rq_spline(v, t.constant(raw), cfg).logdet; }, x) < 1e-5);
  CHECK(check_op([&](ad::Tape& t, ad::Var v) { return flow::rq_spline(t.constant(x), v, cfg).y; }, raw) < 1e-5);
  CHECK(check_op([&](ad::Tape& t, ad::Var v) { return flow::rq_spline(t.constant(x), v, cfg).logdet; }, raw) < 1e-5);
}

TEST_CASE("identity-initialized flow with zero gates leaves z unchanged") {
  ModelConfig c = tiny_config();
  Model model(c, 3);
  const Matrix z = randn(20, 3, 81, 2.0);
  const auto [eps, logdet] = model.flow_noise(z, Matrix::Zero(3, 3));
  CHECK((eps - z).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(logdet.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("affine flow u -> 2u over three components has logdet 3 ln 2") {
  ModelConfig c;
  c.latent_dims = {3};
  c.exo_dims = {1};
  c.obs_dims = {5};
  c.flow_type = "affine";
  c.flow_blocks = 1;
  Model model(c, 0);
  for (auto& blocks : model.flows) blocks[0].layers.back().b.value << 0.0, std::log(2.0);
  const Matrix z = randn(4, 3, 91);
  const auto [eps, logdet] = model.flow_noise(z, Matrix::Zero(3, 3));
  CHECK((eps - 2.0 * z).cwiseAbs().maxCoeff() < 1e-12);
  for (Eigen::Index r = 0; r < 4; ++r) CHECK(logdet(r) == doctest::Approx(3.0 * std::log(2.0)));
}

TEST_CASE("model flow inverse recovers z for random parameters") {
  for (const std::string type : {"spline", "affine"}) {
    ModelConfig c = tiny_config();
    c.flow_type = type;
    Model model(c, 5);
    perturb(model, 500, 0.5);
    const Matrix gates = model.gate_matrix();
    const Matrix z = randn(1000, 3, 93, 2.0);
    const auto [eps, logdet] = model.flow_noise(z, gates);
    const Matrix back = model.flow_inverse(eps, z, gates);
    CHECK((back - z).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("loss_recon examples") {
  ad::Tape t;
  const ad::Var a = t.constant(randn(4, 3, 101));
  CHECK(loss_recon({a}, {a}).scalar() == 0.0);
  CHECK(loss_recon({t.constant(Matrix::Zero(1, 1))}, {t.constant(Matrix::Ones(1, 1))}).scalar() == doctest::Approx(1.0));
  Matrix x(2, 1);
  x << 0.0, 2.0;
  CHECK(loss_recon({t.constant(x)}, {t.constant(Matrix::Zero(2, 1))}).scalar() == doctest::Approx(2.0));
  // modalities add up
  CHECK(loss_recon({t.constant(x), t.constant(x)}, {t.constant(Matrix::Zero(2, 1)), t.constant(Matrix::Zero(2, 1))}).scalar() ==
        doctest::Approx(4.0));
}

TEST_CASE("KL and flow NLL examples") {
  ad::Tape t;
  CHECK(kl_standard_normal(t.constant(Matrix::Zero(5, 3)), t.constant(Matrix::Zero(5, 3))).scalar() == 0.0);
  CHECK(kl_standard_normal(t.constant(Matrix::Ones(1, 1)), t.constant(Matrix::Zero(1, 1))).scalar() ==
        doctest::Approx(0.5));
  // closed form for a general Gaussian
  Matrix mu(1, 1), lv(1, 1);
  mu << 0.3;
  lv << std::log(2.0);
  CHECK(kl_standard_normal(t.constant(mu), t.constant(lv)).scalar() ==
        doctest::Approx(0.5 * (0.09 + 2.0 - 1.0 - std::log(2.0))));

  const Matrix eps = randn(64, 3, 111);
  double ref = 0.0;
  for (Eigen::Index r = 0; r < eps.rows(); ++r)
    for (Eigen::Index c = 0; c < eps.cols(); ++c)
      ref -= std::log(std::exp(-0.5 * eps(r, c) * eps(r, c)) / std::sqrt(2.0 * std::numbers::pi));
  ref /= static_cast<double>(eps.rows());
  const ad::Var zero = t.constant(Matrix::Zero(64, 1));
  CHECK(flow_nll(t.constant(eps), zero).scalar() == doctest::Approx(ref).epsilon(1e-12));
  CHECK(loss_ind({{t.constant(Matrix::Zero(64, 2)), t.constant(Matrix::Zero(64, 2))}}, t.constant(eps), zero).scalar() ==
        doctest::Approx(ref).epsilon(1e-12));
  // logdet enters with a negative sign
  CHECK(flow_nll(t.constant(eps), t.constant(Matrix::Ones(64, 1))).scalar() == doctest::Approx(ref - 1.0));
}

TEST_CASE("sparsity loss examples") {
  ad::Tape t;
  Matrix g(2, 2);
  g << 0.0, 0.5, 0.25, 0.0;
  CHECK(loss_sparsity(t.constant(g)).scalar() == doctest::Approx(0.75));
  CHECK(loss_sparsity(t.constant(2.0 * g)).scalar() == doctest::Approx(1.5));
  // diagonal never counts
  Matrix diag = Matrix::Identity(3, 3);
  CHECK(loss_sparsity(t.constant(diag)).scalar() == 0.0);

  ModelConfig c = tiny_config();
  c.adjacency_init = -1e4;
  Model model(c, 0);
  CHECK(model.gate_matrix().sum() == 0.0);
  ad::Tape t2;
  nn::Binder bind(t2, false);
  CHECK(loss_sparsity(model.gates(bind)).scalar() == 0.0);
}

TEST_CASE("total loss weighting") {
  ModelConfig c = tiny_config();
  const std::vector<Matrix> x{randn(4, 3, 121), randn(4, 3, 122)};
  const ForwardNoise noise = make_noise(c, 4, 123);

  c.alpha_recon = c.alpha_ind = c.alpha_sp = 0.0;
  Model zero(c, 1);
  CHECK(total_loss_at(zero, x, noise) == 0.0);

  c.alpha_recon = 1.0;
  Model recon_only(c, 1);
  ad::Tape t;
  nn::Binder bind(t, false);
  const LossVars L = recon_only.loss(bind, x, &noise);
  CHECK(L.total.scalar() == doctest::Approx(L.recon.scalar()).epsilon(1e-15));

  ModelConfig d = tiny_config();
  Model def(d, 1);
  ad::Tape t2;
  nn::Binder bind2(t2, false);
  const LossValues v = def.loss(bind2, x, &noise).values();
  CHECK(v.total == doctest::Approx(d.alpha_recon * v.recon + d.alpha_ind * v.ind + d.alpha_sp * v.sparsity));
  CHECK(v.ind == doctest::Approx(v.kl_eta + v.nll_eps - v.entropy_z));
  CHECK(std::isfinite(v.total));
}

TEST_CASE("total loss gradient matches finite differences per parameter group") {
  for (const std::string type : {"spline", "affine"}) {
    ModelConfig c = tiny_config();
    c.flow_type = type;
    c.alpha_dag = 0.3;
    Model model(c, 7);
    perturb(model, 700, 0.3);
    const std::vector<Matrix> x{randn(4, 3, 131), randn(4, 3, 132)};
    const ForwardNoise noise = make_noise(c, 4, 133);

    ad::Tape t;
    nn::Binder bind(t);
    t.backward(model.loss(bind, x, &noise).total);
    const nn::NamedParams params = model.parameters();
    bind.collect_grads(params);
    for (const auto& [name, p] : params) {
      const Matrix analytic = p->grad;
      const Matrix saved = p->value;
      auto f = [&](const Matrix& v) {
        p->value = v;
        const double out = total_loss_at(model, x, noise);
        p->value = saved;
        return out;
      };
      const Matrix fd = ad::finite_difference(f, saved, 1e-6);
      INFO(type << " " << name);
      CHECK(relative_error(analytic, fd) < 1e-3);
    }
  }
}

TEST_CASE("zero-initialized final decoder layer outputs its bias") {
  ModelConfig c = tiny_config();
  Model model(c, 2);
  auto& last = model.mlp_decoders[1].layers.back();
  last.W.value.setZero();
  last.b.value << 1.0, -2.0, 0.5;
  const Matrix out = model.decode(1, randn(7, 2, 141, 5.0), randn(7, 1, 142, 5.0));
  for (Eigen::Index r = 0; r < out.rows(); ++r) CHECK((out.row(r) - last.b.value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Case-1 encoder shapes and round trip") {
  const GeneratorSpec g = case_preset(1);
  ModelConfig c;
  c.latent_dims = g.latent_dims;
  c.exo_dims = g.exo_dims;
  c.obs_dims = g.obs_dims;
  Model model(c, 0);
  const Matrix x = randn(6, 15, 151);
  const EncoderOutput e = model.encode(0, x);
  CHECK(e.z_mean.cols() == 2);
  CHECK(e.eta_mean.cols() == 1);
  CHECK(model.decode(0, e.z_mean, e.eta_mean).cols() == 15);
  CHECK(model.decode(0, e.z_mean, e.eta_mean).rows() == 6);
  CHECK_THROWS_AS(model.encode(0, randn(6, 14, 152)), ConfigError);
  CHECK((e.z_logvar.array() >= kLogvarMin).all());
  CHECK((e.z_logvar.array() <= kLogvarMax).all());
}

TEST_CASE("encoder logvar is clamped") {
  ModelConfig c = tiny_config();
  Model model(c, 0);
  model.mlp_encoders[0].layers.back().b.value.setConstant(50.0);
  const EncoderOutput e = model.encode(0, randn(3, 3, 153));
  CHECK((e.z_logvar.array() == kLogvarMax).all());
  CHECK((e.eta_logvar.array() == kLogvarMax).all());
}

TEST_CASE("conv encoder and decoder shapes") {
  ModelConfig c;
  c.encoder = "conv";
  c.latent_dims = {2, 1};
  c.exo_dims = {1, 1};
  c.image_channels = {3, 1};
  c.image_size = 8;
  c.obs_dims = {3 * 64, 64};
  c.conv_channels = 4;
  c.hidden_width = 16;
  Model model(c, 1);
  const EncoderOutput e = model.encode(0, randn(2, 192, 161));
  CHECK(e.z_mean.rows() == 2);
  CHECK(e.z_mean.cols() == 2);
  CHECK(model.decode(0, e.z_mean, e.eta_mean).cols() == 192);
  CHECK(model.decode(1, randn(2, 1, 162), randn(2, 1, 163)).cols() == 64);

  // gradient check on one conv parameter group
  const std::vector<Matrix> x{randn(2, 192, 164), randn(2, 64, 165)};
  const ForwardNoise noise = make_noise(c, 2, 166);
  ad::Tape t;
  nn::Binder bind(t);
  t.backward(model.loss(bind, x, &noise).total);
  const nn::NamedParams params = model.parameters();
  bind.collect_grads(params);
  for (const auto& [name, p] : params) {
    if (name != "enc0.c1.W" && name != "dec1.c2.W") continue;
    const Matrix saved = p->value;
    auto f = [&](const Matrix& v) {
      p->value = v;
      const double out = total_loss_at(model, x, noise);
      p->value = saved;
      return out;
    };
    INFO(name);
    CHECK(relative_error(p->grad, ad::finite_difference(f, saved, 1e-6)) < 1e-3);
  }
}

TEST_CASE("permuting modalities permutes outputs") {
  ModelConfig c;
  c.latent_dims = {1, 2, 2};
  c.exo_dims = {1, 2, 1};
  c.obs_dims = {4, 5, 6};
  c.hidden_width = 8;
  Model model(c, 9);
  perturb(model, 900, 0.3);
  const std::vector<Matrix> x{randn(10, 4, 171), randn(10, 5, 172), randn(10, 6, 173)};
  const std::vector<int> perm{2, 0, 1};
  Model p = model.permute_modalities(perm);
  const std::vector<Matrix> xp{x[2], x[0], x[1]};

  for (int k = 0; k < 3; ++k) {
    const EncoderOutput a = model.encode(perm[k], x[perm[k]]);
    const EncoderOutput b = p.encode(k, xp[k]);
    CHECK((a.z_mean - b.z_mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.eta_logvar - b.eta_logvar).cwiseAbs().maxCoeff() == 0.0);
  }
  // latent columns: old order [m0: 0 | m1: 1 2 | m2: 3 4], new order [m2 | m0 | m1]
  const std::vector<int> old_of{3, 4, 0, 1, 2};
  const Matrix za = model.latent_means(x);
  const Matrix zb = p.latent_means(xp);
  const Matrix ga = model.gate_matrix();
  const Matrix gb = p.gate_matrix();
  for (int i = 0; i < 5; ++i) {
    CHECK((za.col(old_of[i]) - zb.col(i)).cwiseAbs().maxCoeff() == 0.0);
    for (int j = 0; j < 5; ++j) CHECK(ga(old_of[i], old_of[j]) == gb(i, j));
  }
  const auto [ea, la] = model.flow_noise(za, ga);
  const auto [eb, lb] = p.flow_noise(zb, gb);
  for (int i = 0; i < 5; ++i) CHECK((ea.col(old_of[i]) - eb.col(i)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((la - lb).cwiseAbs().maxCoeff() < 1e-10);  // summation order differs
  CHECK(model.evaluate_loss(x).total == doctest::Approx(p.evaluate_loss(xp).total).epsilon(1e-12));
}

TEST_CASE("binarize_adjacency examples") {
  ModelConfig c = tiny_config();
  Model model(c, 0);
  model.adjacency_logits.value.setConstant(-1e4);
  CHECK(!model.binarize_adjacency(0.3).any());
  model.adjacency_logits.value.setConstant(100.0);
  const BoolMatrix full = model.binarize_adjacency(0.5);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(full(i, j) == (i != j));
  CHECK(!model.binarize_adjacency(1.0).any());
  CHECK_THROWS_AS(model.binarize_adjacency(1.5), ConfigError);
}

TEST_CASE("save and load reproduce the model") {
  ModelConfig c = tiny_config();
  c.flow_type = "affine";
  c.alpha_sp = 0.2;
  Model model(c, 4);
  perturb(model, 400, 0.2);
  model.set_standardization({Vector::Constant(3, 1.5), Vector::Constant(3, -0.5)},
                            {Vector::Constant(3, 2.0), Vector::Constant(3, 0.5)});
  TensorStore store("checkpoint");
  model.save(store, "m.");
  Model back = Model::load(store, "m.");
  CHECK(back.config().to_json() == model.config().to_json());
  const std::vector<Matrix> x{randn(5, 3, 181), randn(5, 3, 182)};
  CHECK(back.evaluate_loss(x).total == model.evaluate_loss(x).total);
  CHECK((back.latent_means(x) - model.latent_means(x)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("model config validation and strict JSON") {
  ModelConfig c = tiny_config();
  CHECK(ModelConfig::from_json(c.to_json()).to_json() == c.to_json());
  Json bad = c.to_json();
  bad["alpha_sparse"] = 1.0;
  CHECK_THROWS_AS(ModelConfig::from_json(bad), ConfigError);
  ModelConfig neg = c;
  neg.alpha_ind = -1.0;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
  ModelConfig t = c;
  t.tau = 1.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  ModelConfig dims = c;
  dims.obs_dims = {3};
  CHECK_THROWS_AS(dims.validate(), ConfigError);
  ModelConfig zero = c;
  zero.latent_dims = {0, 2};
  CHECK_THROWS_AS(zero.validate(), ConfigError);
}

TEST_CASE("Adam minimizes a quadratic and leaves zero-gradient params alone") {
  nn::Param p{Matrix::Constant(2, 2, 3.0), Matrix::Zero(2, 2)};
  nn::Param still{Matrix::Constant(1, 3, 1.25), Matrix::Zero(1, 3)};
  nn::AdamConfig cfg;
  cfg.learning_rate = 0.05;
  nn::Adam adam(cfg);
  const nn::NamedParams params{{"p", &p}, {"still", &still}};
  for (int i = 0; i < 2000; ++i) {
    p.grad = 2.0 * p.value;
    still.grad.setZero();
    adam.step(params);
  }
  CHECK(p.value.cwiseAbs().maxCoeff() < 1e-2);
  CHECK((still.value.array() == 1.25).all());
  CHECK(adam.steps() == 2000);
}
