#include "mmcrl/nn.hpp"

#include <cmath>

namespace mmcrl::nn {

ad::Var Binder::operator()(Param& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return it->second;
  const ad::Var v = trainable_ ? tape_.variable(p.value) : tape_.constant(p.value);
  bound_.emplace(&p, v);
  return v;
}

void Binder::collect_grads(const NamedParams& params) const {
  for (const auto& [name, p] : params) {
    auto it = bound_.find(p);
    if (it == bound_.end()) p->grad = Matrix::Zero(p->value.rows(), p->value.cols());
    else p->grad = tape_.grad(it->second.id);
  }
}

Matrix normal_matrix(CounterRng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

Linear::Linear(int in, int out, CounterRng& rng) {
  W.value = normal_matrix(rng, out, in, std::sqrt(2.0 / in));
  b.value = Matrix::Zero(1, out);
}

void Linear::zero() {
  W.value.setZero();
  b.value.setZero();
}

Mlp::Mlp(int in, int hidden, int out, int depth, double slope_, CounterRng& rng) : slope(slope_) {
  require(depth >= 1, "Mlp: depth must be positive");
  int width = in;
  for (int l = 0; l < depth; ++l) {
    const int o = l + 1 == depth ? out : hidden;
    layers.emplace_back(width, o, rng);
    width = o;
  }
}

ad::Var Mlp::forward(Binder& bind, ad::Var x) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    x = layers[l].forward(bind, x);
    if (l + 1 < layers.size()) x = ad::leaky_relu(x, slope);
  }
  return x;
}

void Mlp::add_params(const std::string& prefix, NamedParams& out) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    out.emplace_back(prefix + ".l" + std::to_string(l) + ".W", &layers[l].W);
    out.emplace_back(prefix + ".l" + std::to_string(l) + ".b", &layers[l].b);
  }
}

Conv::Conv(int in_ch, int out_ch, int kernel_, int stride_, int pad_, CounterRng& rng)
    : kernel(kernel_), stride(stride_), pad(pad_) {
  const int fan_in = in_ch * kernel * kernel;
  W.value = normal_matrix(rng, out_ch, fan_in, std::sqrt(2.0 / fan_in));
  b.value = Matrix::Zero(1, out_ch);
}

void Adam::step(const NamedParams& params) {
  ++t_;
  double scale = 1.0;
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, p] : params) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& [name, p] : params) {
    auto& [m, v] = moments_[name];
    if (m.size() == 0) {
      m = Matrix::Zero(p->value.rows(), p->value.cols());
      v = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    const Matrix g = scale * p->grad;
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    p->value.array() -= config_.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.epsilon);
  }
}

}  // namespace mmcrl::nn
