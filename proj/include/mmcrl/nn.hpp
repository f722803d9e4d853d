#pragma once

#include "mmcrl/autodiff.hpp"
#include "mmcrl/rng.hpp"

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mmcrl::nn {

struct Param {
  Matrix value;
  Matrix grad;
};

using NamedParams = std::vector<std::pair<std::string, Param*>>;

/// Maps parameters onto tape leaves for one forward/backward pass.
class Binder {
public:
  explicit Binder(ad::Tape& tape, bool trainable = true) : tape_(tape), trainable_(trainable) {}
  ad::Var operator()(Param& p);
  ad::Tape& tape() { return tape_; }
  /// Copies tape gradients into Param::grad (zeros for unused params).
  void collect_grads(const NamedParams& params) const;

private:
  ad::Tape& tape_;
  bool trainable_;
  std::unordered_map<Param*, ad::Var> bound_;
};

struct Linear {
  Param W;  // out x in
  Param b;  // 1 x out

  Linear() = default;
  /// He-style init N(0, 2 / in) for W, zero bias.
  Linear(int in, int out, CounterRng& rng);
  void zero();
  ad::Var forward(Binder& bind, ad::Var x) { return ad::linear(x, bind(W), bind(b)); }
  int in() const { return static_cast<int>(W.value.cols()); }
  int out() const { return static_cast<int>(W.value.rows()); }
};

/// Fully connected stack: `depth` linear layers, leaky activation between
/// them (none after the last).
struct Mlp {
  std::vector<Linear> layers;
  double slope = 0.2;

  Mlp() = default;
  Mlp(int in, int hidden, int out, int depth, double slope, CounterRng& rng);
  ad::Var forward(Binder& bind, ad::Var x);
  void add_params(const std::string& prefix, NamedParams& out);
};

struct Conv {
  Param W;  // out_ch x (in_ch * k * k)
  Param b;  // 1 x out_ch
  int kernel = 4;
  int stride = 2;
  int pad = 1;

  Conv() = default;
  Conv(int in_ch, int out_ch, int kernel, int stride, int pad, CounterRng& rng);
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm clip; <= 0 disables.
  double clip_norm = 10.0;
};

class Adam {
public:
  Adam() = default;
  explicit Adam(AdamConfig config) : config_(config) {}
  void step(const NamedParams& params);
  std::int64_t steps() const { return t_; }

  /// Moment buffers, keyed by parameter name, for checkpointing.
  std::unordered_map<std::string, std::pair<Matrix, Matrix>>& moments() { return moments_; }
  const std::unordered_map<std::string, std::pair<Matrix, Matrix>>& moments() const { return moments_; }
  void set_steps(std::int64_t t) { t_ = t; }
  const AdamConfig& config() const { return config_; }

private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, std::pair<Matrix, Matrix>> moments_;
};

/// Normal matrix with std `scale`, drawn from a sequential rng.
Matrix normal_matrix(CounterRng& rng, Eigen::Index rows, Eigen::Index cols, double scale);

}  // namespace mmcrl::nn
