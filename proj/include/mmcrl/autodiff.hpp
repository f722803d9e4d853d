#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation as a node holding its value and a closure
// that pushes the node's gradient to its inputs. Var is a light handle
// (tape pointer + node index). Element-wise binary ops broadcast a 1 x c row,
// an r x 1 column, or a 1 x 1 scalar against an r x c operand.

#include "mmcrl/common.hpp"

#include <functional>
#include <vector>

namespace mmcrl::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
public:
  using Backward = std::function<void(Tape&, int self)>;

  Var constant(Matrix value);
  Var variable(Matrix value);
  Var push(Matrix value, bool requires_grad, Backward backward);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Gradient of the last backward() root w.r.t. node `id`; zeros if unreached.
  Matrix grad(int id) const;
  const Matrix& grad_ref(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() > 0; }
  void accumulate(int id, const Matrix& g);

  /// Seeds d(root)/d(root) = 1; root must be 1 x 1.
  void backward(Var root);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Element-wise with broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var matmul(Var a, Var b);
/// x * W^T + b with W: out x in and b: 1 x out.
Var linear(Var x, Var W, Var b);

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var leaky_relu(Var a, double slope);
Var square(Var a);
Var sqrt(Var a);
/// Gradient passes only where lo < a < hi.
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);  // r x 1
Var col_sum(Var a);  // 1 x c

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);

Var softmax_rows(Var a);
/// Inclusive running sum along each row.
Var cumsum_rows(Var a);
/// out(r, 0) = a(r, index[r]).
Var gather_cols(Var a, const std::vector<int>& index);
/// out = mask ? a : b element-wise; mask has the output shape.
Var select(const BoolMatrix& mask, Var a, Var b);

/// Images are rows of a matrix in CHW order. Weight: out_ch x (in_ch*k*k),
/// bias: 1 x out_ch. Zero padding `pad`, stride `stride`.
struct ConvShape {
  int channels = 1;
  int height = 28;
  int width = 28;
};
Var conv2d(Var x, Var W, Var b, const ConvShape& in, int kernel, int stride, int pad);
ConvShape conv2d_output(const ConvShape& in, int out_channels, int kernel, int stride, int pad);
/// Nearest-neighbour upsampling by an integer factor.
Var upsample2d(Var x, const ConvShape& in, int factor);

/// Numerical check helper: central-difference gradient of f at `at`.
Matrix finite_difference(const std::function<double(const Matrix&)>& f, const Matrix& at, double step);

}  // namespace mmcrl::ad
