#include "mmcrl/autodiff.hpp"

#include <cmath>

namespace mmcrl::ad {

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows() == 1 && v.cols() == 1, "Var::scalar on a non-scalar");
  return v(0, 0);
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::variable(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backward)});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Matrix Tape::grad(int id) const {
  const auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = g;
  else n.grad += g;
}

void Tape::backward(Var root) {
  require(root.tape == this, "backward: root belongs to another tape");
  require(value(root.id).size() == 1, "backward: root must be a scalar");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(root.id)].grad = Matrix::Ones(1, 1);
  for (int id = root.id; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, id);
  }
}

namespace {

bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
  for (auto v : vs)
    if (t.requires_grad(v.id)) return true;
  return false;
}

void check_broadcast(const Matrix& a, const Matrix& b, const char* op) {
  const bool rows_ok = a.rows() == b.rows() || a.rows() == 1 || b.rows() == 1;
  const bool cols_ok = a.cols() == b.cols() || a.cols() == 1 || b.cols() == 1;
  if (!rows_ok || !cols_ok)
    throw ConfigError(std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                      " and " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + " do not broadcast");
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Matrix r = g;
  if (rows == 1 && r.rows() != 1) r = r.colwise().sum().eval();
  if (cols == 1 && r.cols() != 1) r = r.rowwise().sum().eval();
  return r;
}

template <class F, class GA, class GB>
Var binary(Var a, Var b, const char* name, F f, GA ga, GB gb) {
  Tape& t = *a.tape;
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  check_broadcast(A, B, name);
  const Eigen::Index rows = std::max(A.rows(), B.rows());
  const Eigen::Index cols = std::max(A.cols(), B.cols());
  Matrix out = f(expand(A, rows, cols), expand(B, rows, cols));
  if (!any_grad(t, {a, b})) return t.push(std::move(out), false, nullptr);
  const int ia = a.id, ib = b.id;
  return t.push(std::move(out), true, [ia, ib, ga, gb](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    const Matrix& A = tp.value(ia);
    const Matrix& B = tp.value(ib);
    const Matrix Ae = expand(A, g.rows(), g.cols());
    const Matrix Be = expand(B, g.rows(), g.cols());
    if (tp.requires_grad(ia)) tp.accumulate(ia, reduce_to(ga(g, Ae, Be, tp.value(self)), A.rows(), A.cols()));
    if (tp.requires_grad(ib)) tp.accumulate(ib, reduce_to(gb(g, Ae, Be, tp.value(self)), B.rows(), B.cols()));
  });
}

// y = f(a) element-wise with dy/da computed from (a, y).
template <class F, class D>
Var unary(Var a, F f, D dfd) {
  Tape& t = *a.tape;
  Matrix out = f(a.value());
  if (!t.requires_grad(a.id)) return t.push(std::move(out), false, nullptr);
  const int ia = a.id;
  return t.push(std::move(out), true, [ia, dfd](Tape& tp, int self) {
    tp.accumulate(ia, (tp.grad_ref(self).array() * dfd(tp.value(ia), tp.value(self)).array()).matrix());
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](const Matrix& x, const Matrix& y) { return Matrix(x + y); },
      [](const Matrix& g, const Matrix&, const Matrix&, const Matrix&) { return g; },
      [](const Matrix& g, const Matrix&, const Matrix&, const Matrix&) { return g; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](const Matrix& x, const Matrix& y) { return Matrix(x - y); },
      [](const Matrix& g, const Matrix&, const Matrix&, const Matrix&) { return g; },
      [](const Matrix& g, const Matrix&, const Matrix&, const Matrix&) { return Matrix(-g); });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](const Matrix& x, const Matrix& y) { return Matrix(x.cwiseProduct(y)); },
      [](const Matrix& g, const Matrix&, const Matrix& B, const Matrix&) { return Matrix(g.cwiseProduct(B)); },
      [](const Matrix& g, const Matrix& A, const Matrix&, const Matrix&) { return Matrix(g.cwiseProduct(A)); });
}

Var div(Var a, Var b) {
  return binary(
      a, b, "div", [](const Matrix& x, const Matrix& y) { return Matrix(x.cwiseQuotient(y)); },
      [](const Matrix& g, const Matrix&, const Matrix& B, const Matrix&) { return Matrix(g.cwiseQuotient(B)); },
      [](const Matrix& g, const Matrix&, const Matrix& B, const Matrix& Y) {
        return Matrix(-(g.array() * Y.array() / B.array()).matrix());
      });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = s * a.value();
  if (!t.requires_grad(a.id)) return t.push(std::move(out), false, nullptr);
  const int ia = a.id;
  return t.push(std::move(out), true, [ia, s](Tape& tp, int self) { tp.accumulate(ia, s * tp.grad_ref(self)); });
}

Var add_scalar(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = (a.value().array() + s).matrix();
  if (!t.requires_grad(a.id)) return t.push(std::move(out), false, nullptr);
  const int ia = a.id;
  return t.push(std::move(out), true, [ia](Tape& tp, int self) { tp.accumulate(ia, tp.grad_ref(self)); });
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  if (!any_grad(t, {a, b})) return t.push(std::move(out), false, nullptr);
  const int ia = a.id, ib = b.id;
  return t.push(std::move(out), true, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var linear(Var x, Var W, Var b) {
  Tape& t = *x.tape;
  require(x.cols() == W.cols(), "linear: input width does not match weight columns");
  require(b.rows() == 1 && b.cols() == W.rows(), "linear: bias must be 1 x out");
  Matrix out = x.value() * W.value().transpose();
  out.rowwise() += b.value().row(0);
  if (!any_grad(t, {x, W, b})) return t.push(std::move(out), false, nullptr);
  const int ix = x.id, iw = W.id, ib = b.id;
  return t.push(std::move(out), true, [ix, iw, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.requires_grad(ix)) tp.accumulate(ix, g * tp.value(iw));
    if (tp.requires_grad(iw)) tp.accumulate(iw, g.transpose() * tp.value(ix));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.colwise().sum());
  });
}

Var exp(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.array().exp()); },
      [](const Matrix&, const Matrix& y) { return y; });
}

Var log(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.array().log()); },
      [](const Matrix& x, const Matrix&) { return Matrix(x.array().inverse()); });
}

Var tanh(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.array().tanh()); },
      [](const Matrix&, const Matrix& y) { return Matrix(1.0 - y.array().square()); });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
double stable_softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }
}  // namespace

Var sigmoid(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.unaryExpr(&stable_sigmoid)); },
      [](const Matrix&, const Matrix& y) { return Matrix(y.array() * (1.0 - y.array())); });
}

Var softplus(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.unaryExpr(&stable_softplus)); },
      [](const Matrix& x, const Matrix&) { return Matrix(x.unaryExpr(&stable_sigmoid)); });
}

Var leaky_relu(Var a, double slope) {
  return unary(
      a, [slope](const Matrix& x) { return Matrix(x.unaryExpr([slope](double v) { return v >= 0 ? v : slope * v; })); },
      [slope](const Matrix& x, const Matrix&) {
        return Matrix(x.unaryExpr([slope](double v) { return v >= 0 ? 1.0 : slope; }));
      });
}

Var square(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.array().square()); },
      [](const Matrix& x, const Matrix&) { return Matrix(2.0 * x.array()); });
}

Var sqrt(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.array().sqrt()); },
      [](const Matrix&, const Matrix& y) { return Matrix(0.5 / y.array()); });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](const Matrix& x) { return Matrix(x.cwiseMax(lo).cwiseMin(hi)); },
      [lo, hi](const Matrix& x, const Matrix&) {
        return Matrix(x.unaryExpr([lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; }));
      });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  Matrix out = Matrix::Constant(1, 1, a.value().sum());
  if (!t.requires_grad(a.id)) return t.push(std::move(out), false, nullptr);
  const int ia = a.id;
  return t.push(std::move(out), true, [ia](Tape& tp, int self) {
    const Matrix& v = tp.value(ia);
    tp.accumulate(ia, Matrix::Constant(v.rows(), v.cols(), tp.grad_ref(self)(0, 0)));
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var row_sum(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().rowwise().sum();
  if (!t.requires_grad(a.id)) return t.push(std::move(out), false, nullptr);
  const int ia = a.id;
  return t.push(std::move(out), true, [ia](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad_ref(self).replicate(1, tp.value(ia).cols()));
  });
}

Var col_sum(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().colwise().sum();
  if (!t.requires_grad(a.id)) return t.push(std::move(out), false, nullptr);
  const int ia = a.id;
  return t.push(std::move(out), true, [ia](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad_ref(self).replicate(tp.value(ia).rows(), 1));
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = *a.tape;
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: range out of bounds");
  Matrix out = a.value().middleCols(start, count);
  if (!t.requires_grad(a.id)) return t.push(std::move(out), false, nullptr);
  const int ia = a.id;
  return t.push(std::move(out), true, [ia, start, count](Tape& tp, int self) {
    const Matrix& v = tp.value(ia);
    Matrix g = Matrix::Zero(v.rows(), v.cols());
    g.middleCols(start, count) = tp.grad_ref(self);
    tp.accumulate(ia, g);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = *a.tape;
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: range out of bounds");
  Matrix out = a.value().middleRows(start, count);
  if (!t.requires_grad(a.id)) return t.push(std::move(out), false, nullptr);
  const int ia = a.id;
  return t.push(std::move(out), true, [ia, start, count](Tape& tp, int self) {
    const Matrix& v = tp.value(ia);
    Matrix g = Matrix::Zero(v.rows(), v.cols());
    g.middleRows(start, count) = tp.grad_ref(self);
    tp.accumulate(ia, g);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  Tape& t = *parts.front().tape;
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool grad = false;
  for (auto p : parts) {
    require(p.rows() == rows, "concat_cols: row counts differ");
    cols += p.cols();
    grad = grad || t.requires_grad(p.id);
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (auto p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    ids.push_back(p.id);
    widths.push_back(p.cols());
  }
  if (!grad) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [ids, widths](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    Eigen::Index o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) tp.accumulate(ids[k], g.middleCols(o, widths[k]));
      o += widths[k];
    }
  });
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double mx = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  if (!t.requires_grad(a.id)) return t.push(std::move(out), false, nullptr);
  const int ia = a.id;
  return t.push(std::move(out), true, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad_ref(self);
    const Vector dot = (g.array() * y.array()).rowwise().sum();
    Matrix ga = y.array() * (g.colwise() - dot).array();
    tp.accumulate(ia, ga);
  });
}

Var cumsum_rows(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value();
  for (Eigen::Index c = 1; c < out.cols(); ++c) out.col(c) += out.col(c - 1);
  if (!t.requires_grad(a.id)) return t.push(std::move(out), false, nullptr);
  const int ia = a.id;
  return t.push(std::move(out), true, [ia](Tape& tp, int self) {
    Matrix g = tp.grad_ref(self);
    for (Eigen::Index c = g.cols() - 2; c >= 0; --c) g.col(c) += g.col(c + 1);
    tp.accumulate(ia, g);
  });
}

Var gather_cols(Var a, const std::vector<int>& index) {
  Tape& t = *a.tape;
  require(static_cast<Eigen::Index>(index.size()) == a.rows(), "gather_cols: one index per row");
  Matrix out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    require(index[r] >= 0 && index[r] < a.cols(), "gather_cols: index out of range");
    out(r, 0) = a.value()(r, index[r]);
  }
  if (!t.requires_grad(a.id)) return t.push(std::move(out), false, nullptr);
  const int ia = a.id;
  return t.push(std::move(out), true, [ia, index](Tape& tp, int self) {
    const Matrix& v = tp.value(ia);
    Matrix g = Matrix::Zero(v.rows(), v.cols());
    const Matrix& go = tp.grad_ref(self);
    for (Eigen::Index r = 0; r < v.rows(); ++r) g(r, index[r]) = go(r, 0);
    tp.accumulate(ia, g);
  });
}

Var select(const BoolMatrix& mask, Var a, Var b) {
  Tape& t = *a.tape;
  require(a.rows() == b.rows() && a.cols() == b.cols() && mask.rows() == a.rows() && mask.cols() == a.cols(),
          "select: shapes differ");
  Matrix out = mask.select(a.value(), b.value());
  if (!any_grad(t, {a, b})) return t.push(std::move(out), false, nullptr);
  const int ia = a.id, ib = b.id;
  return t.push(std::move(out), true, [ia, ib, mask](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    const Matrix zero = Matrix::Zero(g.rows(), g.cols());
    if (tp.requires_grad(ia)) tp.accumulate(ia, mask.select(g, zero));
    if (tp.requires_grad(ib)) tp.accumulate(ib, mask.select(zero, g));
  });
}

// ---------------------------------------------------------------------------
// Convolution via im2col, one sample at a time.

ConvShape conv2d_output(const ConvShape& in, int out_channels, int kernel, int stride, int pad) {
  ConvShape o;
  o.channels = out_channels;
  o.height = (in.height + 2 * pad - kernel) / stride + 1;
  o.width = (in.width + 2 * pad - kernel) / stride + 1;
  return o;
}

namespace {

// cols: (C*k*k) x (Ho*Wo)
void im2col(const double* img, const ConvShape& in, int k, int stride, int pad, const ConvShape& out, Matrix& cols) {
  cols.resize(static_cast<Eigen::Index>(in.channels) * k * k, static_cast<Eigen::Index>(out.height) * out.width);
  for (int c = 0; c < in.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        for (int oy = 0; oy < out.height; ++oy)
          for (int ox = 0; ox < out.width; ++ox) {
            const int iy = oy * stride - pad + ky;
            const int ix = ox * stride - pad + kx;
            const bool inside = iy >= 0 && iy < in.height && ix >= 0 && ix < in.width;
            cols(row, static_cast<Eigen::Index>(oy) * out.width + ox) =
                inside ? img[(static_cast<std::size_t>(c) * in.height + iy) * in.width + ix] : 0.0;
          }
      }
}

void col2im(const Matrix& cols, const ConvShape& in, int k, int stride, int pad, const ConvShape& out, double* img) {
  for (int c = 0; c < in.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        for (int oy = 0; oy < out.height; ++oy)
          for (int ox = 0; ox < out.width; ++ox) {
            const int iy = oy * stride - pad + ky;
            const int ix = ox * stride - pad + kx;
            if (iy >= 0 && iy < in.height && ix >= 0 && ix < in.width)
              img[(static_cast<std::size_t>(c) * in.height + iy) * in.width + ix] +=
                  cols(row, static_cast<Eigen::Index>(oy) * out.width + ox);
          }
      }
}

}  // namespace

Var conv2d(Var x, Var W, Var b, const ConvShape& in, int kernel, int stride, int pad) {
  Tape& t = *x.tape;
  require(x.cols() == static_cast<Eigen::Index>(in.channels) * in.height * in.width, "conv2d: input width mismatch");
  require(W.cols() == static_cast<Eigen::Index>(in.channels) * kernel * kernel, "conv2d: weight shape mismatch");
  require(b.rows() == 1 && b.cols() == W.rows(), "conv2d: bias must be 1 x out_channels");
  const int oc = static_cast<int>(W.rows());
  const ConvShape out = conv2d_output(in, oc, kernel, stride, pad);
  const Eigen::Index plane = static_cast<Eigen::Index>(out.height) * out.width;
  const Eigen::Index n = x.rows();
  // Row-major copy so each sample is contiguous.
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMat X = x.value();
  const Matrix& Wv = W.value();
  const Matrix& bv = b.value();
  RowMat Y(n, oc * plane);
#pragma omp parallel for schedule(static)
  for (Eigen::Index s = 0; s < n; ++s) {
    Matrix cols;
    im2col(X.row(s).data(), in, kernel, stride, pad, out, cols);
    Matrix ys = Wv * cols;  // oc x plane
    for (int c = 0; c < oc; ++c)
      for (Eigen::Index p = 0; p < plane; ++p) Y(s, c * plane + p) = ys(c, p) + bv(0, c);
  }
  Matrix value = Y;
  if (!any_grad(t, {x, W, b})) return t.push(std::move(value), false, nullptr);
  const int ix = x.id, iw = W.id, ib = b.id;
  return t.push(std::move(value), true, [ix, iw, ib, in, out, kernel, stride, pad, oc, plane](Tape& tp, int self) {
    const RowMat G = tp.grad_ref(self);
    const RowMat Xv = tp.value(ix);
    const Matrix& Wm = tp.value(iw);
    const Eigen::Index n = G.rows();
    Matrix gW = Matrix::Zero(Wm.rows(), Wm.cols());
    Matrix gb = Matrix::Zero(1, oc);
    RowMat gX = RowMat::Zero(n, Xv.cols());
    const bool need_x = tp.requires_grad(ix);
    Matrix cols;
    for (Eigen::Index s = 0; s < n; ++s) {
      Matrix gs(oc, plane);
      for (int c = 0; c < oc; ++c)
        for (Eigen::Index p = 0; p < plane; ++p) gs(c, p) = G(s, c * plane + p);
      gb += gs.rowwise().sum().transpose();
      im2col(Xv.row(s).data(), in, kernel, stride, pad, out, cols);
      gW.noalias() += gs * cols.transpose();
      if (need_x) {
        const Matrix gcols = Wm.transpose() * gs;
        col2im(gcols, in, kernel, stride, pad, out, gX.row(s).data());
      }
    }
    if (tp.requires_grad(iw)) tp.accumulate(iw, gW);
    if (tp.requires_grad(ib)) tp.accumulate(ib, gb);
    if (need_x) tp.accumulate(ix, Matrix(gX));
  });
}

Var upsample2d(Var x, const ConvShape& in, int factor) {
  Tape& t = *x.tape;
  require(x.cols() == static_cast<Eigen::Index>(in.channels) * in.height * in.width, "upsample2d: input width mismatch");
  const int H = in.height * factor, Wd = in.width * factor;
  const Eigen::Index n = x.rows();
  Matrix out(n, static_cast<Eigen::Index>(in.channels) * H * Wd);
  auto src = [&](int c, int y, int xx) {
    return (static_cast<Eigen::Index>(c) * in.height + y / factor) * in.width + xx / factor;
  };
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < Wd; ++xx) out.col((static_cast<Eigen::Index>(c) * H + y) * Wd + xx) = x.value().col(src(c, y, xx));
  if (!t.requires_grad(x.id)) return t.push(std::move(out), false, nullptr);
  const int ix = x.id;
  return t.push(std::move(out), true, [ix, in, factor, H, Wd](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    Matrix gx = Matrix::Zero(g.rows(), tp.value(ix).cols());
    for (int c = 0; c < in.channels; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < Wd; ++xx)
          gx.col((static_cast<Eigen::Index>(c) * in.height + y / factor) * in.width + xx / factor) +=
              g.col((static_cast<Eigen::Index>(c) * H + y) * Wd + xx);
    tp.accumulate(ix, gx);
  });
}

Matrix finite_difference(const std::function<double(const Matrix&)>& f, const Matrix& at, double step) {
  Matrix g(at.rows(), at.cols());
  Matrix x = at;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + step;
    const double up = f(x);
    x.data()[i] = keep - step;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace mmcrl::ad
