#include "mmcrl/flow.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace mmcrl::flow {

namespace {

// Offset so that softplus(0 + c) + min_derivative == 1.
double derivative_offset(const SplineConfig& c) { return std::log(std::expm1(1.0 - c.min_derivative)); }

double softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

// Knots and derivatives of one sample's spline.
struct Knots {
  std::vector<double> x, y, d;  // K + 1 each
};

Knots knots(const double* raw, const SplineConfig& c) {
  const int K = c.bins;
  Knots k;
  k.x.resize(K + 1);
  k.y.resize(K + 1);
  k.d.resize(K + 1);
  auto fill = [&](const double* u, double minimum, std::vector<double>& out) {
    const double mx = *std::max_element(u, u + K);
    double z = 0.0;
    std::vector<double> e(K);
    for (int i = 0; i < K; ++i) z += e[i] = std::exp(u[i] - mx);
    out[0] = -c.bound;
    double acc = 0.0;
    for (int i = 0; i < K; ++i) {
      acc += 2.0 * c.bound * (minimum + (1.0 - minimum * K) * e[i] / z);
      out[i + 1] = -c.bound + acc;
    }
  };
  fill(raw, c.min_width, k.x);
  fill(raw + K, c.min_height, k.y);
  const double off = derivative_offset(c);
  k.d[0] = 1.0;
  k.d[K] = 1.0;
  for (int i = 1; i < K; ++i) k.d[i] = c.min_derivative + softplus(raw[2 * K + i - 1] + off);
  return k;
}

int find_bin(const std::vector<double>& edges, double v) {
  const int K = static_cast<int>(edges.size()) - 1;
  int k = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin()) - 1;
  return std::clamp(k, 0, K - 1);
}

}  // namespace

std::pair<double, double> rq_spline_forward(double x, const double* raw, const SplineConfig& c) {
  if (!(std::abs(x) < c.bound)) return {x, 0.0};
  const Knots kn = knots(raw, c);
  const int k = find_bin(kn.x, x);
  const double wk = kn.x[k + 1] - kn.x[k];
  const double hk = kn.y[k + 1] - kn.y[k];
  const double s = hk / wk;
  const double xi = (x - kn.x[k]) / wk;
  const double xo = xi * (1.0 - xi);
  const double den = s + (kn.d[k + 1] + kn.d[k] - 2.0 * s) * xo;
  const double y = kn.y[k] + hk * (s * xi * xi + kn.d[k] * xo) / den;
  const double dnum = s * s * (kn.d[k + 1] * xi * xi + 2.0 * s * xo + kn.d[k] * (1.0 - xi) * (1.0 - xi));
  return {y, std::log(dnum) - 2.0 * std::log(den)};
}

double rq_spline_inverse(double y, const double* raw, const SplineConfig& c) {
  if (!(std::abs(y) < c.bound)) return y;
  const Knots kn = knots(raw, c);
  const int k = find_bin(kn.y, y);
  const double wk = kn.x[k + 1] - kn.x[k];
  const double hk = kn.y[k + 1] - kn.y[k];
  const double s = hk / wk;
  const double dy = y - kn.y[k];
  const double sum_d = kn.d[k + 1] + kn.d[k] - 2.0 * s;
  const double a = hk * (s - kn.d[k]) + dy * sum_d;
  const double b = hk * kn.d[k] - dy * sum_d;
  const double cc = -s * dy;
  const double disc = std::max(0.0, b * b - 4.0 * a * cc);
  const double xi = (2.0 * cc) / (-b - std::sqrt(disc));
  return kn.x[k] + std::clamp(xi, 0.0, 1.0) * wk;
}

std::pair<double, double> affine_forward(double x, const double* raw) { return {x * std::exp(raw[1]) + raw[0], raw[1]}; }

double affine_inverse(double y, const double* raw) { return (y - raw[0]) * std::exp(-raw[1]); }

FlowOut affine(ad::Var x, ad::Var raw) {
  require(raw.cols() == 2 && raw.rows() == x.rows() && x.cols() == 1, "affine flow: raw must be n x 2, x n x 1");
  const ad::Var shift = ad::slice_cols(raw, 0, 1);
  const ad::Var log_scale = ad::slice_cols(raw, 1, 1);
  return {ad::add(ad::mul(x, ad::exp(log_scale)), shift), log_scale};
}

FlowOut rq_spline(ad::Var x, ad::Var raw, const SplineConfig& c) {
  using namespace ad;
  const int K = c.bins;
  require(x.cols() == 1 && raw.rows() == x.rows() && raw.cols() == c.raw_size(),
          "rq_spline: raw must be n x (3K-1), x n x 1");
  Tape& t = *x.tape;
  const Eigen::Index n = x.rows();

  BoolMatrix inside(n, 1);
  for (Eigen::Index r = 0; r < n; ++r) inside(r, 0) = std::abs(x.value()(r, 0)) < c.bound;
  const Var xin = clamp(x, -c.bound, c.bound);

  auto bins = [&](Var u, double minimum) {
    return scale(add_scalar(scale(softmax_rows(u), 1.0 - minimum * K), minimum), 2.0 * c.bound);
  };
  const Var W = bins(slice_cols(raw, 0, K), c.min_width);
  const Var H = bins(slice_cols(raw, K, K), c.min_height);
  const Var left = t.constant(Matrix::Constant(n, 1, -c.bound));
  const Var kx = concat_cols({left, add_scalar(cumsum_rows(W), -c.bound)});
  const Var ky = concat_cols({left, add_scalar(cumsum_rows(H), -c.bound)});
  const Var ones = t.constant(Matrix::Ones(n, 1));
  const Var dmid = add_scalar(softplus(add_scalar(slice_cols(raw, 2 * K, K - 1), derivative_offset(c))), c.min_derivative);
  const Var D = concat_cols({ones, dmid, ones});

  std::vector<int> k(static_cast<std::size_t>(n)), k1(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const Matrix& kv = kx.value();
    const double v = xin.value()(r, 0);
    int b = 0;
    while (b < K - 1 && kv(r, b + 1) <= v) ++b;
    k[r] = b;
    k1[r] = b + 1;
  }
  const Var xk = gather_cols(kx, k);
  const Var yk = gather_cols(ky, k);
  const Var wk = gather_cols(W, k);
  const Var hk = gather_cols(H, k);
  const Var dk = gather_cols(D, k);
  const Var dk1 = gather_cols(D, k1);

  const Var s = div(hk, wk);
  const Var xi = div(sub(xin, xk), wk);
  const Var om = add_scalar(neg(xi), 1.0);
  const Var xo = mul(xi, om);
  const Var xi2 = square(xi);
  const Var num = mul(hk, add(mul(s, xi2), mul(dk, xo)));
  const Var den = add(s, mul(sub(add(dk1, dk), scale(s, 2.0)), xo));
  const Var y = add(yk, div(num, den));
  const Var dnum = mul(square(s), add(add(mul(dk1, xi2), mul(scale(s, 2.0), xo)), mul(dk, square(om))));
  const Var logdet = sub(log(dnum), scale(log(den), 2.0));

  const Var zero = t.constant(Matrix::Zero(n, 1));
  return {select(inside, y, x), select(inside, logdet, zero)};
}

}  // namespace mmcrl::flow
