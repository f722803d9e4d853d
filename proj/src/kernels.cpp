#include "mmcrl/kernels.hpp"

#include "mmcrl/rng.hpp"

#include <omp.h>

#include <cmath>

namespace mmcrl::kernels {

namespace {

inline void affine_leaky_row(const Matrix& x, const Matrix& W, const Vector& b,
                             double slope, Eigen::Index i, Matrix& y) {
  const Eigen::Index out = W.rows();
  const Eigen::Index in = W.cols();
  for (Eigen::Index o = 0; o < out; ++o) {
    double acc = b(o);
    for (Eigen::Index k = 0; k < in; ++k) acc += x(i, k) * W(o, k);
    y(i, o) = acc >= 0.0 ? acc : slope * acc;
  }
}

inline void normal_row(Matrix& out, std::uint64_t seed, std::uint64_t stream,
                       Eigen::Index i) {
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    out(i, j) = counter_normal(seed, stream, static_cast<std::uint64_t>(i),
                               static_cast<std::uint64_t>(j));
}

struct ColumnStats {
  Vector mean;
  Vector inv_norm;  // 1 / sqrt(sum of squared deviations); 0 for constant columns
};

ColumnStats column_stats(const Matrix& a) {
  ColumnStats s{Vector(a.cols()), Vector(a.cols())};
  const double n = static_cast<double>(a.rows());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) sum += a(i, j);
    const double mean = sum / n;
    double ss = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double d = a(i, j) - mean;
      ss += d * d;
    }
    s.mean(j) = mean;
    s.inv_norm(j) = ss > 0.0 ? 1.0 / std::sqrt(ss) : 0.0;
  }
  return s;
}

inline double abs_corr_entry(const Matrix& a, const Matrix& b, const ColumnStats& sa,
                             const ColumnStats& sb, Eigen::Index p, Eigen::Index q) {
  if (sa.inv_norm(p) == 0.0 || sb.inv_norm(q) == 0.0) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    acc += (a(i, p) - sa.mean(p)) * (b(i, q) - sb.mean(q));
  return std::min(1.0, std::abs(acc * sa.inv_norm(p) * sb.inv_norm(q)));
}

void check_affine(const Matrix& x, const Matrix& W, const Vector& b) {
  require(x.cols() == W.cols(), "affine_leaky: input width does not match weight columns");
  require(b.size() == W.rows(), "affine_leaky: bias size does not match weight rows");
}

}  // namespace

namespace serial {

Matrix affine_leaky(const Matrix& x, const Matrix& W, const Vector& b, double slope) {
  check_affine(x, W, b);
  Matrix y(x.rows(), W.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) affine_leaky_row(x, W, b, slope, i, y);
  return y;
}

void fill_normal(Matrix& out, std::uint64_t seed, std::uint64_t stream) {
  for (Eigen::Index i = 0; i < out.rows(); ++i) normal_row(out, seed, stream, i);
}

Matrix abs_correlation(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "abs_correlation: row counts differ");
  const auto sa = column_stats(a);
  const auto sb = column_stats(b);
  Matrix c(a.cols(), b.cols());
  for (Eigen::Index p = 0; p < a.cols(); ++p)
    for (Eigen::Index q = 0; q < b.cols(); ++q) c(p, q) = abs_corr_entry(a, b, sa, sb, p, q);
  return c;
}

}  // namespace serial

namespace omp {

Matrix affine_leaky(const Matrix& x, const Matrix& W, const Vector& b, double slope) {
  check_affine(x, W, b);
  Matrix y(x.rows(), W.rows());
  const Eigen::Index n = x.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) affine_leaky_row(x, W, b, slope, i, y);
  return y;
}

void fill_normal(Matrix& out, std::uint64_t seed, std::uint64_t stream) {
  const Eigen::Index n = out.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) normal_row(out, seed, stream, i);
}

Matrix abs_correlation(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "abs_correlation: row counts differ");
  const auto sa = column_stats(a);
  const auto sb = column_stats(b);
  Matrix c(a.cols(), b.cols());
  const Eigen::Index total = a.cols() * b.cols();
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index t = 0; t < total; ++t) {
    const Eigen::Index p = t / b.cols();
    const Eigen::Index q = t % b.cols();
    c(p, q) = abs_corr_entry(a, b, sa, sb, p, q);
  }
  return c;
}

}  // namespace omp

int max_threads() { return omp_get_max_threads(); }
void set_threads(int n) { omp_set_num_threads(n); }

}  // namespace mmcrl::kernels
