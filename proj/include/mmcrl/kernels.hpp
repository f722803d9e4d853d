#pragma once

// Data-parallel inner loops. Each kernel exists twice: a serial reference in
// `kernels::serial` and an OpenMP version in `kernels::omp`. The two produce
// bit-identical results because every output element is computed by the same
// sequence of floating-point operations; only the assignment of rows to
// threads differs. Tests compare them element-for-element and the benchmark
// target times them against each other.

#include "mmcrl/common.hpp"

#include <cstdint>

namespace mmcrl::kernels {

namespace serial {

/// y = act(x * W^T + b) row by row, act = leaky ReLU with the given slope.
/// x: n x in, W: out x in, b: out.
Matrix affine_leaky(const Matrix& x, const Matrix& W, const Vector& b, double slope);

/// Fills `out` with standard normals keyed on (seed, stream, row, col).
void fill_normal(Matrix& out, std::uint64_t seed, std::uint64_t stream);

/// |Pearson correlation| between every column of a and every column of b.
/// Constant columns yield 0. Result: a.cols() x b.cols().
Matrix abs_correlation(const Matrix& a, const Matrix& b);

}  // namespace serial

namespace omp {

Matrix affine_leaky(const Matrix& x, const Matrix& W, const Vector& b, double slope);
void fill_normal(Matrix& out, std::uint64_t seed, std::uint64_t stream);
Matrix abs_correlation(const Matrix& a, const Matrix& b);

}  // namespace omp

/// Number of OpenMP threads the parallel kernels will use.
int max_threads();
void set_threads(int n);

}  // namespace mmcrl::kernels
