#include "mmcrl/discovery.hpp"
#include "mmcrl/kernels.hpp"

#include <benchmark/benchmark.h>

using namespace mmcrl;

namespace {

Matrix normals(Eigen::Index rows, Eigen::Index cols, std::uint64_t stream) {
  Matrix m(rows, cols);
  kernels::serial::fill_normal(m, 42, stream);
  return m;
}

template <bool Parallel>
void BM_AffineLeaky(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const Matrix x = normals(n, 64, 1);
  const Matrix W = normals(128, 64, 2);
  const Vector b = normals(128, 1, 3).col(0);
  for (auto _ : state) {
    Matrix y = Parallel ? kernels::omp::affine_leaky(x, W, b, 0.2) : kernels::serial::affine_leaky(x, W, b, 0.2);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

template <bool Parallel>
void BM_FillNormal(benchmark::State& state) {
  Matrix m(state.range(0), 16);
  for (auto _ : state) {
    if (Parallel) kernels::omp::fill_normal(m, 7, 1);
    else kernels::serial::fill_normal(m, 7, 1);
    benchmark::DoNotOptimize(m.data());
  }
  state.SetItemsProcessed(state.iterations() * m.size());
}

template <bool Parallel>
void BM_AbsCorrelation(benchmark::State& state) {
  const Matrix a = normals(state.range(0), 16, 4);
  const Matrix b = normals(state.range(0), 16, 5);
  for (auto _ : state) {
    Matrix c = Parallel ? kernels::omp::abs_correlation(a, b) : kernels::serial::abs_correlation(a, b);
    benchmark::DoNotOptimize(c.data());
  }
}

void BM_PcSkeleton(benchmark::State& state) {
  const Eigen::Index d = state.range(0);
  Matrix data = normals(5000, d, 6);
  for (Eigen::Index j = 1; j < d; ++j) data.col(j) += 0.8 * data.col(j - 1);
  for (auto _ : state) {
    auto s = discovery::pc_skeleton(data);
    benchmark::DoNotOptimize(&s);
  }
}

}  // namespace

BENCHMARK(BM_AffineLeaky<false>)->Arg(1024)->Arg(16384);
BENCHMARK(BM_AffineLeaky<true>)->Arg(1024)->Arg(16384);
BENCHMARK(BM_FillNormal<false>)->Arg(1 << 16);
BENCHMARK(BM_FillNormal<true>)->Arg(1 << 16);
BENCHMARK(BM_AbsCorrelation<false>)->Arg(10000);
BENCHMARK(BM_AbsCorrelation<true>)->Arg(10000);
BENCHMARK(BM_PcSkeleton)->Arg(6)->Arg(12);

BENCHMARK_MAIN();
