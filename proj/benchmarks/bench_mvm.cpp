#include <random>

#include <benchmark/benchmark.h>

#include "fastgp/cdf.hpp"
#include "fastgp/mvm.hpp"
#include "fastgp/solver.hpp"

using namespace fastgp;

namespace {

Eigen::MatrixXd points(Index n, Index d) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(n * 31 + d));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < d; ++c) x(i, c) = u(rng);
  return x;
}

Eigen::VectorXd weights(Index n) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(n));
  std::normal_distribution<double> g;
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) y(i) = g(rng);
  return y;
}

KernelSpec matern(int order, KernelForm form = KernelForm::L1) {
  KernelSpec k;
  k.order = order;
  k.form = form;
  k.lengthscale = 0.1054;
  return k;
}

void BM_Presort(benchmark::State& state) {
  const Eigen::MatrixXd x = points(state.range(0), state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(make_geometry(x));
  state.SetComplexityN(state.range(0));
}

void BM_MvmFast(benchmark::State& state) {
  const Index n = state.range(0);
  const MvmPlan plan = MvmPlan::create(matern(static_cast<int>(state.range(2))), points(n, state.range(1)));
  const Eigen::VectorXd y = weights(n);
  for (auto _ : state) benchmark::DoNotOptimize(mvm_fast(plan, y));
  state.SetComplexityN(n);
}

void BM_MvmFastBlock(benchmark::State& state) {
  const Index n = state.range(0);
  const MvmPlan plan = MvmPlan::create(matern(0), points(n, 2));
  Eigen::MatrixXd y(n, state.range(1));
  for (Index j = 0; j < y.cols(); ++j) y.col(j) = weights(n + j);
  for (auto _ : state) benchmark::DoNotOptimize(mvm_fast(plan, y));
}

void BM_MvmWithGrad(benchmark::State& state) {
  const Index n = state.range(0);
  const MvmPlan plan = MvmPlan::create(matern(1), points(n, 2));
  const Eigen::MatrixXd y = weights(n);
  for (auto _ : state) benchmark::DoNotOptimize(mvm_fast_with_grad(plan, y));
}

void BM_MvmNaive(benchmark::State& state) {
  const Index n = state.range(0);
  const Eigen::MatrixXd x = points(n, state.range(1));
  const Eigen::VectorXd y = weights(n);
  const KernelSpec k = matern(0);
  for (auto _ : state) benchmark::DoNotOptimize(mvm_naive(k, x, y));
  state.SetComplexityN(n);
}

void BM_PivotedCholesky(benchmark::State& state) {
  const Eigen::MatrixXd x = points(state.range(0), 2);
  for (auto _ : state) benchmark::DoNotOptimize(pivoted_cholesky(matern(0), x, state.range(1)));
}

}  // namespace

BENCHMARK(BM_Presort)->ArgsProduct({{1 << 12, 1 << 14, 1 << 16}, {1, 2, 3}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MvmFast)
    ->ArgsProduct({benchmark::CreateRange(1 << 10, 1 << 16, 4), {1, 2}, {0, 2}})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MvmFast)->ArgsProduct({{1 << 10, 1 << 12, 1 << 14}, {3}, {0}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MvmFastBlock)->ArgsProduct({{1 << 14}, {1, 4, 11}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MvmWithGrad)->Arg(1 << 14)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MvmNaive)->ArgsProduct({{1 << 10, 1 << 12}, {1, 2}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PivotedCholesky)->ArgsProduct({{5000}, {20, 100}})->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
