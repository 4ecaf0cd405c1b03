#include <benchmark/benchmark.h>

#include "sppe/ops.hpp"
#include "sppe/posenc.hpp"
#include "sppe/rng.hpp"
#include "sppe/transformer.hpp"

namespace {

using sppe::Rng;
using sppe::Tensor;

template <typename T>
static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor<T> a = Tensor<T>::randn({n, n}, rng, 1.0);
  Tensor<T> b = Tensor<T>::randn({n, n}, rng, 1.0);
  for (auto _ : state) {
    Tensor<T> c = sppe::matmul<T>(nullptr, a, b);
    benchmark::DoNotOptimize(c.ptr());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Matmul<float>)->RangeMultiplier(2)->Range(32, 256)->Complexity();
BENCHMARK(BM_Matmul<double>)->RangeMultiplier(2)->Range(32, 256)->Complexity();

static void BM_AttentionHead(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor<float> q = Tensor<float>::randn({rows, 16}, rng, 1.0);
  Tensor<float> k = Tensor<float>::randn({rows, 16}, rng, 1.0);
  Tensor<float> v = Tensor<float>::randn({rows, 16}, rng, 1.0);
  for (auto _ : state) {
    Tensor<float> o = sppe::attention<float>(nullptr, q, k, v);
    benchmark::DoNotOptimize(o.ptr());
  }
}
BENCHMARK(BM_AttentionHead)->Arg(33)->Arg(249);

static void BM_RelativeBias(benchmark::State& state) {
  const sppe::PatchLayout layout = sppe::PatchLayout::desk();
  Rng rng(1);
  const auto rows = static_cast<std::size_t>(layout.rows());
  Tensor<float> q = Tensor<float>::randn({rows, 16}, rng, 1.0);
  Tensor<float> et = Tensor<float>::randn(
      {2 * static_cast<std::size_t>(layout.t_patches) - 1, 16}, rng, 1.0);
  Tensor<float> ef = Tensor<float>::randn(
      {2 * static_cast<std::size_t>(layout.f_patches) - 1, 16}, rng, 1.0);
  for (auto _ : state) {
    Tensor<float> r = sppe::relative_bias<float>(nullptr, q, et, ef, layout);
    benchmark::DoNotOptimize(r.ptr());
  }
}
BENCHMARK(BM_RelativeBias);

}  // namespace

BENCHMARK_MAIN();
