// Serial reference against the OpenMP kernels on shapes the desk model hits.
// Set OMP_NUM_THREADS to compare thread counts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "synbrain/kernels.hpp"

namespace {

using synbrain::kernels::ConvGeometry;
using synbrain::kernels::GemmShape;

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

template <void (*Gemm)(const GemmShape&, const double*, const double*, double*)>
void bm_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const GemmShape s{n, n, n, false, state.range(1) != 0, false};
  const auto a = noise(n * n, 1), b = noise(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Gemm(s, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

// args: channels, length
ConvGeometry conv_shape(const benchmark::State& state) {
  const auto ch = static_cast<std::size_t>(state.range(0));
  return {ch, ch, static_cast<std::size_t>(state.range(1)), 3, 1, 1};
}

template <void (*Conv)(const ConvGeometry&, const double*, const double*, double*)>
void bm_conv_forward(benchmark::State& state) {
  const ConvGeometry g = conv_shape(state);
  const auto x = noise(g.c_in * g.length, 3), w = noise(g.c_out * g.c_in * g.kernel, 4);
  std::vector<double> y(g.c_out * g.out_length());
  for (auto _ : state) {
    Conv(g, x.data(), w.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

template <void (*Conv)(const ConvGeometry&, const double*, const double*, double*)>
void bm_conv_backward_input(benchmark::State& state) {
  const ConvGeometry g = conv_shape(state);
  const auto dy = noise(g.c_out * g.out_length(), 5), w = noise(g.c_out * g.c_in * g.kernel, 6);
  std::vector<double> dx(g.c_in * g.length);
  for (auto _ : state) {
    Conv(g, dy.data(), w.data(), dx.data());
    benchmark::DoNotOptimize(dx.data());
  }
}

template <void (*Conv)(const ConvGeometry&, const double*, const double*, double*)>
void bm_conv_backward_weight(benchmark::State& state) {
  const ConvGeometry g = conv_shape(state);
  const auto dy = noise(g.c_out * g.out_length(), 7), x = noise(g.c_in * g.length, 8);
  std::vector<double> dw(g.c_out * g.c_in * g.kernel);
  for (auto _ : state) {
    Conv(g, dy.data(), x.data(), dw.data());
    benchmark::DoNotOptimize(dw.data());
  }
}

namespace k = synbrain::kernels;

BENCHMARK(bm_gemm<k::serial::gemm>)->Name("gemm/serial")->ArgsProduct({{64, 256}, {0, 1}});
BENCHMARK(bm_gemm<k::omp::gemm>)->Name("gemm/omp")->ArgsProduct({{64, 256}, {0, 1}});

BENCHMARK(bm_conv_forward<k::serial::conv1d_forward>)
    ->Name("conv_forward/serial")->Args({8, 128})->Args({16, 512});
BENCHMARK(bm_conv_forward<k::omp::conv1d_forward>)
    ->Name("conv_forward/omp")->Args({8, 128})->Args({16, 512});
BENCHMARK(bm_conv_backward_input<k::serial::conv1d_backward_input>)
    ->Name("conv_backward_input/serial")->Args({8, 128})->Args({16, 512});
BENCHMARK(bm_conv_backward_input<k::omp::conv1d_backward_input>)
    ->Name("conv_backward_input/omp")->Args({8, 128})->Args({16, 512});
BENCHMARK(bm_conv_backward_weight<k::serial::conv1d_backward_weight>)
    ->Name("conv_backward_weight/serial")->Args({8, 128})->Args({16, 512});
BENCHMARK(bm_conv_backward_weight<k::omp::conv1d_backward_weight>)
    ->Name("conv_backward_weight/omp")->Args({8, 128})->Args({16, 512});

}  // namespace

BENCHMARK_MAIN();
