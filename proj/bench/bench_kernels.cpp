#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "gasca/kernels.hpp"

using namespace gasca::kernels;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(g);
  return v;
}

// A ConvMLP-sized first layer: batch 16, 1 -> 8 channels, 32x32, 5x5.
ConvGeometry geometry(benchmark::State& state) {
  ConvGeometry g;
  g.batch = 16;
  g.in_ch = static_cast<std::size_t>(state.range(0));
  g.in_h = g.in_w = 32;
  g.out_ch = 8;
  g.k_h = g.k_w = 5;
  return g;
}

template <auto Fn>
void conv_forward(benchmark::State& state) {
  const ConvGeometry g = geometry(state);
  const auto in = filled(g.input_size(), 1), w = filled(g.weight_size(), 2), b = filled(g.out_ch, 3);
  std::vector<double> out(g.output_size());
  for (auto _ : state) {
    Fn(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.counters["MAC/s"] =
      benchmark::Counter(static_cast<double>(conv2d_forward_macs(g)), benchmark::Counter::kIsIterationInvariantRate);
}

template <auto Fn>
void conv_backward_input(benchmark::State& state) {
  const ConvGeometry g = geometry(state);
  const auto dout = filled(g.output_size(), 4), w = filled(g.weight_size(), 5);
  std::vector<double> din(g.input_size());
  for (auto _ : state) {
    Fn(g, dout, w, din);
    benchmark::DoNotOptimize(din.data());
  }
}

template <auto Fn>
void mm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n * n, 6), b = filled(n * n, 7);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Fn(n, n, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["FLOP/s"] =
      benchmark::Counter(2.0 * static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate);
}

}  // namespace

BENCHMARK(conv_forward<serial::conv2d_forward>)->Name("conv_forward/serial")->Arg(1)->Arg(8);
BENCHMARK(conv_forward<conv2d_forward>)->Name("conv_forward/omp")->Arg(1)->Arg(8);
BENCHMARK(conv_backward_input<serial::conv2d_backward_input>)->Name("conv_backward_input/serial")->Arg(1)->Arg(8);
BENCHMARK(conv_backward_input<conv2d_backward_input>)->Name("conv_backward_input/omp")->Arg(1)->Arg(8);
BENCHMARK(mm<serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(mm<matmul>)->Name("matmul/omp")->Arg(64)->Arg(256);
BENCHMARK_MAIN();
