// Serial reference versus OpenMP kernels on encoder-like layer shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "hamm/kernels.hpp"
#include "hamm/rng.hpp"

using namespace hamm;

namespace {

struct Case {
  const char* name;
  ConvGeometry g;
};

ConvGeometry geometry(int batch, int cin, int cout, int size, int k, int stride, int groups = 1) {
  ConvGeometry g;
  g.batch = batch;
  g.in_channels = cin;
  g.out_channels = cout;
  g.in_h = g.in_w = size;
  g.kernel = k;
  g.stride = stride;
  g.pad = k / 2;
  g.groups = groups;
  return g;
}

const std::vector<Case>& cases() {
  static const std::vector<Case> c = {
      {"stem7x7s2", geometry(8, 3, 8, 64, 7, 2)},
      {"bottleneck3x3", geometry(8, 32, 32, 16, 3, 1)},
      {"pointwise1x1", geometry(8, 64, 128, 16, 1, 1)},
      {"depthwise3x3", geometry(8, 64, 64, 32, 3, 1, 64)},
  };
  return c;
}

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

struct Buffers {
  std::vector<double> x, w, b, y, gx, gw, gb;
  explicit Buffers(const ConvGeometry& g)
      : x(filled(static_cast<std::size_t>(g.batch) * g.in_channels * g.in_h * g.in_w, 1)),
        w(filled(static_cast<std::size_t>(g.out_channels) * g.in_per_group() * g.kernel * g.kernel, 2)),
        b(filled(g.out_channels, 3)),
        y(filled(static_cast<std::size_t>(g.batch) * g.out_channels * g.out_h() * g.out_w(), 4)),
        gx(x.size()),
        gw(w.size()),
        gb(b.size()) {}
};

double macs(const ConvGeometry& g) {
  return static_cast<double>(g.batch) * g.out_channels * g.out_h() * g.out_w() * g.in_per_group() * g.kernel * g.kernel;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto& c = cases()[state.range(0)];
  Buffers buf(c.g);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::conv2d_forward(c.g, buf.x.data(), buf.w.data(), buf.b.data(), buf.y.data());
    else
      kernels::serial::conv2d_forward(c.g, buf.x.data(), buf.w.data(), buf.b.data(), buf.y.data());
    benchmark::DoNotOptimize(buf.y.data());
  }
  state.SetLabel(c.name);
  state.counters["MAC/s"] = benchmark::Counter(macs(c.g), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const auto& c = cases()[state.range(0)];
  Buffers buf(c.g);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::conv2d_backward_input(c.g, buf.y.data(), buf.w.data(), buf.gx.data());
      kernels::parallel::conv2d_backward_params(c.g, buf.x.data(), buf.y.data(), buf.gw.data(), buf.gb.data());
    } else {
      kernels::serial::conv2d_backward_input(c.g, buf.y.data(), buf.w.data(), buf.gx.data());
      kernels::serial::conv2d_backward_params(c.g, buf.x.data(), buf.y.data(), buf.gw.data(), buf.gb.data());
    }
    benchmark::DoNotOptimize(buf.gx.data());
    benchmark::DoNotOptimize(buf.gw.data());
  }
  state.SetLabel(c.name);
  state.counters["MAC/s"] = benchmark::Counter(2 * macs(c.g), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_Upsample(benchmark::State& state) {
  const int planes = 8 * 32, h = 28, w = 28;
  const auto x = filled(static_cast<std::size_t>(planes) * h * w, 5);
  std::vector<double> y(4 * x.size()), gx(x.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::upsample2x_forward(planes, h, w, x.data(), y.data());
      kernels::parallel::upsample2x_backward(planes, h, w, y.data(), gx.data());
    } else {
      kernels::serial::upsample2x_forward(planes, h, w, x.data(), y.data());
      kernels::serial::upsample2x_backward(planes, h, w, y.data(), gx.data());
    }
    benchmark::DoNotOptimize(gx.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/serial")->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/serial")->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Upsample<false>)->Name("upsample2x/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Upsample<true>)->Name("upsample2x/parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
