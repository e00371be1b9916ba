#include <benchmark/benchmark.h>

#include <vector>

#include "dcfg/kernels.hpp"
#include "dcfg/rng.hpp"

namespace {

using namespace dcfg;
using namespace dcfg::kernels;

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
    CounterRng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(-1.0, 1.0);
    }
    return v;
}

// A 3x3 backbone layer on a 64 px search patch after the first stride-2 stage.
ConvGeometry conv_geometry(const benchmark::State& state) {
    ConvGeometry g;
    g.in_c = 16;
    g.out_c = 32;
    g.in_h = g.in_w = 32;
    g.k = 3;
    g.stride = 1;
    g.pad = 1;
    g.groups = static_cast<int>(state.range(0));
    g.out_h = g.out_w = 32;
    return g;
}

template <auto Forward>
void conv_forward(benchmark::State& state) {
    const ConvGeometry g = conv_geometry(state);
    const auto in = random_buffer(static_cast<std::size_t>(g.in_c) * g.in_h * g.in_w, 1);
    const auto w = random_buffer(static_cast<std::size_t>(g.out_c) * g.in_per_group() * g.k * g.k, 2);
    const auto b = random_buffer(static_cast<std::size_t>(g.out_c), 3);
    std::vector<double> out(static_cast<std::size_t>(g.out_c) * g.out_h * g.out_w);
    for (auto _ : state) {
        Forward(g, in, w, b, out);
        benchmark::DoNotOptimize(out.data());
    }
}

template <auto BackwardInput, auto BackwardWeight>
void conv_backward(benchmark::State& state) {
    const ConvGeometry g = conv_geometry(state);
    const auto in = random_buffer(static_cast<std::size_t>(g.in_c) * g.in_h * g.in_w, 1);
    const auto w = random_buffer(static_cast<std::size_t>(g.out_c) * g.in_per_group() * g.k * g.k, 2);
    const auto grad_out = random_buffer(static_cast<std::size_t>(g.out_c) * g.out_h * g.out_w, 4);
    std::vector<double> grad_in(in.size()), grad_w(w.size());
    for (auto _ : state) {
        BackwardInput(g, grad_out, w, grad_in);
        BackwardWeight(g, grad_out, in, grad_w);
        benchmark::DoNotOptimize(grad_in.data());
        benchmark::DoNotOptimize(grad_w.data());
    }
}

// Template features 8x8 against search features 16x16, 32 channels.
XcorrGeometry xcorr_geometry() { return {32, 8, 8, 16, 16}; }

template <auto Forward>
void xcorr_forward(benchmark::State& state) {
    const XcorrGeometry g = xcorr_geometry();
    const auto t = random_buffer(static_cast<std::size_t>(g.channels) * g.t_h * g.t_w, 5);
    const auto s = random_buffer(static_cast<std::size_t>(g.channels) * g.s_h * g.s_w, 6);
    std::vector<double> out(static_cast<std::size_t>(g.channels) * g.out_h() * g.out_w());
    for (auto _ : state) {
        Forward(g, t, s, out);
        benchmark::DoNotOptimize(out.data());
    }
}

template <auto Backward>
void xcorr_backward(benchmark::State& state) {
    const XcorrGeometry g = xcorr_geometry();
    const auto t = random_buffer(static_cast<std::size_t>(g.channels) * g.t_h * g.t_w, 5);
    const auto s = random_buffer(static_cast<std::size_t>(g.channels) * g.s_h * g.s_w, 6);
    const auto grad_out = random_buffer(static_cast<std::size_t>(g.channels) * g.out_h() * g.out_w(), 7);
    std::vector<double> grad_t(t.size()), grad_s(s.size());
    for (auto _ : state) {
        Backward(g, grad_out, t, s, grad_t, grad_s);
        benchmark::DoNotOptimize(grad_t.data());
    }
}

}  // namespace

BENCHMARK(conv_forward<reference::conv2d_forward>)->Name("conv2d_forward/reference")->Arg(1)->Arg(4)->Arg(8);
BENCHMARK(conv_forward<parallel::conv2d_forward>)->Name("conv2d_forward/parallel")->Arg(1)->Arg(4)->Arg(8);
BENCHMARK(conv_backward<reference::conv2d_backward_input, reference::conv2d_backward_weight>)
    ->Name("conv2d_backward/reference")
    ->Arg(1)
    ->Arg(8);
BENCHMARK(conv_backward<parallel::conv2d_backward_input, parallel::conv2d_backward_weight>)
    ->Name("conv2d_backward/parallel")
    ->Arg(1)
    ->Arg(8);
BENCHMARK(xcorr_forward<reference::xcorr_forward>)->Name("xcorr_forward/reference");
BENCHMARK(xcorr_forward<parallel::xcorr_forward>)->Name("xcorr_forward/parallel");
BENCHMARK(xcorr_backward<reference::xcorr_backward>)->Name("xcorr_backward/reference");
BENCHMARK(xcorr_backward<parallel::xcorr_backward>)->Name("xcorr_backward/parallel");

BENCHMARK_MAIN();
