// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "rnlab/kernels.hpp"

namespace k = rnlab::kernels;

namespace {

std::vector<double> random_values(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

template <bool Parallel>
void BM_ChannelMoments(benchmark::State& state) {
    const k::ChannelLayout layout{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
                                  16};
    const auto x = random_values(layout.batch * layout.channels * layout.inner, 1);
    std::vector<double> mu(layout.channels), var(layout.channels);
    for (auto _ : state) {
        if constexpr (Parallel)
            k::parallel::channel_moments(x, layout, mu, var);
        else
            k::serial::channel_moments(x, layout, mu, var);
        benchmark::DoNotOptimize(var.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(x.size()));
}

template <bool Parallel>
void BM_NormalizeChannels(benchmark::State& state) {
    const k::ChannelLayout layout{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
                                  16};
    const auto x = random_values(layout.batch * layout.channels * layout.inner, 2);
    std::vector<double> mu(layout.channels, 0.1), var(layout.channels, 2.0), out(x.size());
    for (auto _ : state) {
        if constexpr (Parallel)
            k::parallel::normalize_channels(x, layout, mu, var, 1e-5, out);
        else
            k::serial::normalize_channels(x, layout, mu, var, 1e-5, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(x.size()));
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_values(n * n, 3), b = random_values(n * n, 4);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        if constexpr (Parallel)
            k::parallel::gemm(a, b, c, {n, n, n});
        else
            k::serial::gemm(a, b, c, {n, n, n});
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n * n));
}

template <bool Parallel>
void BM_SoftmaxRows(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto in = random_values(c * c, 5);
    std::vector<double> out(c * c);
    for (auto _ : state) {
        if constexpr (Parallel)
            k::parallel::softmax_rows(in, out, c, c);
        else
            k::serial::softmax_rows(in, out, c, c);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(c * c));
}

}  // namespace

BENCHMARK(BM_ChannelMoments<false>)->Args({64, 64})->Args({256, 512});
BENCHMARK(BM_ChannelMoments<true>)->Args({64, 64})->Args({256, 512});
BENCHMARK(BM_NormalizeChannels<false>)->Args({64, 64})->Args({256, 512});
BENCHMARK(BM_NormalizeChannels<true>)->Args({64, 64})->Args({256, 512});
BENCHMARK(BM_Gemm<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_SoftmaxRows<false>)->Arg(64)->Arg(512);
BENCHMARK(BM_SoftmaxRows<true>)->Arg(64)->Arg(512);

BENCHMARK_MAIN();
