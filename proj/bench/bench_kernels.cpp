#include "feed/kernels.hpp"
#include "feed/rng.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

namespace {

using namespace feed;

std::vector<double> random_matrix(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    return sample_normal(rng, n);
}

std::vector<int> random_bits(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    std::bernoulli_distribution coin(0.5);
    std::vector<int> out(n);
    for (auto& v : out) v = coin(rng) ? 1 : 0;
    return out;
}

template <auto Kernel>
void bm_matmul(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_matrix(n * n, 1);
    const auto b = random_matrix(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        Kernel(a, b, c, n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

template <auto Kernel>
void bm_confusion(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto g = random_bits(n, 3);
    const auto y = random_bits(n, 4);
    const auto p = random_bits(n, 5);
    for (auto _ : state) {
        auto counts = Kernel(g, y, p);
        benchmark::DoNotOptimize(counts);
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

} // namespace

BENCHMARK(bm_matmul<kernels::serial::matmul>)->Name("matmul/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_matmul<kernels::parallel::matmul>)->Name("matmul/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_confusion<kernels::serial::confusion>)->Name("confusion/serial")->Range(1 << 12, 1 << 20);
BENCHMARK(bm_confusion<kernels::parallel::confusion>)->Name("confusion/parallel")->Range(1 << 12, 1 << 20);

BENCHMARK_MAIN();
