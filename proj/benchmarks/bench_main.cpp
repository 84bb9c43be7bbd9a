#include "canvas_search/encoder.hpp"
#include "canvas_search/index.hpp"
#include "canvas_search/random.hpp"
#include "canvas_search/synthetic.hpp"
#include "canvas_search/tensor.hpp"

#include <benchmark/benchmark.h>

using namespace canvas_search;

namespace {

Tensor3 random_tensor(std::uint64_t seed, int c, int h, int w) {
    SplitMix64 rng(seed);
    Tensor3 t(c, h, w);
    for (auto& v : t.data) v = static_cast<float>(rng.normal());
    return t;
}

EmbeddingSet gaussian_set(std::size_t n, std::size_t dim, std::uint64_t seed) {
    SplitMix64 rng(seed);
    EmbeddingSet s(dim);
    std::vector<float> v(dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& x : v) x = static_cast<float>(rng.normal());
        s.add("v" + std::to_string(i), v);
    }
    return s;
}

void BM_QueryTensor(benchmark::State& state) {
    const auto table = ClassEmbeddingTable::synthetic(synthetic_vocabulary(20), 256, 1);
    const auto queries = generate_queries({.classes = 20, .images = 1, .seed = 2}, 64);
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(build_query_tensor(queries[i++ % queries.size()].canvas, table));
    }
}
BENCHMARK(BM_QueryTensor)->Unit(benchmark::kMicrosecond);

void BM_Conv3x3(benchmark::State& state) {
    const int cin = static_cast<int>(state.range(0)), cout = static_cast<int>(state.range(1));
    const int side = static_cast<int>(state.range(2));
    const auto in = random_tensor(1, cin, side, side);
    SplitMix64 rng(2);
    ConvKernel k{cout, cin, std::vector<float>(static_cast<std::size_t>(cout) * cin * 9), std::vector<float>(cout)};
    for (auto& v : k.weights) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(in, k));
    state.counters["GFLOP/s"] = benchmark::Counter(2.0 * cin * cout * 9 * side * side * state.iterations(),
                                                   benchmark::Counter::kIsRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Conv3x3)
    ->Args({256, 384, 31})
    ->Args({384, 512, 15})
    ->Args({512, 832, 7})
    ->Unit(benchmark::kMillisecond);

void BM_EncoderForward(benchmark::State& state) {
    const auto w = init_weights(0);
    const auto in = random_tensor(3, 256, 31, 31);
    for (auto _ : state) benchmark::DoNotOptimize(encoder_forward(in, w));
}
BENCHMARK(BM_EncoderForward)->Unit(benchmark::kMillisecond);

void BM_AdcSearch(benchmark::State& state) {
    static const PQIndex index = build_index(gaussian_set(100000, 128, 4), {.proj_dim = 128, .nlist = 64, .m = 16});
    const auto queries = gaussian_set(64, 128, 5);
    const auto nprobe = static_cast<std::size_t>(state.range(0));
    std::size_t i = 0;
    for (auto _ : state) benchmark::DoNotOptimize(index.search(queries.row(i++ % 64), 10, nprobe));
}
BENCHMARK(BM_AdcSearch)->Arg(1)->Arg(8)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ExactSearch(benchmark::State& state) {
    const auto corpus = gaussian_set(static_cast<std::size_t>(state.range(0)), 128, 6);
    const auto queries = gaussian_set(16, 128, 7);
    std::size_t i = 0;
    for (auto _ : state) benchmark::DoNotOptimize(exact_search(corpus, queries.row(i++ % 16), 10));
}
BENCHMARK(BM_ExactSearch)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

} // namespace
BENCHMARK_MAIN();
