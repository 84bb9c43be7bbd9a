#include "canvas_search/error.hpp"
#include "canvas_search/io.hpp"
#include "canvas_search/parallel.hpp"
#include "canvas_search/random.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <numeric>

using namespace canvas_search;

TEST(Crc32, KnownVectors) {
    EXPECT_EQ(crc32(""), 0u);
    EXPECT_EQ(crc32("123456789"), 0xCBF43926u);
    EXPECT_EQ(crc32("The quick brown fox jumps over the lazy dog"), 0x414FA339u);
}

TEST(Container, RoundTripAndChecks) {
    Container c{"TEST0003", R"({"k":1})", std::string("\x01\x02\x03\x00\x05", 5)};
    const std::string bytes = encode_container(c);
    const auto back = decode_container(bytes, "TEST", 3);
    EXPECT_EQ(back.magic, c.magic);
    EXPECT_EQ(back.header, c.header);
    EXPECT_EQ(back.payload, c.payload);

    EXPECT_THROW(decode_container(bytes, "TEST", 2), Error);
    EXPECT_THROW(decode_container(bytes, "OTHR", 3), Error);
    EXPECT_THROW(decode_container(bytes.substr(0, 10), "TEST", 3), Error);
    std::string flipped = bytes;
    flipped[17] ^= 0x01;
    EXPECT_THROW(decode_container(flipped, "TEST", 3), Error);
}

TEST(Container, FloatBlobsBoundsChecked) {
    std::string payload;
    const std::vector<float> a{1.5f, -2.0f}, b{3.25f};
    EXPECT_EQ(append_floats(payload, a), 0u);
    EXPECT_EQ(append_floats(payload, b), 8u);
    EXPECT_EQ(read_floats(payload, 8, 1), b);
    EXPECT_EQ(read_floats(payload, 0, 2), a);
    EXPECT_THROW(read_floats(payload, 8, 2), Error);
}

TEST(WriteFileAtomic, ReplacesWholeFile) {
    const auto path = std::filesystem::temp_directory_path() / "cs_atomic_test.bin";
    write_file_atomic(path, "first version, long");
    write_file_atomic(path, "second");
    EXPECT_EQ(read_file(path), "second");
    EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    std::filesystem::remove(path);
    EXPECT_THROW(read_file(path), Error);
    EXPECT_THROW(write_file_atomic("/nonexistent_dir/x/y.bin", "z"), Error);
}

TEST(ParallelFor, CoversEveryIndexOnceForAnyThreadCount) {
    for (std::size_t threads : {1u, 2u, 3u, 8u}) {
        set_thread_count(threads);
        std::vector<std::atomic<int>> hits(1003);
        parallel_for(hits.size(), 17, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) hits[i].fetch_add(1);
        });
        for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
    }
    set_thread_count(0);
    EXPECT_GE(thread_count(), 1u);
}

TEST(ParallelFor, ChunkBoundariesIndependentOfThreads) {
    auto boundaries = [](std::size_t threads) {
        set_thread_count(threads);
        std::vector<std::size_t> starts(100, 0);
        parallel_for(100, 7, [&](std::size_t b, std::size_t e) { starts[b] = e; });
        return starts;
    };
    EXPECT_EQ(boundaries(1), boundaries(5));
    set_thread_count(0);
}

TEST(ParallelFor, RethrowsAndSupportsNesting) {
    set_thread_count(4);
    EXPECT_THROW(parallel_for(50, 1, [](std::size_t b, std::size_t) {
                     if (b == 23) throw_data("boom");
                 }),
                 Error);
    std::atomic<int> total{0};
    parallel_for(8, 1, [&](std::size_t, std::size_t) {
        parallel_for(8, 1, [&](std::size_t, std::size_t) { total.fetch_add(1); });
    });
    EXPECT_EQ(total.load(), 64);
    parallel_for(0, 4, [](std::size_t, std::size_t) { FAIL(); });
    set_thread_count(0);
}

TEST(SplitMix64, ReferenceSequence) {
    // First outputs for seed 0 of the reference SplitMix64.
    SplitMix64 rng(0);
    EXPECT_EQ(rng.next(), 0xE220A8397B1DCDAFULL);
    EXPECT_EQ(rng.next(), 0x6E789E6AA1B965F4ULL);
    EXPECT_EQ(rng.next(), 0x06C45D188009454FULL);
}

TEST(SplitMix64, BelowIsUniformAndInRange) {
    SplitMix64 rng(5);
    std::vector<int> counts(6, 0);
    for (int i = 0; i < 60000; ++i) {
        const auto v = rng.below(6);
        ASSERT_LT(v, 6u);
        ++counts[v];
    }
    for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(SplitMix64, NormalMoments) {
    SplitMix64 rng(6);
    double s = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Hashing, FnvAndMixSeed) {
    EXPECT_EQ(fnv1a64(""), 0xCBF29CE484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xAF63DC4C8601EC8CULL);
    EXPECT_NE(mix_seed(1, 2), mix_seed(2, 1));
    EXPECT_EQ(mix_seed(1, 2), mix_seed(1, 2));
}
