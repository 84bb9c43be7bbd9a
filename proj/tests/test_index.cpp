#include "canvas_search/error.hpp"
#include "canvas_search/index.hpp"
#include "canvas_search/parallel.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

using namespace canvas_search;

namespace {

EmbeddingSet gaussian_set(std::size_t n, std::size_t dim, std::uint64_t seed, const std::string& prefix = "v") {
    SplitMix64 rng(seed);
    EmbeddingSet s(dim);
    for (std::size_t i = 0; i < n; ++i) s.add(prefix + std::to_string(i), oracle::gaussian(rng, dim));
    return s;
}

double l2(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
    return std::sqrt(s);
}

// Rows of a random orthonormal r x dim matrix.
std::vector<std::vector<double>> random_orthonormal(SplitMix64& rng, std::size_t r, std::size_t dim) {
    std::vector<std::vector<double>> rows;
    while (rows.size() < r) {
        std::vector<double> v(dim);
        for (auto& x : v) x = rng.normal();
        for (const auto& u : rows) {
            double d = 0.0;
            for (std::size_t i = 0; i < dim; ++i) d += v[i] * u[i];
            for (std::size_t i = 0; i < dim; ++i) v[i] -= d * u[i];
        }
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        for (auto& x : v) x /= n;
        rows.push_back(v);
    }
    return rows;
}

std::string index_error(const std::string& bytes) {
    try {
        deserialize_index(bytes);
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

std::map<std::string, std::pair<std::size_t, std::size_t>> locate(const PQIndex& idx) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> where;
    for (std::size_t l = 0; l < idx.nlist(); ++l) {
        for (std::size_t i = 0; i < idx.lists()[l].ids.size(); ++i) where[idx.lists()[l].ids[i]] = {l, i};
    }
    return where;
}

} // namespace

TEST(ExactSearch, SelfQueryRanksFirstAtZero) {
    const auto s = gaussian_set(200, 16, 1);
    for (std::size_t i = 0; i < 200; i += 17) {
        const auto r = exact_search(s, s.row(i), 5);
        EXPECT_EQ(r.hits[0].image_id, s.ids[i]);
        EXPECT_EQ(r.hits[0].distance, 0.0);
    }
}

TEST(ExactSearch, TwoItemOrderAndTies) {
    EmbeddingSet s(1);
    s.add("far", std::vector<float>{0.2f});
    s.add("near", std::vector<float>{0.1f});
    s.add("a_tie", std::vector<float>{-0.1f});
    const std::vector<float> q{0.0f};
    const auto r = exact_search(s, q, 3);
    ASSERT_EQ(r.hits.size(), 3u);
    EXPECT_EQ(r.hits[0].image_id, "a_tie");
    EXPECT_EQ(r.hits[1].image_id, "near");
    EXPECT_EQ(r.hits[2].image_id, "far");
}

TEST(ExactSearch, MatchesNaiveSort) {
    const auto s = gaussian_set(500, 24, 2);
    SplitMix64 rng(3);
    for (int t = 0; t < 10; ++t) {
        const auto q = oracle::gaussian(rng, 24);
        std::vector<std::pair<double, std::string>> all;
        for (std::size_t i = 0; i < s.size(); ++i) all.emplace_back(l2(s.row(i), q), s.ids[i]);
        std::sort(all.begin(), all.end());
        const auto r = exact_search(s, q, 50);
        for (std::size_t i = 0; i < 50; ++i) {
            EXPECT_EQ(r.hits[i].image_id, all[i].second);
            EXPECT_NEAR(r.hits[i].distance, all[i].first, 1e-9);
        }
    }
}

TEST(ExactSearch, KLargerThanCorpus) {
    const auto s = gaussian_set(7, 4, 4);
    EXPECT_EQ(exact_search(s, s.row(0), 100).hits.size(), 7u);
    EXPECT_THROW(exact_search(s, s.row(0), 0), Error);
}

TEST(EmbeddingSet, SerializeRoundTripAndDimensionCheck) {
    auto s = gaussian_set(30, 5, 5);
    EXPECT_EQ(deserialize_embeddings(serialize_embeddings(s)), s);
    EXPECT_THROW(s.add("bad", std::vector<float>{1.0f}), Error);
    std::string bytes = serialize_embeddings(s);
    bytes[20] ^= 1;
    EXPECT_THROW(deserialize_embeddings(bytes), Error);
}

TEST(FitPca, ExactSubspaceReconstructs) {
    SplitMix64 rng(6);
    const std::size_t dim = 40, r = 8;
    const auto basis = random_orthonormal(rng, r, dim);
    EmbeddingSet s(dim);
    for (int i = 0; i < 300; ++i) {
        std::vector<float> x(dim, 0.5f);
        for (std::size_t k = 0; k < r; ++k) {
            const double z = rng.normal() * (k + 1);
            for (std::size_t d = 0; d < dim; ++d) x[d] += static_cast<float>(z * basis[k][d]);
        }
        s.add(std::to_string(i), x);
    }
    const auto p = fit_pca(s, r);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto back = p.unapply(p.apply(s.row(i)));
        EXPECT_LE(l2(back, s.row(i)), 1e-4);
    }
}

TEST(FitPca, RowsOrthonormal) {
    const auto s = gaussian_set(300, 32, 7);
    for (std::size_t out : {4u, 16u, 32u}) {
        const auto p = fit_pca(s, out);
        for (std::size_t a = 0; a < out; ++a) {
            for (std::size_t b = 0; b < out; ++b) {
                double d = 0.0;
                for (std::size_t i = 0; i < 32; ++i) d += static_cast<double>(p.basis[a * 32 + i]) * p.basis[b * 32 + i];
                EXPECT_NEAR(d, a == b ? 1.0 : 0.0, 1e-5);
            }
        }
    }
}

TEST(FitPca, FullRankPreservesDistances) {
    const auto s = gaussian_set(100, 20, 8);
    const auto p = fit_pca(s, 20);
    for (std::size_t i = 0; i < 30; ++i) {
        for (std::size_t j = i + 1; j < 30; ++j) {
            EXPECT_NEAR(l2(p.apply(s.row(i)), p.apply(s.row(j))), l2(s.row(i), s.row(j)), 1e-5);
        }
    }
}

TEST(FitPca, BeatsRandomProjectionOnPlantedSubspace) {
    SplitMix64 rng(9);
    const std::size_t dim = 256, r = 128;
    const auto planted = random_orthonormal(rng, r, dim);
    EmbeddingSet s(dim);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> x(dim);
        for (auto& v : x) v = 0.1 * rng.normal();
        for (std::size_t k = 0; k < r; ++k) {
            const double z = 2.0 * rng.normal();
            for (std::size_t d = 0; d < dim; ++d) x[d] += z * planted[k][d];
        }
        s.add(std::to_string(i), std::vector<float>(x.begin(), x.end()));
    }
    auto captured = [&](const std::vector<float>& basis, const std::vector<float>& mean) {
        double total = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const auto row = s.row(i);
            for (std::size_t k = 0; k < r; ++k) {
                double y = 0.0;
                for (std::size_t d = 0; d < dim; ++d) y += basis[k * dim + d] * (row[d] - mean[d]);
                total += y * y;
            }
        }
        return total;
    };
    const auto p = fit_pca(s, r);
    const auto rnd = random_orthonormal(rng, r, dim);
    std::vector<float> rnd_flat;
    for (const auto& row : rnd) rnd_flat.insert(rnd_flat.end(), row.begin(), row.end());
    EXPECT_GE(captured(p.basis, p.mean), captured(rnd_flat, p.mean));
}

TEST(FitPca, FewerVectorsThanOutputStillOrthonormal) {
    const auto s = gaussian_set(5, 16, 10);
    const auto p = fit_pca(s, 12, 3);
    for (std::size_t a = 0; a < 12; ++a) {
        double n = 0.0;
        for (std::size_t i = 0; i < 16; ++i) n += static_cast<double>(p.basis[a * 16 + i]) * p.basis[a * 16 + i];
        EXPECT_NEAR(n, 1.0, 1e-5);
    }
    EXPECT_THROW(fit_pca(s, 17), Error);
}

TEST(KMeans, DistinctPointsEachOwnCentroid) {
    const auto s = gaussian_set(12, 3, 11);
    const auto r = kmeans(s.data, 3, 12, 1);
    EXPECT_EQ(r.inertia.back(), 0.0);
    std::vector<int> used(12, 0);
    for (auto a : r.assignment) ++used[a];
    for (int u : used) EXPECT_EQ(u, 1);
}

TEST(KMeans, TwoBlobsRecoverSampleMeans) {
    SplitMix64 rng(12);
    std::vector<float> data;
    double mean_a[2] = {0, 0}, mean_b[2] = {0, 0};
    for (int i = 0; i < 400; ++i) {
        const bool a = i % 2 == 0;
        const float x = static_cast<float>((a ? -5.0 : 5.0) + 0.5 * rng.normal());
        const float y = static_cast<float>((a ? 2.0 : -3.0) + 0.5 * rng.normal());
        data.push_back(x);
        data.push_back(y);
        (a ? mean_a : mean_b)[0] += x / 200.0;
        (a ? mean_a : mean_b)[1] += y / 200.0;
    }
    const auto r = kmeans(data, 2, 2, 3);
    const int ia = r.centroids[0] < 0 ? 0 : 1;
    EXPECT_NEAR(r.centroids[ia * 2], mean_a[0], 0.1);
    EXPECT_NEAR(r.centroids[ia * 2 + 1], mean_a[1], 0.1);
    EXPECT_NEAR(r.centroids[(1 - ia) * 2], mean_b[0], 0.1);
    EXPECT_NEAR(r.centroids[(1 - ia) * 2 + 1], mean_b[1], 0.1);
}

TEST(KMeans, InertiaNonIncreasing) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto s = gaussian_set(600, 8, 100 + seed);
        const auto r = kmeans(s.data, 8, 20, seed, 40);
        for (std::size_t i = 1; i < r.inertia.size(); ++i) EXPECT_LE(r.inertia[i], r.inertia[i - 1] * (1 + 1e-12));
    }
}

TEST(KMeans, RejectsTooManyClusters) {
    const auto s = gaussian_set(3, 2, 13);
    EXPECT_THROW(kmeans(s.data, 2, 4, 0), Error);
}

TEST(BuildIndex, SingleVectorReconstructsExactly) {
    EmbeddingSet s(4);
    s.add("only", std::vector<float>{0.5f, -1.0f, 2.0f, 0.25f});
    const auto idx = build_index(s, {.proj_dim = 4, .nlist = 1, .m = 1});
    ASSERT_EQ(idx.size(), 1u);
    const auto rec = idx.projection().unapply(idx.reconstruct(0, 0));
    EXPECT_LE(l2(rec, s.row(0)), 1e-6);
    const auto r = idx.search(s.row(0), 1, 1);
    EXPECT_EQ(r.hits[0].image_id, "only");
    EXPECT_LE(r.hits[0].distance, 1e-6);
}

TEST(BuildIndex, ShrinksCellsAndCodewordsWithWarnings) {
    const auto s = gaussian_set(40, 16, 14);
    std::vector<std::string> warnings;
    const auto idx = build_index(s, {.proj_dim = 16, .nlist = 64, .m = 4}, &warnings);
    EXPECT_EQ(idx.nlist(), 40u);
    EXPECT_EQ(idx.pq().ksub(), 40u);
    EXPECT_EQ(warnings.size(), 2u);
    EXPECT_EQ(idx.size(), 40u);
}

TEST(BuildIndex, RejectsBadConfigAndCorpus) {
    const auto s = gaussian_set(40, 16, 15);
    EXPECT_THROW(build_index(s, {.proj_dim = 32, .nlist = 4, .m = 4}), Error);
    EXPECT_THROW(build_index(s, {.proj_dim = 16, .nlist = 4, .m = 5}), Error);
    EXPECT_THROW(build_index(EmbeddingSet(16), {.proj_dim = 16, .nlist = 4, .m = 4}), Error);
    EmbeddingSet dup(2);
    dup.add("a", std::vector<float>{1, 2});
    dup.add("a", std::vector<float>{3, 4});
    EXPECT_THROW(build_index(dup, {.proj_dim = 2, .nlist = 1, .m = 1}), Error);
}

TEST(BuildIndex, EveryIdInExactlyOneList) {
    const auto s = gaussian_set(1500, 32, 16);
    const auto idx = build_index(s, {.proj_dim = 32, .nlist = 16, .m = 8});
    const auto where = locate(idx);
    EXPECT_EQ(where.size(), s.size());
    EXPECT_EQ(idx.size(), s.size());
    for (const auto& l : idx.lists()) EXPECT_EQ(l.codes.size(), l.ids.size() * 8);
}

TEST(BuildIndex, DeterministicAcrossThreadCounts) {
    const auto s = gaussian_set(3000, 64, 17);
    const IndexConfig cfg{.proj_dim = 32, .nlist = 24, .m = 8, .seed = 5};
    set_thread_count(1);
    const std::string one = serialize_index(build_index(s, cfg));
    set_thread_count(4);
    const std::string four = serialize_index(build_index(s, cfg));
    set_thread_count(0);
    const std::string again = serialize_index(build_index(s, cfg));
    EXPECT_EQ(one, four);
    EXPECT_EQ(one, again);
    IndexConfig other = cfg;
    other.seed = 6;
    EXPECT_NE(one, serialize_index(build_index(s, other)));
}

TEST(BuildIndex, DecodeIsCentroidPlusResidualBitExact) {
    const auto s = gaussian_set(2000, 48, 18);
    const auto idx = build_index(s, {.proj_dim = 32, .nlist = 16, .m = 8});
    for (std::size_t i = 0; i < s.size(); i += 7) {
        const auto y = idx.projection().apply(s.row(i));
        const auto [list, code] = idx.encode(y);
        std::vector<float> residual(32);
        idx.pq().decode(code, residual);
        const auto dec = idx.decode(list, code);
        const auto c = idx.coarse_centroid(list);
        for (std::size_t d = 0; d < 32; ++d) EXPECT_EQ(dec[d], c[d] + residual[d]);
    }
}

TEST(BuildIndex, ResidualCodingHelpsInAggregate) {
    const auto s = gaussian_set(3000, 32, 19);
    const auto idx = build_index(s, {.proj_dim = 32, .nlist = 32, .m = 8});
    double coarse_err = 0.0, full_err = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto y = idx.projection().apply(s.row(i));
        const auto [list, code] = idx.encode(y);
        coarse_err += l2(y, idx.coarse_centroid(list));
        full_err += l2(y, idx.decode(list, code));
    }
    EXPECT_LT(full_err, coarse_err);
}

TEST(BuildIndex, ReconstructionErrorFallsWithMoreSubquantizers) {
    const auto s = gaussian_set(4000, 64, 20);
    double prev = INFINITY;
    for (std::size_t m : {4u, 8u, 16u}) {
        const auto idx = build_index(s, {.proj_dim = 64, .nlist = 16, .m = m});
        const auto where = locate(idx);
        double err = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const auto [l, off] = where.at(s.ids[i]);
            err += l2(idx.projection().apply(s.row(i)), idx.reconstruct(l, off));
        }
        err /= static_cast<double>(s.size());
        EXPECT_LT(err, prev) << "m=" << m;
        prev = err;
    }
}

TEST(Search, AdcDistanceMatchesDecodedVector) {
    const auto s = gaussian_set(1500, 32, 21);
    const auto idx = build_index(s, {.proj_dim = 32, .nlist = 8, .m = 8});
    const auto where = locate(idx);
    SplitMix64 rng(22);
    for (int t = 0; t < 5; ++t) {
        const auto q = oracle::gaussian(rng, 32);
        const auto qp = idx.projection().apply(q);
        const auto r = idx.search(q, s.size(), idx.nlist());
        ASSERT_EQ(r.hits.size(), s.size());
        for (const auto& h : r.hits) {
            const auto [l, off] = where.at(h.image_id);
            EXPECT_NEAR(h.distance, l2(qp, idx.reconstruct(l, off)), 1e-4);
        }
        for (std::size_t i = 1; i < r.hits.size(); ++i) EXPECT_LE(r.hits[i - 1].distance, r.hits[i].distance);
    }
}

TEST(Search, SelfQueriesRankFirst) {
    const auto s = gaussian_set(5000, 128, 23);
    const auto idx = build_index(s, {.proj_dim = 128, .nlist = 64, .m = 16});
    int hits = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        const auto r = idx.search(s.row(i * 5), 1, idx.nlist());
        hits += r.hits[0].image_id == s.ids[i * 5];
    }
    EXPECT_GE(hits, 950);
}

TEST(Search, KLargerThanCorpusReturnsEverything) {
    const auto s = gaussian_set(30, 8, 24);
    const auto idx = build_index(s, {.proj_dim = 8, .nlist = 4, .m = 2});
    EXPECT_EQ(idx.search(s.row(0), 1000, 4).hits.size(), 30u);
    EXPECT_THROW(idx.search(s.row(0), 0, 4), Error);
    EXPECT_THROW(idx.search(s.row(0), 5, 5), Error);
    EXPECT_THROW(idx.search(s.row(0), 5, 0), Error);
}

TEST(Search, OneVectorPerCellReproducesExactOrdering) {
    const auto s = gaussian_set(24, 8, 25);
    const auto idx = build_index(s, {.proj_dim = 8, .nlist = 24, .m = 4});
    ASSERT_EQ(idx.nlist(), 24u);
    SplitMix64 rng(26);
    for (int t = 0; t < 20; ++t) {
        const auto q = oracle::gaussian(rng, 8);
        const auto exact = exact_search(s, q, 24);
        const auto approx = idx.search(q, 24, 24);
        for (std::size_t i = 0; i < 24; ++i) {
            EXPECT_EQ(approx.hits[i].image_id, exact.hits[i].image_id);
            EXPECT_NEAR(approx.hits[i].distance, exact.hits[i].distance, 1e-4);
        }
    }
}

TEST(Serialize, RoundTrip) {
    const auto s = gaussian_set(800, 24, 27);
    auto idx = build_index(s, {.proj_dim = 16, .nlist = 8, .m = 4, .seed = 3});
    idx.set_meta("encoder", "bypass");
    const auto back = deserialize_index(serialize_index(idx));
    EXPECT_EQ(back, idx);
    EXPECT_EQ(back.meta().at("encoder"), "bypass");
    const auto path = std::filesystem::temp_directory_path() / "cs_index_test.cspq";
    save_index(idx, path);
    EXPECT_EQ(load_index(path), idx);
    std::filesystem::remove(path);
    const auto q = s.row(3);
    EXPECT_EQ(back.search(q, 10, 8), idx.search(q, 10, 8));
}

TEST(Serialize, CorruptionTruncationAndVersion) {
    const auto s = gaussian_set(200, 8, 28);
    const std::string bytes = serialize_index(build_index(s, {.proj_dim = 8, .nlist = 4, .m = 2}));
    for (std::size_t pos : {std::size_t{12}, bytes.size() / 2, bytes.size() - 5}) {
        std::string bad = bytes;
        bad[pos] ^= 0x10;
        EXPECT_NE(index_error(bad).find("CRC"), std::string::npos) << pos;
    }
    EXPECT_FALSE(index_error(bytes.substr(0, bytes.size() - 1)).empty());
    std::string newer = bytes;
    newer.replace(4, 4, "0007");
    EXPECT_NE(index_error(newer).find("unsupported version 7"), std::string::npos);
    std::string other = bytes;
    other.replace(0, 4, "CSEX");
    EXPECT_NE(index_error(other).find("magic"), std::string::npos);
}

TEST(SuggestedNlist, ScalesWithCorpus) {
    EXPECT_EQ(suggested_nlist(100), 64u);
    EXPECT_EQ(suggested_nlist(10'000), 100u);
    EXPECT_EQ(suggested_nlist(999'999), 999u);
    EXPECT_EQ(suggested_nlist(1'000'000), 1600u);
    EXPECT_EQ(suggested_nlist(50'000'000), 1600u);
}
