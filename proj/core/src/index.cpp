#include "canvas_search/index.hpp"

#include "canvas_search/error.hpp"
#include "canvas_search/io.hpp"
#include "canvas_search/parallel.hpp"
#include "canvas_search/random.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <unordered_set>

namespace canvas_search {

using nlohmann::json;

namespace {

// Float squared distance with eight fixed partial sums; the fixed layout keeps
// it vectorizable and the summation order reproducible.
float l2sq(const float* a, const float* b, std::size_t d) {
    float acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= d; i += 8) {
        for (int j = 0; j < 8; ++j) {
            const float t = a[i + j] - b[i + j];
            acc[j] += t * t;
        }
    }
    for (; i < d; ++i) {
        const float t = a[i] - b[i];
        acc[0] += t * t;
    }
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

constexpr std::size_t kGrain = 256;

} // namespace

void EmbeddingSet::add(std::string id, std::span<const float> v) {
    if (v.size() != dim) {
        throw_data("embedding for '" + id + "' has dimension " + std::to_string(v.size()) +
                   ", expected " + std::to_string(dim));
    }
    ids.push_back(std::move(id));
    data.insert(data.end(), v.begin(), v.end());
}

double squared_l2(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw_usage("distance between vectors of different length");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double t = static_cast<double>(a[i]) - b[i];
        s += t * t;
    }
    return s;
}

namespace {

bool hit_less(const Hit& a, const Hit& b) {
    if (a.distance != b.distance) {
        return a.distance < b.distance;
    }
    return a.image_id < b.image_id;
}

} // namespace

RetrievalResult exact_search(const EmbeddingSet& corpus, std::span<const float> query, std::size_t k) {
    if (k < 1) {
        throw_usage("k must be at least 1");
    }
    if (query.size() != corpus.dim) {
        throw_usage("query dimension " + std::to_string(query.size()) + " does not match corpus " +
                    std::to_string(corpus.dim));
    }
    const std::size_t n = corpus.size();
    std::vector<Hit> all(n);
    parallel_for(n, kGrain, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            all[i] = {corpus.ids[i], std::sqrt(squared_l2(corpus.row(i), query))};
        }
    });
    const std::size_t keep = std::min(k, n);
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), hit_less);
    all.resize(keep);
    return {std::move(all)};
}

std::vector<float> Projection::apply(std::span<const float> x) const {
    if (x.size() != input_dim) {
        throw_usage("projection expects dimension " + std::to_string(input_dim) + ", got " +
                    std::to_string(x.size()));
    }
    std::vector<double> centered(input_dim);
    for (std::size_t i = 0; i < input_dim; ++i) {
        centered[i] = static_cast<double>(x[i]) - mean[i];
    }
    std::vector<float> y(output_dim);
    for (std::size_t j = 0; j < output_dim; ++j) {
        const float* row = basis.data() + j * input_dim;
        double s = 0.0;
        for (std::size_t i = 0; i < input_dim; ++i) {
            s += row[i] * centered[i];
        }
        y[j] = static_cast<float>(s);
    }
    return y;
}

std::vector<float> Projection::unapply(std::span<const float> y) const {
    if (y.size() != output_dim) {
        throw_usage("unapply expects dimension " + std::to_string(output_dim));
    }
    std::vector<double> acc(mean.begin(), mean.end());
    for (std::size_t j = 0; j < output_dim; ++j) {
        const float* row = basis.data() + j * input_dim;
        for (std::size_t i = 0; i < input_dim; ++i) {
            acc[i] += static_cast<double>(row[i]) * y[j];
        }
    }
    return {acc.begin(), acc.end()};
}

Projection fit_pca(const EmbeddingSet& vectors, std::size_t out_dim, std::uint64_t seed) {
    const std::size_t n = vectors.size();
    const std::size_t D = vectors.dim;
    if (n == 0) {
        throw_usage("PCA needs at least one vector");
    }
    if (out_dim == 0 || out_dim > D) {
        throw_usage("projection dimension " + std::to_string(out_dim) + " exceeds input dimension " +
                    std::to_string(D));
    }

    Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(D));
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = vectors.row(i);
        for (std::size_t d = 0; d < D; ++d) mu[d] += r[d];
    }
    mu /= static_cast<double>(n);

    // Principal directions, strongest first, as rows.
    std::vector<Eigen::VectorXd> dirs;
    if (D <= n) {
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(D, D);
        constexpr std::size_t kChunk = 1024;
        Eigen::MatrixXd block;
        for (std::size_t b = 0; b < n; b += kChunk) {
            const std::size_t rows = std::min(kChunk, n - b);
            block.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(D));
            for (std::size_t i = 0; i < rows; ++i) {
                const auto r = vectors.row(b + i);
                for (std::size_t d = 0; d < D; ++d) block(i, d) = r[d] - mu[d];
            }
            cov.noalias() += block.transpose() * block;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        if (es.info() != Eigen::Success) {
            throw_internal("PCA eigendecomposition failed");
        }
        for (std::size_t j = 0; j < out_dim; ++j) {
            dirs.push_back(es.eigenvectors().col(static_cast<Eigen::Index>(D - 1 - j)));
        }
    } else {
        Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(D));
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = vectors.row(i);
            for (std::size_t d = 0; d < D; ++d) X(i, d) = r[d] - mu[d];
        }
        const Eigen::MatrixXd G = X * X.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
        if (es.info() != Eigen::Success) {
            throw_internal("PCA eigendecomposition failed");
        }
        const double top = std::max(es.eigenvalues()[static_cast<Eigen::Index>(n - 1)], 0.0);
        for (std::size_t j = 0; j < std::min(out_dim, n); ++j) {
            const double lambda = es.eigenvalues()[static_cast<Eigen::Index>(n - 1 - j)];
            if (!(lambda > top * 1e-10) || lambda <= 0.0) {
                break;
            }
            Eigen::VectorXd v = X.transpose() * es.eigenvectors().col(static_cast<Eigen::Index>(n - 1 - j));
            v.normalize();
            dirs.push_back(std::move(v));
        }
    }

    // Beyond the data rank, any orthonormal completion is a valid PCA basis.
    SplitMix64 rng(mix_seed(seed, 0x50CAULL));
    while (dirs.size() < out_dim) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(D));
        for (std::size_t d = 0; d < D; ++d) v[d] = rng.normal();
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& u : dirs) v -= u.dot(v) * u;
        }
        const double norm = v.norm();
        if (norm > 1e-6) {
            dirs.push_back(v / norm);
        }
    }

    Projection p;
    p.input_dim = D;
    p.output_dim = out_dim;
    p.mean.resize(D);
    for (std::size_t d = 0; d < D; ++d) p.mean[d] = static_cast<float>(mu[d]);
    p.basis.resize(out_dim * D);
    for (std::size_t j = 0; j < out_dim; ++j) {
        auto& v = dirs[j];
        // Sign convention: the largest-magnitude coordinate is positive.
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0) v = -v;
        for (std::size_t d = 0; d < D; ++d) p.basis[j * D + d] = static_cast<float>(v[d]);
    }
    return p;
}

std::size_t nearest_centroid(std::span<const float> x, std::span<const float> centroids, std::size_t dim) {
    const std::size_t k = centroids.size() / dim;
    std::size_t best = 0;
    float best_d = std::numeric_limits<float>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
        const float d = l2sq(x.data(), centroids.data() + c * dim, dim);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

KMeansResult kmeans(std::span<const float> data, std::size_t dim, std::size_t k, std::uint64_t seed,
                    int max_iters) {
    if (dim == 0 || data.size() % dim != 0) {
        throw_usage("kmeans: data length is not a multiple of the dimension");
    }
    const std::size_t n = data.size() / dim;
    if (k == 0 || k > n) {
        throw_usage("kmeans: k=" + std::to_string(k) + " but only " + std::to_string(n) + " vectors");
    }
    auto point = [&](std::size_t i) { return data.data() + i * dim; };

    KMeansResult res;
    res.k = k;
    res.dim = dim;
    res.centroids.resize(k * dim);
    res.assignment.assign(n, 0);

    // k-means++ seeding.
    SplitMix64 rng(mix_seed(seed, 0x4B4D45414E53ULL));
    std::vector<double> mind(n, std::numeric_limits<double>::infinity());
    std::vector<char> chosen(n, 0);
    auto take = [&](std::size_t c, std::size_t idx) {
        chosen[idx] = 1;
        std::copy_n(point(idx), dim, res.centroids.data() + c * dim);
        const float* cen = res.centroids.data() + c * dim;
        parallel_for(n, 4096, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                mind[i] = std::min(mind[i], static_cast<double>(l2sq(point(i), cen, dim)));
            }
        });
    };
    take(0, rng.below(n));
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : mind[i];
        std::size_t pick = n;
        if (total > 0.0) {
            double r = rng.uniform() * total;
            for (std::size_t i = 0; i < n; ++i) {
                if (chosen[i] || mind[i] <= 0.0) continue;
                pick = i;
                r -= mind[i];
                if (r < 0.0) break;
            }
        }
        if (pick == n) {
            // Every remaining point coincides with a centroid.
            for (std::size_t i = 0; i < n; ++i) {
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
            }
        }
        take(c, pick);
    }

    std::vector<float> dist(n);
    std::vector<std::uint32_t> prev;
    auto assign_all = [&] {
        parallel_for(n, kGrain, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                const std::size_t c = nearest_centroid({point(i), dim}, res.centroids, dim);
                res.assignment[i] = static_cast<std::uint32_t>(c);
                dist[i] = l2sq(point(i), res.centroids.data() + c * dim, dim);
            }
        });
        double inertia = 0.0;
        for (float d : dist) inertia += d;
        res.inertia.push_back(inertia);
    };

    std::vector<double> sums(k * dim);
    std::vector<std::size_t> counts(k);
    for (int it = 0; it < max_iters; ++it) {
        assign_all();
        if (!prev.empty() && prev == res.assignment) {
            return res;
        }
        prev = res.assignment;

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = res.assignment[i];
            ++counts[c];
            const float* p = point(i);
            double* s = sums.data() + c * dim;
            for (std::size_t d = 0; d < dim; ++d) s[d] += p[d];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // Move the empty centroid onto the worst-served point.
                const auto far = static_cast<std::size_t>(
                        std::max_element(dist.begin(), dist.end()) - dist.begin());
                std::copy_n(point(far), dim, res.centroids.data() + c * dim);
                dist[far] = 0.0f;
                continue;
            }
            const double inv = 1.0 / static_cast<double>(counts[c]);
            for (std::size_t d = 0; d < dim; ++d) {
                res.centroids[c * dim + d] = static_cast<float>(sums[c * dim + d] * inv);
            }
        }
    }
    assign_all();
    return res;
}

ProductQuantizer::ProductQuantizer(std::size_t dim, std::size_t m, std::size_t ksub)
        : dim_(dim), m_(m), ksub_(ksub) {
    if (m == 0 || dim == 0 || dim % m != 0) {
        throw_usage("PQ: dimension " + std::to_string(dim) + " is not divisible by m=" + std::to_string(m));
    }
    if (ksub == 0 || ksub > 256) {
        throw_usage("PQ: codebook size must be in [1, 256] for one-byte codes");
    }
    dsub_ = dim / m;
    centroids_.assign(m * ksub * dsub_, 0.0f);
}

void ProductQuantizer::train(std::span<const float> data, std::size_t n, std::uint64_t seed, int iters) {
    if (data.size() != n * dim_) {
        throw_usage("PQ train: data size mismatch");
    }
    if (n < ksub_) {
        throw_usage("PQ train: need at least " + std::to_string(ksub_) + " vectors, got " + std::to_string(n));
    }
    // Subquantizers are independent; each writes only its own codebook.
    parallel_for(m_, 1, [&](std::size_t b, std::size_t e) {
        std::vector<float> sub(n * dsub_);
        for (std::size_t j = b; j < e; ++j) {
            for (std::size_t i = 0; i < n; ++i) {
                std::copy_n(data.data() + i * dim_ + j * dsub_, dsub_, sub.data() + i * dsub_);
            }
            auto km = kmeans(sub, dsub_, ksub_, mix_seed(seed, j), iters);
            std::copy(km.centroids.begin(), km.centroids.end(), centroids_.begin() + j * ksub_ * dsub_);
        }
    });
}

void ProductQuantizer::encode(std::span<const float> x, std::span<std::uint8_t> code) const {
    for (std::size_t j = 0; j < m_; ++j) {
        const std::span<const float> book{centroids_.data() + j * ksub_ * dsub_, ksub_ * dsub_};
        code[j] = static_cast<std::uint8_t>(nearest_centroid(x.subspan(j * dsub_, dsub_), book, dsub_));
    }
}

void ProductQuantizer::decode(std::span<const std::uint8_t> code, std::span<float> out) const {
    for (std::size_t j = 0; j < m_; ++j) {
        const auto w = codeword(j, code[j]);
        std::copy(w.begin(), w.end(), out.begin() + static_cast<std::ptrdiff_t>(j * dsub_));
    }
}

void ProductQuantizer::distance_table(std::span<const float> x, std::span<float> table) const {
    for (std::size_t j = 0; j < m_; ++j) {
        for (std::size_t k = 0; k < ksub_; ++k) {
            table[j * ksub_ + k] = l2sq(x.data() + j * dsub_, codeword(j, k).data(), dsub_);
        }
    }
}

std::size_t suggested_nlist(std::size_t corpus_size) {
    if (corpus_size >= 1'000'000) {
        return 1600;
    }
    // Roughly sqrt(n), never below the desk default of 64.
    const auto s = static_cast<std::size_t>(std::sqrt(static_cast<double>(corpus_size)));
    return std::clamp<std::size_t>(s, 64, 1600);
}

std::size_t PQIndex::size() const {
    std::size_t n = 0;
    for (const auto& l : lists_) n += l.ids.size();
    return n;
}

std::size_t PQIndex::assign(std::span<const float> projected) const {
    return nearest_centroid(projected, coarse_, proj_dim());
}

std::pair<std::size_t, std::vector<std::uint8_t>> PQIndex::encode(std::span<const float> projected) const {
    const std::size_t list = assign(projected);
    const auto c = coarse_centroid(list);
    std::vector<float> residual(proj_dim());
    for (std::size_t d = 0; d < residual.size(); ++d) residual[d] = projected[d] - c[d];
    std::vector<std::uint8_t> code(pq_.code_size());
    pq_.encode(residual, code);
    return {list, std::move(code)};
}

std::vector<float> PQIndex::decode(std::size_t list, std::span<const std::uint8_t> code) const {
    std::vector<float> out(proj_dim());
    pq_.decode(code, out);
    const auto c = coarse_centroid(list);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] = c[d] + out[d];
    return out;
}

std::vector<float> PQIndex::reconstruct(std::size_t list, std::size_t offset) const {
    const auto& l = lists_.at(list);
    if (offset >= l.ids.size()) {
        throw_usage("reconstruct: offset out of range");
    }
    return decode(list, {l.codes.data() + offset * pq_.code_size(), pq_.code_size()});
}

RetrievalResult PQIndex::search(std::span<const float> query, std::size_t k, std::size_t nprobe) const {
    if (k < 1) {
        throw_usage("k must be at least 1");
    }
    if (nprobe < 1 || nprobe > nlist()) {
        throw_usage("nprobe must be in [1, " + std::to_string(nlist()) + "], got " + std::to_string(nprobe));
    }
    const auto q = projection_.apply(query);
    const std::size_t dim = proj_dim();

    std::vector<std::pair<float, std::size_t>> cells(nlist());
    for (std::size_t c = 0; c < nlist(); ++c) {
        cells[c] = {l2sq(q.data(), coarse_.data() + c * dim, dim), c};
    }
    std::partial_sort(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(nprobe), cells.end());

    struct Candidate {
        float d2;
        const std::string* id;
    };
    std::vector<Candidate> cand;
    std::vector<float> residual(dim);
    std::vector<float> table(pq_.m() * pq_.ksub());
    const std::size_t m = pq_.m();
    const std::size_t ksub = pq_.ksub();
    for (std::size_t p = 0; p < nprobe; ++p) {
        const std::size_t list = cells[p].second;
        const auto& l = lists_[list];
        if (l.ids.empty()) continue;
        const auto c = coarse_centroid(list);
        for (std::size_t d = 0; d < dim; ++d) residual[d] = q[d] - c[d];
        pq_.distance_table(residual, table);
        const std::uint8_t* code = l.codes.data();
        for (std::size_t i = 0; i < l.ids.size(); ++i, code += m) {
            float s = 0.0f;
            for (std::size_t j = 0; j < m; ++j) s += table[j * ksub + code[j]];
            cand.push_back({s, &l.ids[i]});
        }
    }
    auto less = [](const Candidate& a, const Candidate& b) {
        if (a.d2 != b.d2) return a.d2 < b.d2;
        return *a.id < *b.id;
    };
    const std::size_t keep = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), less);
    RetrievalResult r;
    r.hits.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        r.hits.push_back({*cand[i].id, std::sqrt(std::max(0.0, static_cast<double>(cand[i].d2)))});
    }
    return r;
}

PQIndex build_index(const EmbeddingSet& corpus, const IndexConfig& config, std::vector<std::string>* warnings) {
    const std::size_t n = corpus.size();
    if (n == 0) {
        throw_data("cannot build an index from an empty corpus");
    }
    {
        std::unordered_set<std::string_view> seen;
        for (const auto& id : corpus.ids) {
            if (!seen.insert(id).second) {
                throw_data("duplicate image_id '" + id + "' in corpus");
            }
        }
    }
    if (corpus.ids.size() != n) {
        throw_data("corpus ids and vectors differ in count");
    }
    IndexConfig cfg = config;
    if (cfg.proj_dim == 0 || cfg.proj_dim > corpus.dim) {
        throw_usage("projection dimension " + std::to_string(cfg.proj_dim) + " exceeds embedding dimension " +
                    std::to_string(corpus.dim));
    }
    if (cfg.m == 0 || cfg.proj_dim % cfg.m != 0) {
        throw_usage("projection dimension " + std::to_string(cfg.proj_dim) + " is not divisible by m=" +
                    std::to_string(cfg.m));
    }
    if (cfg.nlist == 0) {
        throw_usage("nlist must be at least 1");
    }
    auto warn = [&](std::string msg) {
        if (warnings) warnings->push_back(std::move(msg));
    };
    if (cfg.nlist > n) {
        warn("corpus of " + std::to_string(n) + " vectors cannot train " + std::to_string(cfg.nlist) +
             " coarse cells; using " + std::to_string(n));
        cfg.nlist = n;
    }
    std::size_t ksub = 256;
    if (n < ksub) {
        warn("corpus of " + std::to_string(n) + " vectors cannot train 256 codewords per subquantizer; using " +
             std::to_string(n));
        ksub = n;
    }

    PQIndex index;
    index.config_ = cfg;
    index.projection_ = fit_pca(corpus, cfg.proj_dim, cfg.seed);
    const std::size_t dim = cfg.proj_dim;

    std::vector<float> projected(n * dim);
    parallel_for(n, 64, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const auto y = index.projection_.apply(corpus.row(i));
            std::copy(y.begin(), y.end(), projected.begin() + static_cast<std::ptrdiff_t>(i * dim));
        }
    });

    index.coarse_ = kmeans(projected, dim, cfg.nlist, mix_seed(cfg.seed, 1), cfg.kmeans_iters).centroids;

    std::vector<std::uint32_t> cell(n);
    std::vector<float> residuals(n * dim);
    parallel_for(n, kGrain, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const std::span<const float> x{projected.data() + i * dim, dim};
            const std::size_t c = index.assign(x);
            cell[i] = static_cast<std::uint32_t>(c);
            const auto cen = index.coarse_centroid(c);
            for (std::size_t d = 0; d < dim; ++d) residuals[i * dim + d] = x[d] - cen[d];
        }
    });

    index.pq_ = ProductQuantizer(dim, cfg.m, ksub);
    index.pq_.train(residuals, n, mix_seed(cfg.seed, 2), cfg.kmeans_iters);

    std::vector<std::uint8_t> codes(n * cfg.m);
    parallel_for(n, kGrain, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            index.pq_.encode({residuals.data() + i * dim, dim}, {codes.data() + i * cfg.m, cfg.m});
        }
    });

    index.lists_.resize(cfg.nlist);
    for (std::size_t i = 0; i < n; ++i) {
        auto& l = index.lists_[cell[i]];
        l.ids.push_back(corpus.ids[i]);
        l.codes.insert(l.codes.end(), codes.begin() + static_cast<std::ptrdiff_t>(i * cfg.m),
                       codes.begin() + static_cast<std::ptrdiff_t>((i + 1) * cfg.m));
    }
    return index;
}

namespace {

void append_ids(std::string& payload, const std::vector<std::string>& ids) {
    for (const auto& id : ids) {
        const auto len = static_cast<std::uint32_t>(id.size());
        payload.append(reinterpret_cast<const char*>(&len), sizeof(len));
        payload += id;
    }
}

std::vector<std::string> read_ids(std::string_view payload, std::uint64_t offset, std::uint64_t bytes,
                                  std::uint64_t count) {
    if (offset > payload.size() || bytes > payload.size() - offset) {
        throw_data("id blob out of range");
    }
    std::string_view blob = payload.substr(offset, bytes);
    std::vector<std::string> ids;
    ids.reserve(count);
    std::size_t at = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t len = 0;
        if (at + sizeof(len) > blob.size()) throw_data("id blob truncated");
        std::memcpy(&len, blob.data() + at, sizeof(len));
        at += sizeof(len);
        if (at + len > blob.size()) throw_data("id blob truncated");
        ids.emplace_back(blob.substr(at, len));
        at += len;
    }
    if (at != blob.size()) {
        throw_data("id blob has trailing bytes");
    }
    return ids;
}

json blob_ref(std::uint64_t offset, std::uint64_t count) { return json::array({offset, count}); }

std::vector<float> take_floats(const json& ref, std::string_view payload, std::uint64_t expect) {
    const auto count = ref.at(1).get<std::uint64_t>();
    if (count != expect) {
        throw_data("blob size does not match header dimensions");
    }
    return read_floats(payload, ref.at(0).get<std::uint64_t>(), count);
}

} // namespace

std::string serialize_index(const PQIndex& index) {
    std::string payload;
    const auto& pq = index.pq();
    json blobs = {
            {"mean", blob_ref(append_floats(payload, index.projection().mean), index.projection().mean.size())},
            {"basis", blob_ref(append_floats(payload, index.projection().basis), index.projection().basis.size())},
            {"coarse", blob_ref(append_floats(payload, index.coarse_centroids()), index.coarse_centroids().size())},
            {"codebooks", blob_ref(append_floats(payload, pq.centroids()), pq.centroids().size())},
    };
    json lists = json::array();
    for (const auto& l : index.lists()) {
        const std::uint64_t ids_off = payload.size();
        append_ids(payload, l.ids);
        const std::uint64_t ids_bytes = payload.size() - ids_off;
        const std::uint64_t codes_off = payload.size();
        payload.append(reinterpret_cast<const char*>(l.codes.data()), l.codes.size());
        lists.push_back({{"size", l.ids.size()},
                         {"ids_offset", ids_off},
                         {"ids_bytes", ids_bytes},
                         {"codes_offset", codes_off}});
    }
    const auto& c = index.config();
    json header = {
            {"format_version", 1},
            {"config",
             {{"proj_dim", c.proj_dim},
              {"nlist", c.nlist},
              {"m", c.m},
              {"ksub", pq.ksub()},
              {"seed", c.seed},
              {"kmeans_iters", c.kmeans_iters}}},
            {"input_dim", index.input_dim()},
            {"count", index.size()},
            {"meta", index.meta()},
            {"blobs", std::move(blobs)},
            {"lists", std::move(lists)},
    };
    return encode_container({"CSPQ0001", header.dump(), std::move(payload)});
}

PQIndex deserialize_index(std::string_view bytes) {
    const Container c = decode_container(bytes, "CSPQ", 1);
    json h = json::parse(c.header, nullptr, false);
    if (h.is_discarded() || !h.is_object()) {
        throw_data("index header is not valid JSON");
    }
    try {
        if (h.at("format_version").get<int>() != 1) {
            throw_data("unsupported index format_version");
        }
        PQIndex index;
        const auto& cfg = h.at("config");
        index.config_.proj_dim = cfg.at("proj_dim").get<std::size_t>();
        index.config_.nlist = cfg.at("nlist").get<std::size_t>();
        index.config_.m = cfg.at("m").get<std::size_t>();
        index.config_.seed = cfg.at("seed").get<std::uint64_t>();
        index.config_.kmeans_iters = cfg.at("kmeans_iters").get<int>();
        const auto ksub = cfg.at("ksub").get<std::size_t>();
        const auto input_dim = h.at("input_dim").get<std::size_t>();
        const std::size_t dim = index.config_.proj_dim;
        if (dim == 0 || dim > input_dim || index.config_.nlist == 0) {
            throw_data("index header has inconsistent dimensions");
        }
        index.meta_ = h.at("meta").get<std::map<std::string, std::string>>();

        const auto& blobs = h.at("blobs");
        index.projection_.input_dim = input_dim;
        index.projection_.output_dim = dim;
        index.projection_.mean = take_floats(blobs.at("mean"), c.payload, input_dim);
        index.projection_.basis = take_floats(blobs.at("basis"), c.payload, dim * input_dim);
        index.coarse_ = take_floats(blobs.at("coarse"), c.payload, index.config_.nlist * dim);
        index.pq_ = ProductQuantizer(dim, index.config_.m, ksub);
        index.pq_.centroids() = take_floats(blobs.at("codebooks"), c.payload, index.config_.m * ksub * (dim / index.config_.m));

        const auto& lists = h.at("lists");
        if (lists.size() != index.config_.nlist) {
            throw_data("index header list count does not match nlist");
        }
        std::size_t total = 0;
        for (const auto& l : lists) {
            PQIndex::InvertedList il;
            const auto size = l.at("size").get<std::uint64_t>();
            il.ids = read_ids(c.payload, l.at("ids_offset").get<std::uint64_t>(), l.at("ids_bytes").get<std::uint64_t>(), size);
            const auto off = l.at("codes_offset").get<std::uint64_t>();
            const std::uint64_t nbytes = size * index.config_.m;
            if (off > c.payload.size() || nbytes > c.payload.size() - off) {
                throw_data("code blob out of range");
            }
            il.codes.assign(c.payload.begin() + static_cast<std::ptrdiff_t>(off),
                            c.payload.begin() + static_cast<std::ptrdiff_t>(off + nbytes));
            for (std::uint8_t b : il.codes) {
                if (b >= ksub) throw_data("code references a codeword beyond ksub");
            }
            total += size;
            index.lists_.push_back(std::move(il));
        }
        if (total != h.at("count").get<std::size_t>()) {
            throw_data("index header count does not match its lists");
        }
        return index;
    } catch (const json::exception& e) {
        throw_data(std::string("index header: ") + e.what());
    }
}

void save_index(const PQIndex& index, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_index(index));
}

PQIndex load_index(const std::filesystem::path& path) { return deserialize_index(read_file(path)); }

std::string serialize_embeddings(const EmbeddingSet& set) {
    if (set.ids.size() != set.size()) {
        throw_internal("embedding set ids and rows differ in count");
    }
    std::string payload;
    append_ids(payload, set.ids);
    const std::uint64_t ids_bytes = payload.size();
    const auto data_off = append_floats(payload, set.data);
    json header = {{"format_version", 1},
                   {"dim", set.dim},
                   {"count", set.size()},
                   {"ids_offset", 0},
                   {"ids_bytes", ids_bytes},
                   {"data", blob_ref(data_off, set.data.size())}};
    return encode_container({"CSEX0001", header.dump(), std::move(payload)});
}

EmbeddingSet deserialize_embeddings(std::string_view bytes) {
    const Container c = decode_container(bytes, "CSEX", 1);
    json h = json::parse(c.header, nullptr, false);
    if (h.is_discarded() || !h.is_object()) {
        throw_data("embedding header is not valid JSON");
    }
    try {
        EmbeddingSet set(h.at("dim").get<std::size_t>());
        const auto count = h.at("count").get<std::uint64_t>();
        if (set.dim == 0) {
            throw_data("embedding file has zero dimension");
        }
        set.ids = read_ids(c.payload, h.at("ids_offset").get<std::uint64_t>(), h.at("ids_bytes").get<std::uint64_t>(), count);
        set.data = take_floats(h.at("data"), c.payload, count * set.dim);
        return set;
    } catch (const json::exception& e) {
        throw_data(std::string("embedding header: ") + e.what());
    }
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_embeddings(set));
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
    return deserialize_embeddings(read_file(path));
}

} // namespace canvas_search
