#pragma once

// Slow, obviously-correct reference implementations used as test oracles.
// None of them call into the library's numeric code paths.

#include "canvas_search/canvas.hpp"
#include "canvas_search/encoder.hpp"
#include "canvas_search/features.hpp"
#include "canvas_search/manifest.hpp"
#include "canvas_search/random.hpp"
#include "canvas_search/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace oracle {

using namespace canvas_search;

// IoU by counting pixel centres of a res x res raster.
inline double raster_iou(const BBox& a, const BBox& b, int res = 1000) {
    long inter = 0, uni = 0;
    for (int y = 0; y < res; ++y) {
        const double cy = (y + 0.5) / res;
        for (int x = 0; x < res; ++x) {
            const double cx = (x + 0.5) / res;
            const bool in_a = cx >= a.x0 && cx < a.x1 && cy >= a.y0 && cy < a.y1;
            const bool in_b = cx >= b.x0 && cx < b.x1 && cy >= b.y0 && cy < b.y1;
            inter += in_a && in_b;
            uni += in_a || in_b;
        }
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Pixel p is inside a normalized interval when floor(lo*n) <= p < floor(hi*n),
// widened to one pixel when that range is empty.
inline bool covers(double lo, double hi, int p, int n) {
    int b = static_cast<int>(std::floor(lo * n));
    int e = static_cast<int>(std::floor(hi * n));
    b = std::min(std::max(b, 0), n - 1);
    e = std::min(std::max(e, b + 1), n);
    return p >= b && p < e;
}

inline bool covers(const BBox& box, int x, int y, int w, int h) {
    return covers(box.x0, box.x1, x, w) && covers(box.y0, box.y1, y, h);
}

inline std::vector<int> kappa(const std::vector<ObjectPlacement>& ps, int w, int h) {
    std::vector<int> k(static_cast<std::size_t>(w) * h, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (const auto& p : ps) k[static_cast<std::size_t>(y) * w + x] += covers(p.bbox, x, y, w, h);
        }
    }
    return k;
}

// Materializes the full C x H x W field, then max-pools each adaptive window.
inline Tensor3 naive_tensor(const std::vector<ObjectPlacement>& ps, const ClassEmbeddingTable& table, int size,
                            int grid) {
    const int c = static_cast<int>(table.dim());
    std::vector<double> field(static_cast<std::size_t>(c) * size * size, 0.0);
    const auto k = kappa(ps, size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const int kk = k[static_cast<std::size_t>(y) * size + x];
            if (kk == 0) continue;
            for (const auto& p : ps) {
                if (!covers(p.bbox, x, y, size, size)) continue;
                const auto& f = table.at(p.class_label);
                for (int ch = 0; ch < c; ++ch) {
                    field[(static_cast<std::size_t>(ch) * size + y) * size + x] += f[ch] / static_cast<double>(kk);
                }
            }
        }
    }
    Tensor3 out(c, grid, grid);
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < grid; ++i) {
            for (int j = 0; j < grid; ++j) {
                double m = -INFINITY;
                for (int y = i * size / grid; y < (i + 1) * size / grid; ++y) {
                    for (int x = j * size / grid; x < (j + 1) * size / grid; ++x) {
                        m = std::max(m, field[(static_cast<std::size_t>(ch) * size + y) * size + x]);
                    }
                }
                out.at(ch, i, j) = static_cast<float>(m);
            }
        }
    }
    return out;
}

// Zero-padded 3x3 convolution, accumulated in double.
inline std::vector<double> naive_conv(const Tensor3& in, const ConvKernel& k) {
    const int h = in.height, w = in.width;
    std::vector<double> out(static_cast<std::size_t>(k.out_channels) * h * w);
    for (int co = 0; co < k.out_channels; ++co) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double s = k.bias[co];
                for (int ci = 0; ci < k.in_channels; ++ci) {
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int yy = y + dy, xx = x + dx;
                            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                            const std::size_t widx =
                                ((static_cast<std::size_t>(co) * k.in_channels + ci) * 3 + (dy + 1)) * 3 + (dx + 1);
                            s += static_cast<double>(k.weights[widx]) * in.at(ci, yy, xx);
                        }
                    }
                }
                out[(static_cast<std::size_t>(co) * h + y) * w + x] = s;
            }
        }
    }
    return out;
}

inline double naive_relevance(const Annotation& q, const Annotation& img) {
    double total = 0.0;
    for (const auto& qo : q.objects) {
        double best = 0.0;
        for (const auto& io : img.objects) {
            if (io.class_label != qo.class_label) continue;
            const double ix = std::max(0.0, std::min(qo.bbox.x1, io.bbox.x1) - std::max(qo.bbox.x0, io.bbox.x0));
            const double iy = std::max(0.0, std::min(qo.bbox.y1, io.bbox.y1) - std::max(qo.bbox.y0, io.bbox.y0));
            const double inter = ix * iy;
            const double a1 = (qo.bbox.x1 - qo.bbox.x0) * (qo.bbox.y1 - qo.bbox.y0);
            const double a2 = (io.bbox.x1 - io.bbox.x0) * (io.bbox.y1 - io.bbox.y0);
            best = std::max(best, inter / (a1 + a2 - inter));
        }
        total += best;
    }
    return total / static_cast<double>(q.objects.size());
}

// AP: mean of precision at each relevant rank, normalized by min(R, cutoff).
inline double naive_ap(const std::vector<int>& rel, std::size_t total_relevant, std::size_t cutoff) {
    const std::size_t denom = std::min(total_relevant, cutoff);
    if (denom == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t k = 1; k <= std::min(cutoff, rel.size()); ++k) {
        if (!rel[k - 1]) continue;
        int hits = 0;
        for (std::size_t j = 0; j < k; ++j) hits += rel[j];
        sum += static_cast<double>(hits) / static_cast<double>(k);
    }
    return sum / static_cast<double>(denom);
}

inline double naive_ndcg(const std::vector<double>& gains, std::vector<double> ideal, std::size_t cutoff) {
    std::sort(ideal.begin(), ideal.end(), [](double a, double b) { return a > b; });
    double dcg = 0.0, idcg = 0.0;
    for (std::size_t i = 0; i < std::min(cutoff, gains.size()); ++i) dcg += gains[i] / std::log2(i + 2.0);
    for (std::size_t i = 0; i < std::min(cutoff, ideal.size()); ++i) idcg += ideal[i] / std::log2(i + 2.0);
    return idcg == 0.0 ? 0.0 : dcg / idcg;
}

inline double naive_precision(const std::vector<int>& rel, std::size_t k) {
    int hits = 0;
    for (std::size_t i = 0; i < std::min(k, rel.size()); ++i) hits += rel[i];
    return static_cast<double>(hits) / static_cast<double>(k);
}

struct NaiveScores {
    double ap = 0.0, ndcg = 0.0, precision = 0.0;
};

// Scores one ranking against a corpus by recomputing every relevance.
inline NaiveScores naive_scores(const Annotation& q, const std::vector<Annotation>& corpus,
                                const std::vector<std::string>& ranking, double tau, std::size_t cutoff,
                                std::size_t p_at) {
    std::map<std::string, double> rel;
    std::size_t total = 0;
    std::vector<double> ideal;
    for (const auto& img : corpus) {
        const double r = naive_relevance(q, img);
        rel[img.image_id] = r;
        total += r > tau;
        ideal.push_back(r > tau ? r : 0.0);
    }
    std::vector<int> bin;
    std::vector<double> gains;
    for (const auto& id : ranking) {
        const double r = rel.at(id);
        bin.push_back(r > tau);
        gains.push_back(r > tau ? r : 0.0);
    }
    return {naive_ap(bin, total, cutoff), naive_ndcg(gains, ideal, cutoff), naive_precision(bin, p_at)};
}

// Seeded random placement with sides in [lo, hi], fully inside the canvas.
inline ObjectPlacement random_placement(SplitMix64& rng, const std::vector<std::string>& labels, double lo = 0.05,
                                        double hi = 0.7) {
    const double w = rng.uniform(lo, hi), h = rng.uniform(lo, hi);
    const double x0 = rng.uniform(0.0, 1.0 - w), y0 = rng.uniform(0.0, 1.0 - h);
    return {labels[rng.below(labels.size())], BBox::make(x0, y0, std::min(1.0, x0 + w), std::min(1.0, y0 + h))};
}

inline std::vector<float> gaussian(SplitMix64& rng, std::size_t n, double scale = 1.0) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal() * scale);
    return v;
}

} // namespace oracle
