#include "canvas_search/tensor.hpp"

#include "canvas_search/error.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <limits>
#include <unordered_map>

namespace canvas_search {

PixelSpan pool_window(int i, int extent, int cells) {
    const auto e = static_cast<std::int64_t>(extent);
    return {static_cast<int>(i * e / cells), static_cast<int>((i + 1) * e / cells)};
}

Tensor3 maxpool_to_grid(const Tensor3& field, int grid) {
    if (field.width != field.height) {
        throw_usage("maxpool_to_grid: field must be square, got " + std::to_string(field.height) +
                    "x" + std::to_string(field.width));
    }
    if (grid < 1 || grid > field.width) {
        throw_usage("maxpool_to_grid: grid " + std::to_string(grid) + " exceeds field size " +
                    std::to_string(field.width));
    }
    Tensor3 out(field.channels, grid, grid);
    for (int c = 0; c < field.channels; ++c) {
        for (int i = 0; i < grid; ++i) {
            const PixelSpan rows = pool_window(i, field.height, grid);
            for (int j = 0; j < grid; ++j) {
                const PixelSpan cols = pool_window(j, field.width, grid);
                float m = -std::numeric_limits<float>::infinity();
                for (int y = rows.begin; y < rows.end; ++y) {
                    for (int x = cols.begin; x < cols.end; ++x) {
                        m = std::max(m, field.at(c, y, x));
                    }
                }
                out.at(c, i, j) = m;
            }
        }
    }
    return out;
}

QueryTensor build_query_tensor(std::span<const ObjectPlacement> placements,
                               const ClassEmbeddingTable& table, const TensorConfig& config) {
    if (config.width <= 0 || config.height <= 0 || config.width != config.height) {
        throw_usage("tensor canvas must be square and non-empty");
    }
    if (config.grid < 1 || config.grid > config.width) {
        throw_usage("grid size " + std::to_string(config.grid) + " exceeds canvas size " +
                    std::to_string(config.width));
    }
    if (placements.size() > 64) {
        throw_data("at most 64 objects per canvas are supported, got " +
                   std::to_string(placements.size()));
    }

    std::vector<std::string> issues;
    std::vector<const FeatureVector*> features;
    std::vector<PixelRect> rects;
    for (std::size_t i = 0; i < placements.size(); ++i) {
        const auto& p = placements[i];
        for (auto& issue : bbox_issues(p.bbox)) {
            issues.push_back("objects[" + std::to_string(i) + "]: " + issue);
        }
        if (!table.contains(p.class_label)) {
            issues.push_back("objects[" + std::to_string(i) + "]: unknown class label '" +
                             p.class_label + "'");
            continue;
        }
        features.push_back(&table.at(p.class_label));
        rects.push_back(pixelize(p.bbox, config.width, config.height));
    }
    if (!issues.empty()) {
        throw ValidationError(std::move(issues));
    }

    const int channels = static_cast<int>(table.dim());
    const int grid = config.grid;
    QueryTensor out(channels, grid, grid);

    // Pixel value for a given set of covering boxes: the mean of their features,
    // accumulated in placement order. Few distinct sets occur, so cache them.
    std::unordered_map<std::uint64_t, std::vector<float>> cover_values;
    auto value_of = [&](std::uint64_t mask) -> const std::vector<float>& {
        auto [it, inserted] = cover_values.try_emplace(mask);
        if (inserted) {
            const float w = 1.0f / static_cast<float>(std::popcount(mask));
            std::vector<float> v(static_cast<std::size_t>(channels), 0.0f);
            for (std::size_t i = 0; i < features.size(); ++i) {
                if (mask & (std::uint64_t{1} << i)) {
                    const auto& f = *features[i];
                    for (int c = 0; c < channels; ++c) {
                        v[c] += f[c] * w;
                    }
                }
            }
            it->second = std::move(v);
        }
        return it->second;
    };

    std::vector<int> xs;
    std::vector<int> ys;
    std::vector<std::uint64_t> masks;
    std::vector<float> cell(static_cast<std::size_t>(channels));
    for (int gi = 0; gi < grid; ++gi) {
        const PixelSpan rows = pool_window(gi, config.height, grid);
        for (int gj = 0; gj < grid; ++gj) {
            const PixelSpan cols = pool_window(gj, config.width, grid);

            // Split the window along every box edge that falls inside it; each
            // resulting block has a single set of covering boxes.
            xs.assign({cols.begin, cols.end});
            ys.assign({rows.begin, rows.end});
            bool touched = false;
            for (const auto& r : rects) {
                if (r.x.begin >= cols.end || r.x.end <= cols.begin || r.y.begin >= rows.end ||
                    r.y.end <= rows.begin) {
                    continue;
                }
                touched = true;
                for (int e : {r.x.begin, r.x.end}) {
                    if (e > cols.begin && e < cols.end) xs.push_back(e);
                }
                for (int e : {r.y.begin, r.y.end}) {
                    if (e > rows.begin && e < rows.end) ys.push_back(e);
                }
            }
            if (!touched) {
                continue;
            }
            std::sort(xs.begin(), xs.end());
            xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
            std::sort(ys.begin(), ys.end());
            ys.erase(std::unique(ys.begin(), ys.end()), ys.end());

            masks.clear();
            for (std::size_t a = 0; a + 1 < ys.size(); ++a) {
                for (std::size_t b = 0; b + 1 < xs.size(); ++b) {
                    const int y = ys[a];
                    const int x = xs[b];
                    std::uint64_t mask = 0;
                    for (std::size_t i = 0; i < rects.size(); ++i) {
                        const auto& r = rects[i];
                        if (x >= r.x.begin && x < r.x.end && y >= r.y.begin && y < r.y.end) {
                            mask |= std::uint64_t{1} << i;
                        }
                    }
                    masks.push_back(mask);
                }
            }
            std::sort(masks.begin(), masks.end());
            masks.erase(std::unique(masks.begin(), masks.end()), masks.end());

            // An uncovered block contributes the zero vector to the maximum.
            const bool has_gap = masks.front() == 0;
            std::fill(cell.begin(), cell.end(),
                      has_gap ? 0.0f : -std::numeric_limits<float>::infinity());
            for (std::uint64_t mask : masks) {
                if (mask == 0) {
                    continue;
                }
                const auto& v = value_of(mask);
                for (int c = 0; c < channels; ++c) {
                    cell[c] = std::max(cell[c], v[c]);
                }
            }
            for (int c = 0; c < channels; ++c) {
                out.at(c, gi, gj) = cell[c];
            }
        }
    }
    return out;
}

QueryTensor build_query_tensor(const QueryCanvas& canvas, const ClassEmbeddingTable& table, int grid,
                               std::size_t max_objects) {
    validate_canvas(canvas, [&](const std::string& l) { return table.contains(l); },
                    CanvasLimits{grid, max_objects});
    return build_query_tensor(canvas.placements, table, TensorConfig{canvas.width, canvas.height, grid});
}

QueryTensor build_query_tensor(const Annotation& annotation, const ClassEmbeddingTable& table,
                               const TensorConfig& config) {
    if (annotation.objects.empty()) {
        throw_data("annotation '" + annotation.image_id + "' has no objects");
    }
    return build_query_tensor(annotation.objects, table, config);
}

} // namespace canvas_search
