#pragma once

#include "canvas_search/canvas.hpp"
#include "canvas_search/features.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace canvas_search {

/// Dense channel-major C x H x W float tensor.
struct Tensor3 {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Tensor3() = default;
    Tensor3(int c, int h, int w, float fill = 0.0f)
            : channels(c), height(h), width(w),
              data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return data.size(); }

    float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    float at(int c, int y, int x) const {
        return data[c * plane() + static_cast<std::size_t>(y) * width + x];
    }

    std::span<float> channel(int c) { return {data.data() + c * plane(), plane()}; }
    std::span<const float> channel(int c) const { return {data.data() + c * plane(), plane()}; }

    friend bool operator==(const Tensor3&, const Tensor3&) = default;
};

/// C x N x N grid of pooled appearance vectors.
using QueryTensor = Tensor3;

struct TensorConfig {
    int width = 248;
    int height = 248;
    int grid = 31;
};

/// Half-open window of grid cell `i` along an axis of `extent` pixels split
/// into `cells`: [floor(i*extent/cells), floor((i+1)*extent/cells)).
PixelSpan pool_window(int i, int extent, int cells);

/// Per-channel max over adaptive windows. Requires a square field and
/// grid <= width.
Tensor3 maxpool_to_grid(const Tensor3& field, int grid);

/// Masked aggregation of object features followed by max-pooling: each pixel
/// holds the average feature of the boxes covering it (zero where uncovered),
/// then every grid window keeps its per-channel maximum. The full field is
/// never materialized; windows are partitioned by box edges instead.
QueryTensor build_query_tensor(std::span<const ObjectPlacement> placements,
                               const ClassEmbeddingTable& table, const TensorConfig& config);

/// Query side: validates the canvas (classes, boxes, size, object count)
/// against the table and grid first.
QueryTensor build_query_tensor(const QueryCanvas& canvas, const ClassEmbeddingTable& table,
                               int grid = 31, std::size_t max_objects = 16);

/// Index side (mirror mode): an image's annotation laid out on the configured canvas.
QueryTensor build_query_tensor(const Annotation& annotation, const ClassEmbeddingTable& table,
                               const TensorConfig& config = {});

} // namespace canvas_search
