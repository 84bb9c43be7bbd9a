#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace canvas_search {

/// Axis-aligned box in normalized canvas coordinates, x to the right and y
/// downwards. A valid box lies in [0,1]^2 with x0 < x1 and y0 < y1.
struct BBox {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 0.0;
    double y1 = 0.0;

    /// Builds a box, throwing Error(Data) when it is degenerate or out of range.
    static BBox make(double x0, double y0, double x1, double y1);

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }

    friend bool operator==(const BBox&, const BBox&) = default;
};

/// Problems with a box, empty when it is valid.
std::vector<std::string> bbox_issues(const BBox& b);

/// Intersection over union. Both boxes are assumed valid.
double iou(const BBox& a, const BBox& b);

struct ObjectPlacement {
    std::string class_label;
    BBox bbox;

    friend bool operator==(const ObjectPlacement&, const ObjectPlacement&) = default;
};

/// A query composition: labeled boxes on a square raster.
struct QueryCanvas {
    int width = 248;
    int height = 248;
    std::vector<ObjectPlacement> placements;

    friend bool operator==(const QueryCanvas&, const QueryCanvas&) = default;
};

/// Ground-truth object set of one image (or of a query, for evaluation).
struct Annotation {
    std::string image_id;
    std::vector<ObjectPlacement> objects;

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct CanvasLimits {
    int grid = 31;
    std::size_t max_objects = 16;
};

/// Reports every violated invariant at once via ValidationError; returns the
/// canvas unchanged otherwise. `known_class` decides vocabulary membership.
const QueryCanvas& validate_canvas(const QueryCanvas& canvas,
                                   const std::function<bool(const std::string&)>& known_class,
                                   const CanvasLimits& limits = {});

/// Half-open pixel range [begin, end) covered by a normalized interval on an
/// axis of `extent` pixels. Never empty.
struct PixelSpan {
    int begin = 0;
    int end = 0;
};

PixelSpan pixelize(double lo, double hi, int extent);

struct PixelRect {
    PixelSpan x;
    PixelSpan y;
};

PixelRect pixelize(const BBox& b, int width, int height);

/// Per-pixel count of covering boxes, row-major (y * width + x).
struct CountField {
    int width = 0;
    int height = 0;
    std::vector<std::int32_t> counts;

    std::int32_t at(int x, int y) const { return counts[static_cast<std::size_t>(y) * width + x]; }
};

CountField overlap_count_field(std::span<const ObjectPlacement> placements, int width, int height);

} // namespace canvas_search
