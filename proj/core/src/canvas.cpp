#include "canvas_search/canvas.hpp"

#include "canvas_search/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace canvas_search {

namespace {

std::string describe(const BBox& b) {
    std::ostringstream ss;
    ss << "(" << b.x0 << ", " << b.y0 << ", " << b.x1 << ", " << b.y1 << ")";
    return ss.str();
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) {
            out += "; ";
        }
        out += p;
    }
    return out;
}

} // namespace

ValidationError::ValidationError(std::vector<std::string> issues)
        : Error(ErrorKind::Data, join(issues)), issues_(std::move(issues)) {}

std::vector<std::string> bbox_issues(const BBox& b) {
    std::vector<std::string> issues;
    for (double c : {b.x0, b.y0, b.x1, b.y1}) {
        if (!std::isfinite(c)) {
            issues.push_back("non-finite coordinate in box " + describe(b));
            return issues;
        }
    }
    if (!(b.x0 < b.x1) || !(b.y0 < b.y1)) {
        issues.push_back("degenerate box " + describe(b));
    }
    if (std::min({b.x0, b.y0, b.x1, b.y1}) < 0.0 || std::max({b.x0, b.y0, b.x1, b.y1}) > 1.0) {
        issues.push_back("box out of range [0,1]: " + describe(b));
    }
    return issues;
}

BBox BBox::make(double x0, double y0, double x1, double y1) {
    BBox b{x0, y0, x1, y1};
    auto issues = bbox_issues(b);
    if (!issues.empty()) {
        throw ValidationError(std::move(issues));
    }
    return b;
}

double iou(const BBox& a, const BBox& b) {
    const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (iw <= 0.0 || ih <= 0.0) {
        return 0.0;
    }
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return std::clamp(inter / uni, 0.0, 1.0);
}

const QueryCanvas& validate_canvas(const QueryCanvas& canvas,
                                   const std::function<bool(const std::string&)>& known_class,
                                   const CanvasLimits& limits) {
    std::vector<std::string> issues;
    if (canvas.width <= 0 || canvas.height <= 0) {
        issues.push_back("canvas size must be positive, got " + std::to_string(canvas.width) + "x" +
                         std::to_string(canvas.height));
    }
    if (canvas.width != canvas.height) {
        issues.push_back("canvas must be square (W=H), got " + std::to_string(canvas.width) + "x" +
                         std::to_string(canvas.height));
    }
    if (limits.grid <= 0 || (canvas.width > 0 && canvas.width % limits.grid != 0)) {
        issues.push_back("canvas width " + std::to_string(canvas.width) +
                         " not divisible by grid size " + std::to_string(limits.grid));
    }
    if (canvas.placements.empty()) {
        issues.push_back("at least one object is required");
    }
    if (canvas.placements.size() > limits.max_objects) {
        issues.push_back("too many objects: " + std::to_string(canvas.placements.size()) +
                         " > " + std::to_string(limits.max_objects));
    }
    for (std::size_t i = 0; i < canvas.placements.size(); ++i) {
        const auto& p = canvas.placements[i];
        const std::string where = "objects[" + std::to_string(i) + "]: ";
        if (p.class_label.empty()) {
            issues.push_back(where + "empty class label");
        } else if (!known_class(p.class_label)) {
            issues.push_back(where + "unknown class label '" + p.class_label + "'");
        }
        for (auto& issue : bbox_issues(p.bbox)) {
            issues.push_back(where + issue);
        }
    }
    if (!issues.empty()) {
        throw ValidationError(std::move(issues));
    }
    return canvas;
}

PixelSpan pixelize(double lo, double hi, int extent) {
    auto to_pixel = [extent](double c) {
        return static_cast<int>(std::clamp(std::floor(c * extent), 0.0, static_cast<double>(extent)));
    };
    PixelSpan s{to_pixel(lo), to_pixel(hi)};
    s.begin = std::min(s.begin, extent - 1);
    // Every box covers at least one pixel.
    s.end = std::clamp(s.end, s.begin + 1, extent);
    return s;
}

PixelRect pixelize(const BBox& b, int width, int height) {
    return {pixelize(b.x0, b.x1, width), pixelize(b.y0, b.y1, height)};
}

CountField overlap_count_field(std::span<const ObjectPlacement> placements, int width, int height) {
    if (width <= 0 || height <= 0) {
        throw_usage("field size must be positive");
    }
    CountField f{width, height,
                 std::vector<std::int32_t>(static_cast<std::size_t>(width) * height, 0)};
    for (const auto& p : placements) {
        const PixelRect r = pixelize(p.bbox, width, height);
        for (int y = r.y.begin; y < r.y.end; ++y) {
            auto* row = f.counts.data() + static_cast<std::size_t>(y) * width;
            for (int x = r.x.begin; x < r.x.end; ++x) {
                ++row[x];
            }
        }
    }
    return f;
}

} // namespace canvas_search
