#include "canvas_search/canvas.hpp"
#include "canvas_search/error.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

using namespace canvas_search;

namespace {

bool known(const std::string& s) { return s == "dog" || s == "cat"; }

std::vector<std::string> issues_of(const QueryCanvas& c, const CanvasLimits& limits = {}) {
    try {
        validate_canvas(c, known, limits);
    } catch (const ValidationError& e) {
        return e.issues();
    }
    return {};
}

bool any_contains(const std::vector<std::string>& v, const std::string& needle) {
    for (const auto& s : v) {
        if (s.find(needle) != std::string::npos) return true;
    }
    return false;
}

} // namespace

TEST(BBox, MakeRejectsDegenerateAndOutOfRange) {
    EXPECT_NO_THROW(BBox::make(0, 0, 1, 1));
    EXPECT_THROW(BBox::make(0.5, 0, 0.4, 1), Error);
    EXPECT_THROW(BBox::make(0, 0, 0, 1), Error);
    EXPECT_THROW(BBox::make(-0.1, 0, 0.5, 1), Error);
    EXPECT_THROW(BBox::make(0, 0, 1.2, 1), Error);
    EXPECT_FALSE(bbox_issues(BBox{0, 0, NAN, 1}).empty());
}

TEST(Iou, Identity) { EXPECT_DOUBLE_EQ(iou(BBox{0, 0, 0.5, 0.5}, BBox{0, 0, 0.5, 0.5}), 1.0); }

TEST(Iou, Disjoint) { EXPECT_DOUBLE_EQ(iou(BBox{0, 0, 0.4, 0.4}, BBox{0.5, 0.5, 1, 1}), 0.0); }

TEST(Iou, HalfOverlapMatchesRasterOracle) {
    const BBox a{0, 0, 0.5, 0.5}, b{0, 0, 0.5, 1.0};
    const double expected = oracle::raster_iou(a, b);
    EXPECT_NEAR(iou(a, b), expected, 1e-3);
    EXPECT_NEAR(iou(a, b), 0.5, 1e-12);
}

TEST(Iou, RandomPairsAgreeWithRasterOracle) {
    SplitMix64 rng(11);
    const std::vector<std::string> labels{"x"};
    for (int i = 0; i < 20; ++i) {
        const auto a = oracle::random_placement(rng, labels).bbox;
        const auto b = oracle::random_placement(rng, labels).bbox;
        EXPECT_NEAR(iou(a, b), oracle::raster_iou(a, b, 400), 1e-2);
    }
}

TEST(Iou, SymmetricAndBounded) {
    SplitMix64 rng(3);
    const std::vector<std::string> labels{"x"};
    for (int i = 0; i < 2000; ++i) {
        const auto a = oracle::random_placement(rng, labels, 0.01, 0.9).bbox;
        const auto b = oracle::random_placement(rng, labels, 0.01, 0.9).bbox;
        const double ab = iou(a, b);
        EXPECT_EQ(ab, iou(b, a));
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ab, 1.0);
        EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    }
}

TEST(Pixelize, HalfOpenAndAtLeastOnePixel) {
    auto s = pixelize(0.25, 0.5, 8);
    EXPECT_EQ(s.begin, 2);
    EXPECT_EQ(s.end, 4);
    // Adjacent boxes share no pixel.
    auto left = pixelize(0.0, 0.5, 8), right = pixelize(0.5, 1.0, 8);
    EXPECT_EQ(left.end, right.begin);
    auto tiny = pixelize(0.501, 0.502, 8);
    EXPECT_EQ(tiny.end - tiny.begin, 1);
    auto last = pixelize(0.999, 1.0, 8);
    EXPECT_EQ(last.begin, 7);
    EXPECT_EQ(last.end, 8);
}

TEST(OverlapCount, FullCanvasSingleAndDouble) {
    const ObjectPlacement full{"dog", BBox{0, 0, 1, 1}};
    std::vector<ObjectPlacement> one{full}, two{full, full};
    auto k1 = overlap_count_field(one, 16, 16);
    auto k2 = overlap_count_field(two, 16, 16);
    for (int v : k1.counts) EXPECT_EQ(v, 1);
    for (int v : k2.counts) EXPECT_EQ(v, 2);
}

TEST(OverlapCount, TwoStripsOnEightByEight) {
    std::vector<ObjectPlacement> ps{{"dog", BBox{0, 0, 0.5, 1}}, {"cat", BBox{0.25, 0, 0.75, 1}}};
    const auto k = overlap_count_field(ps, 8, 8);
    const auto ref = oracle::kappa(ps, 8, 8);
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            EXPECT_EQ(k.at(x, y), ref[y * 8 + x]);
            const int expected = x < 2 ? 1 : x < 4 ? 2 : x < 6 ? 1 : 0;
            EXPECT_EQ(k.at(x, y), expected) << "x=" << x;
        }
    }
}

TEST(OverlapCount, SumEqualsTotalBoxArea) {
    SplitMix64 rng(5);
    const std::vector<std::string> labels{"a"};
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<ObjectPlacement> ps;
        const int n = 1 + static_cast<int>(rng.below(6));
        for (int i = 0; i < n; ++i) ps.push_back(oracle::random_placement(rng, labels, 0.01, 0.9));
        const int w = 37;
        const auto k = overlap_count_field(ps, w, w);
        long sum = 0;
        for (int v : k.counts) sum += v;
        long areas = 0;
        for (const auto& p : ps) {
            const auto r = pixelize(p.bbox, w, w);
            areas += static_cast<long>(r.x.end - r.x.begin) * (r.y.end - r.y.begin);
        }
        EXPECT_EQ(sum, areas);
        const auto ref = oracle::kappa(ps, w, w);
        EXPECT_EQ(k.counts, std::vector<std::int32_t>(ref.begin(), ref.end()));
    }
}

TEST(ValidateCanvas, ValidCanvasReturnedUnchanged) {
    QueryCanvas c;
    c.placements = {{"dog", BBox{0.1, 0.1, 0.4, 0.5}}};
    const QueryCanvas& out = validate_canvas(c, known);
    EXPECT_EQ(&out, &c);
    EXPECT_EQ(out, c);
}

TEST(ValidateCanvas, DegenerateBox) {
    QueryCanvas c;
    c.placements = {{"dog", BBox{0.6, 0.1, 0.4, 0.5}}};
    EXPECT_TRUE(any_contains(issues_of(c), "degenerate box"));
}

TEST(ValidateCanvas, UnknownLabelIsNamed) {
    QueryCanvas c;
    c.placements = {{"zebra", BBox{0.1, 0.1, 0.4, 0.5}}};
    EXPECT_TRUE(any_contains(issues_of(c), "zebra"));
}

TEST(ValidateCanvas, ReportsEveryProblemAtOnce) {
    QueryCanvas c;
    c.width = 250;
    c.height = 248;
    c.placements = {{"zebra", BBox{0.1, 0.1, 0.4, 0.5}}, {"dog", BBox{0.5, 0.5, 0.2, 1.5}}};
    const auto issues = issues_of(c);
    EXPECT_GE(issues.size(), 3u);
    EXPECT_TRUE(any_contains(issues, "zebra"));
    EXPECT_TRUE(any_contains(issues, "degenerate"));
}

TEST(ValidateCanvas, EmptyAndTooMany) {
    QueryCanvas c;
    EXPECT_TRUE(any_contains(issues_of(c), "at least one object"));
    c.placements.assign(4, {"dog", BBox{0, 0, 1, 1}});
    EXPECT_FALSE(issues_of(c, {31, 3}).empty());
    EXPECT_TRUE(issues_of(c, {31, 4}).empty());
}

TEST(ValidateCanvas, SizeMustBeSquareMultipleOfGrid) {
    QueryCanvas c;
    c.placements = {{"dog", BBox{0, 0, 1, 1}}};
    c.width = c.height = 62;
    EXPECT_TRUE(issues_of(c).empty());
    c.width = c.height = 100;
    EXPECT_FALSE(issues_of(c).empty());
}
