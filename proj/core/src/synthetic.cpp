#include "canvas_search/synthetic.hpp"

#include "canvas_search/error.hpp"
#include "canvas_search/random.hpp"

#include <algorithm>
#include <cstdio>

namespace canvas_search {

namespace {

std::string numbered(const char* prefix, std::size_t i, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
    return buf;
}

void check(const SyntheticSpec& s) {
    if (s.classes == 0) throw_usage("at least one class is required");
    if (s.min_objects < 1 || s.max_objects < s.min_objects) throw_usage("invalid object count range");
    if (!(s.min_side > 0.0 && s.min_side <= s.max_side && s.max_side <= 1.0)) {
        throw_usage("box side range must satisfy 0 < min <= max <= 1");
    }
}

std::vector<ObjectPlacement> random_objects(SplitMix64& rng, const SyntheticSpec& s,
                                            const std::vector<std::string>& vocab) {
    const auto span = static_cast<std::uint64_t>(s.max_objects - s.min_objects + 1);
    const int n = s.min_objects + static_cast<int>(rng.below(span));
    std::vector<ObjectPlacement> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        ObjectPlacement p;
        p.class_label = vocab[rng.below(vocab.size())];
        const double w = rng.uniform(s.min_side, s.max_side);
        const double h = rng.uniform(s.min_side, s.max_side);
        const double x0 = rng.uniform(0.0, 1.0 - w);
        const double y0 = rng.uniform(0.0, 1.0 - h);
        p.bbox = BBox::make(x0, y0, std::min(1.0, x0 + w), std::min(1.0, y0 + h));
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace

std::vector<std::string> synthetic_vocabulary(std::size_t classes) {
    std::vector<std::string> v;
    v.reserve(classes);
    for (std::size_t i = 0; i < classes; ++i) {
        v.push_back(numbered("class_", i, 3));
    }
    return v;
}

DatasetManifest generate_manifest(const SyntheticSpec& spec) {
    check(spec);
    const auto vocab = synthetic_vocabulary(spec.classes);
    SplitMix64 rng(mix_seed(spec.seed, 0x1A6E5));
    DatasetManifest m;
    m.records.reserve(spec.images);
    for (std::size_t i = 0; i < spec.images; ++i) {
        ManifestRecord r;
        r.image_id = numbered("img_", i, 6);
        r.objects = random_objects(rng, spec, vocab);
        m.records.push_back(std::move(r));
    }
    return m;
}

std::vector<QueryRequest> generate_queries(const SyntheticSpec& spec, std::size_t count) {
    check(spec);
    const auto vocab = synthetic_vocabulary(spec.classes);
    SplitMix64 rng(mix_seed(spec.seed, 0x0E4E5));
    std::vector<QueryRequest> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        QueryRequest q;
        q.query_id = numbered("q", i, 4);
        q.canvas.placements = random_objects(rng, spec, vocab);
        out.push_back(std::move(q));
    }
    return out;
}

} // namespace canvas_search
