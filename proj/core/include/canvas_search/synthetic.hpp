#pragma once

#include "canvas_search/manifest.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace canvas_search {

/// Random corpus shape: each image gets a uniform number of objects in
/// [min_objects, max_objects]; box sides are uniform in [min_side, max_side]
/// and boxes lie fully inside the canvas.
struct SyntheticSpec {
    std::size_t classes = 10;
    std::size_t images = 100;
    std::uint64_t seed = 0;
    int min_objects = 1;
    int max_objects = 3;
    double min_side = 0.2;
    double max_side = 0.6;
};

/// "class_000", "class_001", ...
std::vector<std::string> synthetic_vocabulary(std::size_t classes);

DatasetManifest generate_manifest(const SyntheticSpec& spec);

/// Independent random compositions drawn from the same distribution as the
/// corpus, with ids "q0000", "q0001", ...
std::vector<QueryRequest> generate_queries(const SyntheticSpec& spec, std::size_t count);

} // namespace canvas_search
