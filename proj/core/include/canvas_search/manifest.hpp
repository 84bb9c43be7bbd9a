#pragma once

#include "canvas_search/canvas.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace canvas_search {

struct ManifestRecord {
    std::string image_id;
    std::optional<std::string> uri;
    std::vector<ObjectPlacement> objects;

    Annotation annotation() const { return {image_id, objects}; }

    friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

/// Corpus listing, one record per image with unique ids. Stored as JSON Lines:
/// {"image_id": "img-0001", "uri": "...", "objects": [{"class": "dog", "bbox": [x0, y0, x1, y1]}]}
struct DatasetManifest {
    std::vector<ManifestRecord> records;

    const ManifestRecord* find(std::string_view image_id) const;

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

DatasetManifest parse_manifest(std::string_view jsonl);
std::string format_manifest(const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Body of POST /query, and one line of a queries file. `query_id` is used by
/// evaluation only.
struct QueryRequest {
    std::optional<std::string> query_id;
    QueryCanvas canvas;
    std::optional<int> k;
    std::optional<int> nprobe;

    Annotation annotation() const { return {query_id.value_or(""), canvas.placements}; }

    friend bool operator==(const QueryRequest&, const QueryRequest&) = default;
};

/// Parses the JSON shape
///   {"query_id": "q1", "width": 248, "height": 248,
///    "objects": [{"class": "dog", "bbox": [x0, y0, x1, y1]}], "k": 20, "nprobe": 16}
/// where everything except "objects" is optional. Structural problems are all
/// reported in one ValidationError; semantic checks belong to validate_canvas.
QueryRequest parse_query_request(std::string_view json);
std::string format_query_request(const QueryRequest& request);

/// Queries file: JSON Lines of query requests.
std::vector<QueryRequest> load_queries(const std::filesystem::path& path);
void save_queries(const std::vector<QueryRequest>& queries, const std::filesystem::path& path);

} // namespace canvas_search
