#pragma once

#include "canvas_search/encoder.hpp"
#include "canvas_search/features.hpp"
#include "canvas_search/index.hpp"
#include "canvas_search/manifest.hpp"
#include "canvas_search/metrics.hpp"
#include "canvas_search/tensor.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace canvas_search {

enum class RetrievalMode { PQ, Exact };

std::string_view to_string(RetrievalMode m);
RetrievalMode parse_retrieval_mode(std::string_view s);

/// Canvas geometry shared by the query and mirror (annotation) paths.
struct CanvasGeometry {
    int size = 248;
    int grid = 31;
    std::size_t max_objects = 16;
};

/// Embeds every manifest image through the annotation -> tensor -> encoder
/// path. Output rows follow manifest order. Throws Error(Data) for images
/// without objects.
EmbeddingSet embed_corpus(const DatasetManifest& manifest, const ClassEmbeddingTable& table,
                          const SpatialEncoder& encoder, const CanvasGeometry& geometry = {});

/// Loaded, read-only query pipeline. Safe to share across threads.
class SearchEngine {
public:
    struct Parts {
        ClassEmbeddingTable table;
        SpatialEncoder encoder;
        DatasetManifest manifest;
        std::optional<PQIndex> index;
        std::optional<EmbeddingSet> exact;
        RetrievalMode mode = RetrievalMode::PQ;
        std::size_t default_k = 20;
        std::size_t default_nprobe = 16;
        CanvasGeometry geometry;
    };

    /// Checks that the parts fit together (embedding dimensions, encoder mode
    /// recorded in the index, a store for the requested mode).
    explicit SearchEngine(Parts parts);

    struct Timing {
        double tensor_ms = 0.0;
        double encode_ms = 0.0;
        double search_ms = 0.0;
        double total_ms = 0.0;
    };

    struct Response {
        RetrievalResult result;
        Timing timing;
    };

    /// Validates, encodes and searches. `nprobe` is clamped to the index's
    /// cell count.
    Response query(const QueryCanvas& canvas, std::optional<std::size_t> k = std::nullopt,
                   std::optional<std::size_t> nprobe = std::nullopt) const;

    Embedding embed(const QueryCanvas& canvas) const;

    /// Runs every query and scores the rankings against the manifest,
    /// retrieving `config.cutoff` results per query.
    EvalReport evaluate(const std::vector<QueryRequest>& queries, const EvalConfig& config,
                        std::optional<std::size_t> nprobe = std::nullopt) const;

    const ClassEmbeddingTable& table() const { return parts_.table; }
    const SpatialEncoder& encoder() const { return parts_.encoder; }
    const DatasetManifest& manifest() const { return parts_.manifest; }
    const std::optional<PQIndex>& index() const { return parts_.index; }
    const std::optional<EmbeddingSet>& exact() const { return parts_.exact; }
    RetrievalMode mode() const { return parts_.mode; }
    std::size_t default_k() const { return parts_.default_k; }
    std::size_t default_nprobe() const { return parts_.default_nprobe; }
    std::size_t corpus_size() const { return parts_.manifest.records.size(); }

    /// Display URI for an image, if the manifest has one.
    const std::optional<std::string>* uri(const std::string& image_id) const;

private:
    Parts parts_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

/// File locations for SearchEngine. The encoder defaults to the one recorded
/// in the index header; the exact store defaults to "<index>.exact".
struct EngineFiles {
    std::filesystem::path table;
    std::filesystem::path manifest;
    std::optional<std::filesystem::path> index;
    std::optional<std::filesystem::path> exact;
    std::optional<std::filesystem::path> weights;
    std::optional<std::string> encoder;  // "ft" | "bypass"
    RetrievalMode mode = RetrievalMode::PQ;
    std::size_t default_k = 20;
    std::size_t default_nprobe = 16;
    CanvasGeometry geometry;
};

/// Path of the exact-embedding sidecar written next to an index file.
std::filesystem::path exact_sidecar_path(const std::filesystem::path& index_path);

SearchEngine open_engine(const EngineFiles& files);

} // namespace canvas_search
