#include "canvas_search/engine.hpp"

#include "canvas_search/error.hpp"
#include "canvas_search/parallel.hpp"

#include <chrono>

namespace canvas_search {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
}

} // namespace

std::string_view to_string(RetrievalMode m) { return m == RetrievalMode::PQ ? "pq" : "exact"; }

RetrievalMode parse_retrieval_mode(std::string_view s) {
    if (s == "pq") return RetrievalMode::PQ;
    if (s == "exact") return RetrievalMode::Exact;
    throw_usage("retrieval mode must be 'pq' or 'exact', got '" + std::string(s) + "'");
}

EmbeddingSet embed_corpus(const DatasetManifest& manifest, const ClassEmbeddingTable& table,
                          const SpatialEncoder& encoder, const CanvasGeometry& geometry) {
    const std::size_t n = manifest.records.size();
    std::vector<Embedding> rows(n);
    const TensorConfig tc{geometry.size, geometry.size, geometry.grid};
    parallel_for(n, 1, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const auto& r = manifest.records[i];
            if (r.objects.empty()) {
                throw_data("image '" + r.image_id + "' has no objects and cannot be indexed in mirror mode");
            }
            rows[i] = encoder.encode(build_query_tensor(r.annotation(), table, tc));
        }
    });
    EmbeddingSet set(encoder.output_dim());
    for (std::size_t i = 0; i < n; ++i) {
        set.add(manifest.records[i].image_id, rows[i].values);
    }
    return set;
}

SearchEngine::SearchEngine(Parts parts) : parts_(std::move(parts)) {
    if (parts_.encoder.input_channels() != static_cast<int>(parts_.table.dim())) {
        throw_data("encoder expects " + std::to_string(parts_.encoder.input_channels()) +
                   " channels but the embedding table has dimension " + std::to_string(parts_.table.dim()));
    }
    const std::size_t dim = parts_.encoder.output_dim();
    if (parts_.index) {
        if (parts_.index->input_dim() != dim) {
            throw_data("index was built on " + std::to_string(parts_.index->input_dim()) +
                       "-dim embeddings, encoder produces " + std::to_string(dim));
        }
        auto enc = parts_.index->meta().find("encoder");
        if (enc != parts_.index->meta().end() && enc->second != parts_.encoder.mode_name()) {
            throw_data("index was built with encoder '" + enc->second + "', engine uses '" +
                       std::string(parts_.encoder.mode_name()) + "'");
        }
    }
    if (parts_.exact && parts_.exact->dim != dim) {
        throw_data("exact embeddings have dimension " + std::to_string(parts_.exact->dim) +
                   ", encoder produces " + std::to_string(dim));
    }
    if (parts_.mode == RetrievalMode::PQ && !parts_.index) {
        throw_data("pq retrieval requested but no index is loaded");
    }
    if (parts_.mode == RetrievalMode::Exact && !parts_.exact) {
        throw_data("exact retrieval requested but no exact embeddings are loaded");
    }
    if (parts_.default_k < 1 || parts_.default_nprobe < 1) {
        throw_usage("default k and nprobe must be at least 1");
    }
    for (std::size_t i = 0; i < parts_.manifest.records.size(); ++i) {
        by_id_.emplace(parts_.manifest.records[i].image_id, i);
    }
}

Embedding SearchEngine::embed(const QueryCanvas& canvas) const {
    const auto& g = parts_.geometry;
    return parts_.encoder.encode(build_query_tensor(canvas, parts_.table, g.grid, g.max_objects));
}

SearchEngine::Response SearchEngine::query(const QueryCanvas& canvas, std::optional<std::size_t> k,
                                           std::optional<std::size_t> nprobe) const {
    const auto start = Clock::now();
    Response resp;
    const auto& g = parts_.geometry;
    const QueryTensor tensor = build_query_tensor(canvas, parts_.table, g.grid, g.max_objects);
    resp.timing.tensor_ms = ms_since(start);

    auto t = Clock::now();
    const Embedding e = parts_.encoder.encode(tensor);
    resp.timing.encode_ms = ms_since(t);

    t = Clock::now();
    const std::size_t kk = k.value_or(parts_.default_k);
    if (parts_.mode == RetrievalMode::PQ) {
        const std::size_t np = std::min(nprobe.value_or(parts_.default_nprobe), parts_.index->nlist());
        resp.result = parts_.index->search(e.values, kk, np);
    } else {
        resp.result = exact_search(*parts_.exact, e.values, kk);
    }
    resp.timing.search_ms = ms_since(t);
    resp.timing.total_ms = ms_since(start);
    return resp;
}

EvalReport SearchEngine::evaluate(const std::vector<QueryRequest>& queries, const EvalConfig& config,
                                  std::optional<std::size_t> nprobe) const {
    config.validate();
    std::vector<Annotation> anns;
    std::vector<RetrievalResult> rankings(queries.size());
    anns.reserve(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        Annotation a = queries[i].annotation();
        if (a.image_id.empty()) {
            a.image_id = "q" + std::to_string(i);
        }
        anns.push_back(std::move(a));
    }
    parallel_for(queries.size(), 1, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            std::optional<std::size_t> np = nprobe;
            if (!np && queries[i].nprobe) {
                np = static_cast<std::size_t>(*queries[i].nprobe);
            }
            rankings[i] = query(queries[i].canvas, config.cutoff, np).result;
        }
    });
    return evaluate_run(anns, parts_.manifest, rankings, config);
}

const std::optional<std::string>* SearchEngine::uri(const std::string& image_id) const {
    auto it = by_id_.find(image_id);
    if (it == by_id_.end()) {
        return nullptr;
    }
    return &parts_.manifest.records[it->second].uri;
}

std::filesystem::path exact_sidecar_path(const std::filesystem::path& index_path) {
    auto p = index_path;
    p += ".exact";
    return p;
}

SearchEngine open_engine(const EngineFiles& files) {
    SearchEngine::Parts parts;
    parts.table = load_embedding_table(files.table);
    parts.manifest = load_manifest(files.manifest);
    parts.mode = files.mode;
    parts.default_k = files.default_k;
    parts.default_nprobe = files.default_nprobe;
    parts.geometry = files.geometry;

    std::optional<std::filesystem::path> exact_path = files.exact;
    if (files.index) {
        parts.index = load_index(*files.index);
        if (!exact_path && files.mode == RetrievalMode::Exact) {
            exact_path = exact_sidecar_path(*files.index);
        }
    }
    if (exact_path) {
        parts.exact = load_embeddings(*exact_path);
    }

    std::string encoder = files.encoder.value_or("");
    if (encoder.empty() && parts.index) {
        auto it = parts.index->meta().find("encoder");
        if (it != parts.index->meta().end()) {
            encoder = it->second;
        }
    }
    if (encoder.empty()) {
        encoder = files.weights ? "ft" : "bypass";
    }
    if (encoder == "ft") {
        if (!files.weights) {
            throw_usage("encoder 'ft' needs a weights file");
        }
        parts.encoder = SpatialEncoder::with_weights(load_weights(*files.weights));
    } else if (encoder == "bypass") {
        parts.encoder = SpatialEncoder::bypass(static_cast<int>(parts.table.dim()));
    } else {
        throw_usage("encoder must be 'ft' or 'bypass', got '" + encoder + "'");
    }
    return SearchEngine(std::move(parts));
}

} // namespace canvas_search
