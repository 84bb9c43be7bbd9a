#include "canvas_search_cli/cli.hpp"

#include "canvas_search/engine.hpp"
#include "canvas_search/error.hpp"
#include "canvas_search/io.hpp"
#include "canvas_search/parallel.hpp"
#include "canvas_search/service.hpp"
#include "canvas_search/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace canvas_search::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GenOptions {
    SyntheticSpec spec;
    std::string out;
    std::string uri_prefix;
    std::string table_out;
    std::size_t dim = 256;
    std::string weights_out;
    std::size_t queries = 0;
    std::string queries_out;
};

struct BuildOptions {
    std::string manifest;
    std::string table;
    std::string weights;
    std::string encoder;
    std::string mode = "mirror";
    std::string embeddings;
    std::string out;
    bool exact_sidecar = false;
    std::size_t proj_dim = 128;
    std::string nlist = "64";
    std::size_t m = 16;
    std::uint64_t seed = 0;
    int kmeans_iters = 25;
};

// Flags shared by query and eval for locating the engine's files. Anything
// left empty falls back to the paths recorded in the index at build time.
struct EngineOptions {
    std::string index;
    std::string table;
    std::string manifest;
    std::string weights;
    std::string exact;
    std::string encoder;
    std::string retrieval = "pq";
};

struct QueryOptions {
    EngineOptions engine;
    std::string canvas;
    std::size_t k = 20;
    std::size_t nprobe = 16;
    bool k_given = false;
    bool nprobe_given = false;
    bool json_output = false;
};

struct EvalOptions {
    EngineOptions engine;
    std::string queries;
    EvalConfig config;
    std::size_t nprobe = 16;
    std::string format = "table";
    std::string out;
};

struct ServeOptions {
    std::string config;
    int port = -1;
};

void add_engine_flags(CLI::App* cmd, EngineOptions& o) {
    cmd->add_option("--index", o.index, "Index file written by build-index")->required();
    cmd->add_option("--table", o.table, "Class embedding table (default: recorded in the index)");
    cmd->add_option("--manifest", o.manifest, "Corpus manifest (default: recorded in the index)");
    cmd->add_option("--weights", o.weights, "Encoder weights (default: recorded in the index)");
    cmd->add_option("--exact", o.exact, "Exact embedding store (default: <index>.exact)");
    cmd->add_option("--encoder", o.encoder, "ft or bypass (default: recorded in the index)")
        ->check(CLI::IsMember({"ft", "bypass"}));
    cmd->add_option("--retrieval", o.retrieval, "pq or exact")->check(CLI::IsMember({"pq", "exact"}));
}

std::string relative_to(const fs::path& target, const fs::path& base_dir) {
    const fs::path abs_target = fs::absolute(target).lexically_normal();
    const fs::path abs_base = fs::absolute(base_dir.empty() ? fs::path(".") : base_dir).lexically_normal();
    const fs::path rel = abs_target.lexically_relative(abs_base);
    return (rel.empty() ? abs_target : rel).generic_string();
}

EngineFiles resolve_engine_files(const EngineOptions& o, std::size_t k, std::size_t nprobe) {
    EngineFiles f;
    f.index = o.index;
    f.mode = parse_retrieval_mode(o.retrieval);
    f.default_k = k;
    f.default_nprobe = nprobe;

    const PQIndex probe = load_index(o.index);
    const fs::path base = fs::path(o.index).parent_path();
    auto recorded = [&](const char* key) -> std::optional<fs::path> {
        auto it = probe.meta().find(key);
        if (it == probe.meta().end() || it->second.empty()) return std::nullopt;
        const fs::path p(it->second);
        return p.is_absolute() ? p : base / p;
    };
    auto pick = [&](const std::string& flag, const char* key) -> std::optional<fs::path> {
        if (!flag.empty()) return fs::path(flag);
        return recorded(key);
    };

    auto table = pick(o.table, "table");
    auto manifest = pick(o.manifest, "manifest");
    if (!table) throw_usage("--table is required (the index does not record one)");
    if (!manifest) throw_usage("--manifest is required (the index does not record one)");
    f.table = *table;
    f.manifest = *manifest;
    f.weights = pick(o.weights, "weights");
    if (!o.exact.empty()) f.exact = fs::path(o.exact);
    if (!o.encoder.empty()) f.encoder = o.encoder;
    return f;
}

void print_ranking(std::ostream& out, const SearchEngine& engine, const RetrievalResult& r) {
    std::size_t id_width = 8;
    for (const auto& h : r.hits) id_width = std::max(id_width, h.image_id.size());
    out << std::left << std::setw(6) << "rank" << std::setw(static_cast<int>(id_width) + 2) << "image_id"
        << std::setw(14) << "distance" << "uri\n";
    for (std::size_t i = 0; i < r.hits.size(); ++i) {
        const auto& h = r.hits[i];
        const auto* uri = engine.uri(h.image_id);
        char dist[32];
        std::snprintf(dist, sizeof dist, "%.6f", h.distance);
        out << std::left << std::setw(6) << (i + 1) << std::setw(static_cast<int>(id_width) + 2) << h.image_id
            << std::setw(14) << dist << (uri && *uri ? **uri : std::string("-")) << '\n';
    }
}

int cmd_gen(const GenOptions& o, std::ostream& out, std::ostream&) {
    DatasetManifest m = generate_manifest(o.spec);
    if (!o.uri_prefix.empty()) {
        for (auto& r : m.records) r.uri = o.uri_prefix + r.image_id;
    }
    if (o.queries > 0 && o.queries_out.empty()) throw_usage("--queries needs --queries-out");
    if (!o.queries_out.empty() && o.queries == 0) throw_usage("--queries-out needs --queries N");

    save_manifest(m, o.out);
    out << "wrote " << m.records.size() << " images to " << o.out << '\n';
    if (!o.table_out.empty()) {
        const auto vocab = synthetic_vocabulary(o.spec.classes);
        save_embedding_table(ClassEmbeddingTable::synthetic(vocab, o.dim, o.spec.seed), o.table_out);
        out << "wrote " << vocab.size() << "-class table (dim " << o.dim << ") to " << o.table_out << '\n';
    }
    if (!o.weights_out.empty()) {
        EncoderArch arch;
        arch.in_channels = static_cast<int>(o.dim);
        save_weights(init_weights(o.spec.seed, arch), o.weights_out);
        out << "wrote encoder weights to " << o.weights_out << '\n';
    }
    if (o.queries > 0) {
        save_queries(generate_queries(o.spec, o.queries), o.queries_out);
        out << "wrote " << o.queries << " queries to " << o.queries_out << '\n';
    }
    return kOk;
}

EmbeddingSet load_external_embeddings(const fs::path& path, const DatasetManifest& manifest) {
    const std::string text = read_file(path);
    std::unordered_map<std::string, std::vector<float>> rows;
    std::size_t dim = 0;
    std::vector<std::string> issues;
    std::istringstream in(text);
    std::string line;
    for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "line " + std::to_string(line_no) + ": ";
        const json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            issues.push_back(where + "malformed JSON");
            continue;
        }
        if (!j.contains("image_id") || !j["image_id"].is_string() || !j.contains("embedding") ||
            !j["embedding"].is_array()) {
            issues.push_back(where + "expected {\"image_id\": string, \"embedding\": [numbers]}");
            continue;
        }
        std::vector<float> v;
        v.reserve(j["embedding"].size());
        bool ok = true;
        for (const auto& x : j["embedding"]) {
            if (!x.is_number()) {
                ok = false;
                break;
            }
            v.push_back(x.get<float>());
        }
        if (!ok || v.empty()) {
            issues.push_back(where + "embedding must be a non-empty array of numbers");
            continue;
        }
        if (dim == 0) dim = v.size();
        if (v.size() != dim) {
            issues.push_back(where + "dimension " + std::to_string(v.size()) + ", expected " + std::to_string(dim));
            continue;
        }
        const std::string id = j["image_id"].get<std::string>();
        if (!rows.emplace(id, std::move(v)).second) issues.push_back(where + "duplicate image_id '" + id + "'");
    }
    for (const auto& r : manifest.records) {
        if (!rows.contains(r.image_id)) issues.push_back("no embedding for image '" + r.image_id + "'");
    }
    if (rows.size() > manifest.records.size()) {
        for (const auto& [id, _] : rows) {
            if (!manifest.find(id)) issues.push_back("embedding for unknown image '" + id + "'");
        }
    }
    if (!issues.empty()) throw ValidationError(std::move(issues));

    EmbeddingSet set(dim);
    for (const auto& r : manifest.records) {
        auto v = normalize_embedding(std::move(rows.at(r.image_id)));
        set.add(r.image_id, v.values);
    }
    return set;
}

int cmd_build(const BuildOptions& o, std::ostream& out, std::ostream& err) {
    const DatasetManifest manifest = load_manifest(o.manifest);
    if (manifest.records.empty()) throw_data("manifest " + o.manifest + " has no images");
    const ClassEmbeddingTable table = load_embedding_table(o.table);

    std::string encoder_name = o.encoder.empty() ? (o.weights.empty() ? "bypass" : "ft") : o.encoder;
    if (encoder_name == "ft" && o.weights.empty()) throw_usage("--encoder ft needs --weights");
    if (encoder_name == "bypass" && !o.weights.empty()) {
        err << "warning: --weights is ignored with --encoder bypass\n";
    }
    const SpatialEncoder encoder = encoder_name == "ft"
                                           ? SpatialEncoder::with_weights(load_weights(o.weights))
                                           : SpatialEncoder::bypass(static_cast<int>(table.dim()));
    if (encoder.input_channels() != static_cast<int>(table.dim())) {
        throw_data("encoder expects " + std::to_string(encoder.input_channels()) +
                   " channels, table has dimension " + std::to_string(table.dim()));
    }

    EmbeddingSet corpus;
    if (o.mode == "mirror") {
        if (!o.embeddings.empty()) throw_usage("--embeddings is only used with --mode external");
        corpus = embed_corpus(manifest, table, encoder);
    } else {
        if (o.embeddings.empty()) throw_usage("--mode external needs --embeddings");
        corpus = load_external_embeddings(o.embeddings, manifest);
        if (corpus.dim != encoder.output_dim()) {
            throw_data("external embeddings have dimension " + std::to_string(corpus.dim) + " but the " +
                       encoder_name + " query encoder produces " + std::to_string(encoder.output_dim()));
        }
    }

    IndexConfig cfg;
    cfg.proj_dim = o.proj_dim;
    cfg.m = o.m;
    cfg.seed = o.seed;
    cfg.kmeans_iters = o.kmeans_iters;
    if (o.nlist == "auto") {
        cfg.nlist = suggested_nlist(corpus.size());
    } else {
        std::size_t pos = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(o.nlist, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != o.nlist.size() || v == 0) throw_usage("--nlist must be a positive integer or 'auto'");
        cfg.nlist = v;
    }
    if (cfg.proj_dim > corpus.dim) {
        err << "warning: --proj-dim " << cfg.proj_dim << " exceeds the embedding dimension " << corpus.dim
            << "; using " << corpus.dim << '\n';
        cfg.proj_dim = corpus.dim;
    }

    std::vector<std::string> warnings;
    PQIndex index = build_index(corpus, cfg, &warnings);
    for (const auto& w : warnings) err << "warning: " << w << '\n';

    const fs::path out_path(o.out);
    const fs::path base = out_path.parent_path();
    index.set_meta("encoder", encoder_name);
    index.set_meta("mode", o.mode);
    index.set_meta("table", relative_to(o.table, base));
    index.set_meta("manifest", relative_to(o.manifest, base));
    if (encoder_name == "ft") index.set_meta("weights", relative_to(o.weights, base));

    if (o.exact_sidecar) save_embeddings(corpus, exact_sidecar_path(out_path));
    save_index(index, out_path);
    out << "indexed " << index.size() << " images (" << encoder_name << ", " << o.mode << ", dim "
        << corpus.dim << " -> " << index.proj_dim() << ", nlist " << index.nlist() << ", m "
        << index.pq().m() << ") into " << o.out << '\n';
    if (o.exact_sidecar) out << "exact embeddings: " << exact_sidecar_path(out_path).string() << '\n';
    return kOk;
}

int cmd_query(const QueryOptions& o, std::ostream& out, std::ostream&) {
    const QueryRequest req = parse_query_request(read_file(o.canvas));
    // Flags win over values carried in the canvas file.
    const std::size_t k = !o.k_given && req.k ? static_cast<std::size_t>(*req.k) : o.k;
    const std::size_t nprobe = !o.nprobe_given && req.nprobe ? static_cast<std::size_t>(*req.nprobe) : o.nprobe;
    const SearchEngine engine = open_engine(resolve_engine_files(o.engine, k, nprobe));
    const auto resp = engine.query(req.canvas, k, nprobe);
    if (o.json_output) {
        json results = json::array();
        for (const auto& h : resp.result.hits) {
            const auto* uri = engine.uri(h.image_id);
            results.push_back({{"image_id", h.image_id},
                               {"distance", h.distance},
                               {"uri", uri && *uri ? json(**uri) : json(nullptr)}});
        }
        out << json{{"results", results}}.dump(2) << '\n';
    } else {
        print_ranking(out, engine, resp.result);
    }
    return kOk;
}

int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream&) {
    o.config.validate();
    const auto queries = load_queries(o.queries);
    if (queries.empty()) throw_data("queries file " + o.queries + " is empty");
    const SearchEngine engine = open_engine(resolve_engine_files(o.engine, o.config.cutoff, o.nprobe));
    const EvalReport report = engine.evaluate(queries, o.config, o.nprobe);
    if (!o.out.empty()) write_file_atomic(o.out, report.to_json() + "\n");
    out << (o.format == "json" ? report.to_json() + "\n" : report.to_table());
    return kOk;
}

int cmd_serve(const ServeOptions& o, std::ostream& out, std::ostream& err) {
    ServiceConfig cfg = load_service_config(o.config);
    if (o.port >= 0) cfg.port = o.port;
    auto engine = std::make_shared<const SearchEngine>(open_engine(cfg.files));
    SearchService service(engine, cfg.cors_origin);
    err << "serving " << engine->corpus_size() << " images on http://" << cfg.host << ':' << cfg.port << '\n';
    if (!service.listen(cfg.host, cfg.port)) {
        throw_data("could not listen on " + cfg.host + ":" + std::to_string(cfg.port));
    }
    out << "stopped\n";
    return kOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Compositional spatial image search: corpus generation, indexing, querying, evaluation."};
    app.name(args.empty() ? "canvas-search" : fs::path(args[0]).filename().string());
    app.require_subcommand(1);
    std::size_t threads = 0;
    app.add_option("--threads", threads, "Worker threads (0 = all cores); results do not depend on it");

    GenOptions gen;
    auto* g = app.add_subcommand("gen-synthetic", "Generate a seeded random corpus");
    g->add_option("--classes", gen.spec.classes, "Vocabulary size")->required()->check(CLI::PositiveNumber);
    g->add_option("--images", gen.spec.images, "Number of images")->required();
    g->add_option("--seed", gen.spec.seed, "Random seed")->required();
    g->add_option("--out", gen.out, "Manifest output (JSON Lines)")->required();
    g->add_option("--uri-prefix", gen.uri_prefix, "Set each uri to <prefix><image_id>");
    g->add_option("--table-out", gen.table_out, "Also write a synthetic class embedding table");
    g->add_option("--dim", gen.dim, "Table dimension")->check(CLI::PositiveNumber);
    g->add_option("--weights-out", gen.weights_out, "Also write seeded encoder weights");
    g->add_option("--queries", gen.queries, "Number of random evaluation queries");
    g->add_option("--queries-out", gen.queries_out, "Queries output (JSON Lines)");

    BuildOptions build;
    auto* b = app.add_subcommand("build-index", "Embed a corpus and build a compressed index");
    b->add_option("--manifest", build.manifest, "Corpus manifest")->required();
    b->add_option("--table", build.table, "Class embedding table")->required();
    b->add_option("--weights", build.weights, "Encoder weights (ft encoder)");
    b->add_option("--encoder", build.encoder, "ft or bypass (default: ft when --weights is given)")
        ->check(CLI::IsMember({"ft", "bypass"}));
    b->add_option("--mode", build.mode, "mirror: embed annotations; external: read --embeddings")
        ->check(CLI::IsMember({"mirror", "external"}));
    b->add_option("--embeddings", build.embeddings, "JSON Lines of {image_id, embedding} (external mode)");
    b->add_option("--out", build.out, "Index output")->required();
    b->add_flag("--exact-sidecar", build.exact_sidecar, "Also store exact embeddings in <out>.exact");
    b->add_option("--proj-dim", build.proj_dim, "Projected dimension")->check(CLI::PositiveNumber);
    b->add_option("--nlist", build.nlist, "Coarse cells, or 'auto' to scale with corpus size");
    b->add_option("--m", build.m, "Sub-quantizers (bytes per code)")->check(CLI::PositiveNumber);
    b->add_option("--seed", build.seed, "Training seed");
    b->add_option("--kmeans-iters", build.kmeans_iters, "k-means iteration cap")->check(CLI::PositiveNumber);

    QueryOptions query;
    auto* q = app.add_subcommand("query", "Run one canvas query and print the ranking");
    add_engine_flags(q, query.engine);
    q->add_option("--canvas", query.canvas, "Query JSON file")->required();
    auto* q_k = q->add_option("--k", query.k, "Results to return")->check(CLI::PositiveNumber);
    auto* q_nprobe = q->add_option("--nprobe", query.nprobe, "Cells to visit")->check(CLI::PositiveNumber);
    q->add_flag("--json", query.json_output, "Print JSON instead of a table");

    EvalOptions eval;
    auto* e = app.add_subcommand("eval", "Score a queries file against the corpus annotations");
    add_engine_flags(e, eval.engine);
    e->add_option("--queries", eval.queries, "Queries file (JSON Lines)")->required();
    e->add_option("--tau", eval.config.tau, "Relevance threshold");
    e->add_option("--cutoff", eval.config.cutoff, "Ranking depth for AP and NDCG");
    e->add_option("--p-at", eval.config.p_at, "Depth for precision");
    e->add_option("--nprobe", eval.nprobe, "Cells to visit")->check(CLI::PositiveNumber);
    e->add_option("--format", eval.format, "table or json")->check(CLI::IsMember({"table", "json"}));
    e->add_option("--out", eval.out, "Also write the JSON report here");

    ServeOptions serve;
    auto* s = app.add_subcommand("serve", "Start the HTTP search service");
    s->add_option("--config", serve.config, "key = value service config")->required();
    s->add_option("--port", serve.port, "Override the configured port")->check(CLI::Range(0, 65535));

    // CLI11 consumes a reversed argument vector without the program name.
    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << '\n';
        if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
            err << "run '" << app.get_name() << ' ' << sub->get_name() << " --help' for usage\n";
        } else {
            err << "run '" << app.get_name() << " --help' for usage\n";
        }
        return kUsage;
    }

    query.k_given = q_k->count() > 0;
    query.nprobe_given = q_nprobe->count() > 0;
    set_thread_count(threads);
    try {
        if (g->parsed()) return cmd_gen(gen, out, err);
        if (b->parsed()) return cmd_build(build, out, err);
        if (q->parsed()) return cmd_query(query, out, err);
        if (e->parsed()) return cmd_eval(eval, out, err);
        if (s->parsed()) return cmd_serve(serve, out, err);
        return kUsage;
    } catch (const ValidationError& ex) {
        err << "error: invalid input\n";
        for (const auto& issue : ex.issues()) err << "  " << issue << '\n';
        return ex.kind() == ErrorKind::Usage ? kUsage : kData;
    } catch (const Error& ex) {
        err << "error: " << ex.what() << '\n';
        switch (ex.kind()) {
        case ErrorKind::Usage: return kUsage;
        case ErrorKind::Data: return kData;
        case ErrorKind::Internal: return kInternal;
        }
        return kInternal;
    } catch (const fs::filesystem_error& ex) {
        err << "error: " << ex.what() << '\n';
        return kData;
    } catch (const std::exception& ex) {
        err << "internal error: " << ex.what() << '\n';
        return kInternal;
    }
}

} // namespace canvas_search::cli
