#include "canvas_search/service.hpp"

#include "canvas_search/error.hpp"
#include "canvas_search/io.hpp"

#include <httplib.h>
#include <json.hpp>

#include <charconv>
#include <thread>

namespace canvas_search {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
    T out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        throw_usage("config: '" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
    }
    return out;
}

HttpReply error_reply(int status, const std::string& message, const std::vector<std::string>& details = {}) {
    json j = {{"error", message}};
    if (!details.empty()) {
        j["details"] = details;
    }
    return {status, j.dump()};
}

} // namespace

ServiceConfig parse_service_config(std::string_view text, const std::filesystem::path& base_dir) {
    ServiceConfig cfg;
    auto path_of = [&](std::string_view v) {
        std::filesystem::path p{std::string(v)};
        return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    };
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw_usage("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string_view key = trim(line.substr(0, eq));
        std::string_view value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }
        if (key == "host") cfg.host = value;
        else if (key == "port") cfg.port = parse_number<int>(key, value);
        else if (key == "index") cfg.files.index = path_of(value);
        else if (key == "table") cfg.files.table = path_of(value);
        else if (key == "manifest") cfg.files.manifest = path_of(value);
        else if (key == "weights") cfg.files.weights = path_of(value);
        else if (key == "exact") cfg.files.exact = path_of(value);
        else if (key == "default_k") cfg.files.default_k = parse_number<std::size_t>(key, value);
        else if (key == "default_nprobe") cfg.files.default_nprobe = parse_number<std::size_t>(key, value);
        else if (key == "encoder") cfg.files.encoder = std::string(value);
        else if (key == "retrieval") cfg.files.mode = parse_retrieval_mode(value);
        else if (key == "cors_origin") cfg.cors_origin = value;
        else throw_usage("config line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    }
    if (cfg.port < 0 || cfg.port > 65535) {
        throw_usage("config: port out of range");
    }
    return cfg;
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
    ServiceConfig cfg = parse_service_config(read_file(path), path.parent_path());
    std::vector<std::string> missing;
    auto need = [&](const char* key, const std::optional<std::filesystem::path>& p, bool required) {
        if (!p || p->empty()) {
            if (required) missing.push_back(std::string(key) + ": not set");
            return;
        }
        if (!std::filesystem::exists(*p)) {
            missing.push_back(std::string(key) + ": " + p->string() + " does not exist");
        }
    };
    need("table", cfg.files.table, true);
    need("manifest", cfg.files.manifest, true);
    need("index", cfg.files.index, cfg.files.mode == RetrievalMode::PQ);
    need("weights", cfg.files.weights, cfg.files.encoder.value_or("") == "ft");
    need("exact", cfg.files.exact, false);
    if (!missing.empty()) {
        throw ValidationError(std::move(missing));
    }
    return cfg;
}

HttpReply handle_query(const SearchEngine* engine, std::string_view body) {
    if (!engine) {
        return error_reply(503, "index not loaded");
    }
    QueryRequest req;
    try {
        req = parse_query_request(body);
    } catch (const ValidationError& e) {
        return error_reply(400, "invalid query", e.issues());
    }
    try {
        const auto resp = engine->query(req.canvas,
                                        req.k ? std::optional<std::size_t>(*req.k) : std::nullopt,
                                        req.nprobe ? std::optional<std::size_t>(*req.nprobe) : std::nullopt);
        json results = json::array();
        for (const auto& h : resp.result.hits) {
            json r = {{"image_id", h.image_id}, {"distance", h.distance}};
            const auto* uri = engine->uri(h.image_id);
            r["uri"] = uri && *uri ? json(**uri) : json(nullptr);
            results.push_back(std::move(r));
        }
        json out = {{"results", std::move(results)},
                    {"timing_ms",
                     {{"tensor", resp.timing.tensor_ms},
                      {"encode", resp.timing.encode_ms},
                      {"search", resp.timing.search_ms},
                      {"total", resp.timing.total_ms}}}};
        return {200, out.dump()};
    } catch (const ValidationError& e) {
        return error_reply(400, "invalid query", e.issues());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Internal) {
            return error_reply(500, e.what());
        }
        return error_reply(400, e.what());
    }
}

HttpReply handle_classes(const SearchEngine* engine) {
    if (!engine) {
        return error_reply(503, "index not loaded");
    }
    return {200, json{{"classes", engine->table().labels()}}.dump()};
}

HttpReply handle_status(const SearchEngine* engine) {
    if (!engine) {
        return error_reply(503, "index not loaded");
    }
    json j = {{"corpus_size", engine->corpus_size()},
              {"encoder", std::string(engine->encoder().mode_name())},
              {"retrieval", std::string(to_string(engine->mode()))},
              {"embedding_dim", engine->encoder().output_dim()},
              {"default_k", engine->default_k()},
              {"default_nprobe", engine->default_nprobe()},
              {"classes", engine->table().size()}};
    if (const auto& idx = engine->index()) {
        j["index"] = {{"count", idx->size()},
                      {"nlist", idx->nlist()},
                      {"m", idx->pq().m()},
                      {"ksub", idx->pq().ksub()},
                      {"proj_dim", idx->proj_dim()},
                      {"seed", idx->config().seed},
                      {"meta", idx->meta()}};
    } else {
        j["index"] = nullptr;
    }
    j["exact_count"] = engine->exact() ? json(engine->exact()->size()) : json(nullptr);
    return {200, j.dump()};
}

struct SearchService::Impl {
    std::shared_ptr<const SearchEngine> engine;
    std::string cors_origin;
    httplib::Server server;
    std::thread thread;
};

SearchService::SearchService(std::shared_ptr<const SearchEngine> engine, std::string cors_origin)
        : impl_(std::make_unique<Impl>()) {
    impl_->engine = std::move(engine);
    impl_->cors_origin = std::move(cors_origin);
    auto& srv = impl_->server;
    Impl* impl = impl_.get();

    auto reply = [impl](httplib::Response& res, const HttpReply& r) {
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };
    srv.set_post_routing_handler([impl](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", impl->cors_origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
    srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    srv.Post("/query", [impl, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, handle_query(impl->engine.get(), req.body));
    });
    srv.Get("/classes", [impl, reply](const httplib::Request&, httplib::Response& res) {
        reply(res, handle_classes(impl->engine.get()));
    });
    srv.Get("/status", [impl, reply](const httplib::Request&, httplib::Response& res) {
        reply(res, handle_status(impl->engine.get()));
    });
    srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (res.body.empty()) {
            const std::string msg = res.status == 404 ? "no route for " + req.method + " " + req.path
                                                      : "request failed";
            res.set_content(json{{"error", msg}}.dump(), "application/json");
        }
    });
    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string msg = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            msg = e.what();
        } catch (...) {
        }
        res.status = 500;
        res.set_content(json{{"error", msg}}.dump(), "application/json");
    });
}

SearchService::~SearchService() { stop(); }

int SearchService::start(const std::string& host, int port) {
    auto& srv = impl_->server;
    const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
    if (bound < 0) {
        return -1;
    }
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

bool SearchService::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

void SearchService::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) {
        impl_->thread.join();
    }
}

} // namespace canvas_search
