#pragma once

#include "canvas_search/engine.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

namespace canvas_search {

/// Startup settings, read from a key = value file:
///
///   host = 127.0.0.1
///   port = 8080
///   index = corpus.cspq
///   table = table.json
///   manifest = corpus.jsonl
///   weights = encoder.cswt
///   exact = corpus.cspq.exact
///   default_k = 20
///   default_nprobe = 16
///   encoder = ft              # or bypass
///   retrieval = pq            # or exact
///   cors_origin = *
///
/// Relative paths resolve against the config file's directory. Blank lines
/// and '#' comments are ignored.
struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    EngineFiles files;
    std::string cors_origin = "*";
};

ServiceConfig parse_service_config(std::string_view text, const std::filesystem::path& base_dir = {});

/// Parses the file and checks that every referenced file exists.
ServiceConfig load_service_config(const std::filesystem::path& path);

struct HttpReply {
    int status = 200;
    std::string body;  // JSON
};

/// Route handlers, independent of the transport. A null engine means nothing
/// is loaded and yields 503.
HttpReply handle_query(const SearchEngine* engine, std::string_view body);
HttpReply handle_classes(const SearchEngine* engine);
HttpReply handle_status(const SearchEngine* engine);

/// HTTP/1.1 server exposing POST /query, GET /classes and GET /status with
/// CORS headers. The engine is shared read-only between handler threads.
class SearchService {
public:
    SearchService(std::shared_ptr<const SearchEngine> engine, std::string cors_origin = "*");
    ~SearchService();

    SearchService(const SearchService&) = delete;
    SearchService& operator=(const SearchService&) = delete;

    /// Binds `host` on `port` (0 picks a free port) and returns the bound port,
    /// or -1 on failure. Requests are served on a background thread.
    int start(const std::string& host, int port);

    /// Blocks serving requests until stop() is called.
    bool listen(const std::string& host, int port);

    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace canvas_search
