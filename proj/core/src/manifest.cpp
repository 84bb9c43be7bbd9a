#include "canvas_search/manifest.hpp"

#include "canvas_search/error.hpp"
#include "canvas_search/io.hpp"

#include <json.hpp>

#include <unordered_set>

namespace canvas_search {

using nlohmann::json;

namespace {

// Reads one {"class": ..., "bbox": [...]} object, appending problems to `issues`.
std::optional<ObjectPlacement> parse_object(const json& j, const std::string& where,
                                            std::vector<std::string>& issues) {
    if (!j.is_object()) {
        issues.push_back(where + ": expected an object");
        return std::nullopt;
    }
    ObjectPlacement p;
    bool ok = true;
    auto cls = j.find("class");
    if (cls == j.end() || !cls->is_string()) {
        issues.push_back(where + ".class: expected a string");
        ok = false;
    } else {
        p.class_label = cls->get<std::string>();
    }
    auto box = j.find("bbox");
    if (box == j.end() || !box->is_array() || box->size() != 4) {
        issues.push_back(where + ".bbox: expected [x0, y0, x1, y1]");
        ok = false;
    } else {
        double c[4];
        for (std::size_t i = 0; i < 4; ++i) {
            if (!(*box)[i].is_number()) {
                issues.push_back(where + ".bbox[" + std::to_string(i) + "]: expected a number");
                ok = false;
                break;
            }
            c[i] = (*box)[i].get<double>();
        }
        if (ok) {
            p.bbox = {c[0], c[1], c[2], c[3]};
        }
    }
    if (!ok) {
        return std::nullopt;
    }
    return p;
}

std::vector<ObjectPlacement> parse_objects(const json& j, const std::string& where,
                                           std::vector<std::string>& issues) {
    std::vector<ObjectPlacement> out;
    if (!j.is_array()) {
        issues.push_back(where + ": expected an array");
        return out;
    }
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (auto p = parse_object(j[i], where + "[" + std::to_string(i) + "]", issues)) {
            out.push_back(std::move(*p));
        }
    }
    return out;
}

json objects_to_json(const std::vector<ObjectPlacement>& objects) {
    json arr = json::array();
    for (const auto& o : objects) {
        arr.push_back({{"class", o.class_label},
                       {"bbox", {o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1}}});
    }
    return arr;
}

template <typename F>
void for_each_line(std::string_view text, F&& f) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.find_first_not_of(" \t") == std::string_view::npos) {
            continue;
        }
        f(line, line_no);
    }
}

} // namespace

const ManifestRecord* DatasetManifest::find(std::string_view image_id) const {
    for (const auto& r : records) {
        if (r.image_id == image_id) {
            return &r;
        }
    }
    return nullptr;
}

DatasetManifest parse_manifest(std::string_view jsonl) {
    DatasetManifest m;
    std::unordered_set<std::string> seen;
    std::vector<std::string> issues;
    for_each_line(jsonl, [&](std::string_view line, std::size_t line_no) {
        const std::string where = "line " + std::to_string(line_no);
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            issues.push_back(where + ": malformed JSON record");
            return;
        }
        ManifestRecord r;
        auto id = j.find("image_id");
        if (id == j.end() || !id->is_string() || id->get<std::string>().empty()) {
            issues.push_back(where + ".image_id: expected a non-empty string");
            return;
        }
        r.image_id = id->get<std::string>();
        if (!seen.insert(r.image_id).second) {
            issues.push_back(where + ": duplicate image_id '" + r.image_id + "'");
        }
        if (auto uri = j.find("uri"); uri != j.end() && !uri->is_null()) {
            if (!uri->is_string()) {
                issues.push_back(where + ".uri: expected a string");
            } else {
                r.uri = uri->get<std::string>();
            }
        }
        auto objs = j.find("objects");
        if (objs == j.end()) {
            issues.push_back(where + ".objects: missing");
        } else {
            r.objects = parse_objects(*objs, where + ".objects", issues);
            for (std::size_t i = 0; i < r.objects.size(); ++i) {
                for (auto& issue : bbox_issues(r.objects[i].bbox)) {
                    issues.push_back(where + ".objects[" + std::to_string(i) + "]: " + issue);
                }
            }
        }
        m.records.push_back(std::move(r));
    });
    if (!issues.empty()) {
        throw ValidationError(std::move(issues));
    }
    return m;
}

std::string format_manifest(const DatasetManifest& manifest) {
    std::string out;
    for (const auto& r : manifest.records) {
        json j = {{"image_id", r.image_id}};
        if (r.uri) {
            j["uri"] = *r.uri;
        }
        j["objects"] = objects_to_json(r.objects);
        out += j.dump();
        out += '\n';
    }
    return out;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    return parse_manifest(read_file(path));
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    write_file_atomic(path, format_manifest(manifest));
}

QueryRequest parse_query_request(std::string_view text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw ValidationError({"body: malformed JSON"});
    }
    if (!j.is_object()) {
        throw ValidationError({"body: expected a JSON object"});
    }
    std::vector<std::string> issues;
    QueryRequest q;

    auto int_field = [&](const char* name) -> std::optional<int> {
        auto it = j.find(name);
        if (it == j.end() || it->is_null()) {
            return std::nullopt;
        }
        if (!it->is_number_integer()) {
            issues.push_back(std::string(name) + ": expected an integer");
            return std::nullopt;
        }
        return it->get<int>();
    };

    if (auto id = j.find("query_id"); id != j.end() && !id->is_null()) {
        if (id->is_string()) {
            q.query_id = id->get<std::string>();
        } else {
            issues.push_back("query_id: expected a string");
        }
    }
    if (auto w = int_field("width")) {
        q.canvas.width = *w;
    }
    if (auto h = int_field("height")) {
        q.canvas.height = *h;
    }
    q.k = int_field("k");
    q.nprobe = int_field("nprobe");
    if (q.k && *q.k < 1) {
        issues.push_back("k: must be at least 1");
    }
    if (q.nprobe && *q.nprobe < 1) {
        issues.push_back("nprobe: must be at least 1");
    }
    auto objs = j.find("objects");
    if (objs == j.end()) {
        issues.push_back("objects: missing");
    } else {
        q.canvas.placements = parse_objects(*objs, "objects", issues);
    }
    if (!issues.empty()) {
        throw ValidationError(std::move(issues));
    }
    return q;
}

std::string format_query_request(const QueryRequest& q) {
    json j = json::object();
    if (q.query_id) {
        j["query_id"] = *q.query_id;
    }
    j["width"] = q.canvas.width;
    j["height"] = q.canvas.height;
    j["objects"] = objects_to_json(q.canvas.placements);
    if (q.k) {
        j["k"] = *q.k;
    }
    if (q.nprobe) {
        j["nprobe"] = *q.nprobe;
    }
    return j.dump();
}

std::vector<QueryRequest> load_queries(const std::filesystem::path& path) {
    std::vector<QueryRequest> out;
    const std::string text = read_file(path);
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        try {
            out.push_back(parse_query_request(line));
        } catch (const ValidationError& e) {
            auto issues = e.issues();
            for (auto& i : issues) {
                i = path.filename().string() + " line " + std::to_string(line_no) + ": " + i;
            }
            throw ValidationError(std::move(issues));
        }
    });
    return out;
}

void save_queries(const std::vector<QueryRequest>& queries, const std::filesystem::path& path) {
    std::string out;
    for (const auto& q : queries) {
        out += format_query_request(q);
        out += '\n';
    }
    write_file_atomic(path, out);
}

} // namespace canvas_search
