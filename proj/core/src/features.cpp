#include "canvas_search/features.hpp"

#include "canvas_search/error.hpp"
#include "canvas_search/io.hpp"
#include "canvas_search/random.hpp"

#include <json.hpp>

#include <cmath>
#include <set>

namespace canvas_search {

using nlohmann::json;

FeatureVector embed_class(std::string_view label, std::size_t dim, std::uint64_t seed) {
    if (dim == 0) {
        throw_usage("feature dimension must be at least 1");
    }
    SplitMix64 rng(mix_seed(fnv1a64(label), seed));
    std::vector<double> raw(dim);
    double norm2 = 0.0;
    for (auto& v : raw) {
        v = rng.normal();
        norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    FeatureVector out(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        out[i] = static_cast<float>(raw[i] * inv);
    }
    return out;
}

ClassEmbeddingTable::ClassEmbeddingTable(std::size_t dim, std::map<std::string, FeatureVector> classes,
                                         Provenance provenance)
        : dim_(dim), classes_(std::move(classes)), provenance_(provenance) {
    if (classes_.empty()) {
        throw_data("embedding table has no classes");
    }
    if (dim_ == 0) {
        throw_data("embedding table dimension must be positive");
    }
    for (const auto& [label, v] : classes_) {
        if (label.empty()) {
            throw_data("embedding table has an empty class label");
        }
        if (v.size() != dim_) {
            throw_data("dimension mismatch for class '" + label + "': " + std::to_string(v.size()) +
                       " != " + std::to_string(dim_));
        }
    }
}

ClassEmbeddingTable ClassEmbeddingTable::synthetic(std::span<const std::string> labels, std::size_t dim,
                                                   std::uint64_t seed) {
    std::map<std::string, FeatureVector> classes;
    for (const auto& l : labels) {
        if (!classes.emplace(l, embed_class(l, dim, seed)).second) {
            throw_data("duplicate class label '" + l + "'");
        }
    }
    return ClassEmbeddingTable(dim, std::move(classes), Provenance::Synthetic);
}

const FeatureVector& ClassEmbeddingTable::at(const std::string& label) const {
    auto it = classes_.find(label);
    if (it == classes_.end()) {
        throw_data("class '" + label + "' is not in the embedding table");
    }
    return it->second;
}

std::vector<std::string> ClassEmbeddingTable::labels() const {
    std::vector<std::string> out;
    out.reserve(classes_.size());
    for (const auto& [label, _] : classes_) {
        out.push_back(label);
    }
    return out;
}

ClassEmbeddingTable parse_embedding_table(std::string_view text) {
    if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
        throw_data("embedding table: no classes (empty file)");
    }
    // nlohmann keeps the last of duplicate keys silently; catch them while parsing.
    std::string duplicate;
    std::set<std::string> seen;
    json::parser_callback_t cb = [&](int depth, json::parse_event_t event, json& parsed) {
        if (event == json::parse_event_t::key && depth == 2) {
            const auto key = parsed.get<std::string>();
            if (!seen.insert(key).second && duplicate.empty()) {
                duplicate = key;
            }
        }
        return true;
    };
    json j = json::parse(text, cb, false);
    if (j.is_discarded() || !j.is_object()) {
        throw_data("embedding table: malformed file");
    }
    if (!duplicate.empty()) {
        throw_data("embedding table: duplicate label '" + duplicate + "'");
    }
    auto classes = j.find("classes");
    if (classes == j.end() || !classes->is_object()) {
        throw_data("embedding table: missing \"classes\" object");
    }
    if (classes->empty()) {
        throw_data("embedding table: no classes");
    }
    std::size_t dim = 0;
    if (auto d = j.find("dim"); d != j.end()) {
        if (!d->is_number_unsigned() || d->get<std::size_t>() == 0) {
            throw_data("embedding table: \"dim\" must be a positive integer");
        }
        dim = d->get<std::size_t>();
    } else {
        throw_data("embedding table: missing \"dim\"");
    }
    std::map<std::string, FeatureVector> out;
    for (const auto& [label, arr] : classes->items()) {
        if (!arr.is_array()) {
            throw_data("embedding table: class '" + label + "' is not an array");
        }
        FeatureVector v;
        v.reserve(arr.size());
        for (const auto& x : arr) {
            if (!x.is_number()) {
                throw_data("embedding table: non-numeric value for class '" + label + "'");
            }
            v.push_back(x.get<float>());
        }
        out.emplace(label, std::move(v));
    }
    return ClassEmbeddingTable(dim, std::move(out), ClassEmbeddingTable::Provenance::Loaded);
}

std::string format_embedding_table(const ClassEmbeddingTable& table) {
    json classes = json::object();
    for (const auto& [label, v] : table.classes()) {
        classes[label] = v;
    }
    json j = {{"dim", table.dim()}, {"classes", std::move(classes)}};
    return j.dump();
}

ClassEmbeddingTable load_embedding_table(const std::filesystem::path& path) {
    return parse_embedding_table(read_file(path));
}

void save_embedding_table(const ClassEmbeddingTable& table, const std::filesystem::path& path) {
    write_file_atomic(path, format_embedding_table(table));
}

} // namespace canvas_search
