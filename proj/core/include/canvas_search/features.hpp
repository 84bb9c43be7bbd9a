#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace canvas_search {

/// Unit-norm per-object appearance vector.
using FeatureVector = std::vector<float>;

/// Deterministic stand-in for a learned single-object encoder: the label and
/// seed are hashed into a stream of standard normals, then L2-normalized.
FeatureVector embed_class(std::string_view label, std::size_t dim, std::uint64_t seed);

/// Class label to appearance vector. Immutable once built.
class ClassEmbeddingTable {
public:
    enum class Provenance { Synthetic, Loaded };

    ClassEmbeddingTable() = default;

    /// Throws Error(Data) on an empty class map or mixed dimensions.
    ClassEmbeddingTable(std::size_t dim, std::map<std::string, FeatureVector> classes,
                        Provenance provenance);

    static ClassEmbeddingTable synthetic(std::span<const std::string> labels, std::size_t dim,
                                         std::uint64_t seed);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return classes_.size(); }
    Provenance provenance() const { return provenance_; }

    bool contains(const std::string& label) const { return classes_.contains(label); }

    /// Throws Error(Data) naming the label when it is not in the table.
    const FeatureVector& at(const std::string& label) const;

    /// Labels in ascending order.
    std::vector<std::string> labels() const;

    const std::map<std::string, FeatureVector>& classes() const { return classes_; }

    /// Equal dimension and bit-identical vectors; provenance is ignored.
    friend bool operator==(const ClassEmbeddingTable& a, const ClassEmbeddingTable& b) {
        return a.dim_ == b.dim_ && a.classes_ == b.classes_;
    }

private:
    std::size_t dim_ = 0;
    std::map<std::string, FeatureVector> classes_;
    Provenance provenance_ = Provenance::Synthetic;
};

/// Table file: {"dim": C, "classes": {"label": [f32, ...], ...}}
ClassEmbeddingTable parse_embedding_table(std::string_view json);
std::string format_embedding_table(const ClassEmbeddingTable& table);
ClassEmbeddingTable load_embedding_table(const std::filesystem::path& path);
void save_embedding_table(const ClassEmbeddingTable& table, const std::filesystem::path& path);

} // namespace canvas_search
