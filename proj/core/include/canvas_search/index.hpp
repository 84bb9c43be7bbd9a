#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace canvas_search {

/// Row-major set of vectors, optionally labelled with image ids.
struct EmbeddingSet {
    std::size_t dim = 0;
    std::vector<std::string> ids;
    std::vector<float> data;

    EmbeddingSet() = default;
    explicit EmbeddingSet(std::size_t d) : dim(d) {}

    std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
    std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }

    /// Appends a vector; throws Error(Data) on a dimension mismatch.
    void add(std::string id, std::span<const float> v);

    friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;
};

/// Exact-retrieval sidecar: "CSEX0001", JSON header, ids and f32 rows, CRC-32.
std::string serialize_embeddings(const EmbeddingSet& set);
EmbeddingSet deserialize_embeddings(std::string_view bytes);
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet load_embeddings(const std::filesystem::path& path);

struct Hit {
    std::string image_id;
    double distance = 0.0;

    friend bool operator==(const Hit&, const Hit&) = default;
};

/// Ascending by distance, ties broken by ascending image id.
struct RetrievalResult {
    std::vector<Hit> hits;

    friend bool operator==(const RetrievalResult&, const RetrievalResult&) = default;
};

/// Exhaustive L2 ranking; reference for every compressed-search measurement.
RetrievalResult exact_search(const EmbeddingSet& corpus, std::span<const float> query, std::size_t k);

double squared_l2(std::span<const float> a, std::span<const float> b);

/// Mean-centered linear map onto the top principal directions.
struct Projection {
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::vector<float> mean;   // input_dim
    std::vector<float> basis;  // output_dim x input_dim, orthonormal rows

    std::vector<float> apply(std::span<const float> x) const;
    /// Maps a projected vector back into input space (mean + basis^T y).
    std::vector<float> unapply(std::span<const float> y) const;

    friend bool operator==(const Projection&, const Projection&) = default;
};

/// PCA via a symmetric eigensolve of the covariance (or of the Gram matrix
/// when there are fewer vectors than dimensions). Directions beyond the data
/// rank are completed with seeded Gram-Schmidt. Throws Error(Usage) when
/// out_dim exceeds the input dimension or the set is empty.
Projection fit_pca(const EmbeddingSet& vectors, std::size_t out_dim, std::uint64_t seed = 0);

struct KMeansResult {
    std::size_t k = 0;
    std::size_t dim = 0;
    std::vector<float> centroids;           // k x dim
    std::vector<std::uint32_t> assignment;  // per input vector
    std::vector<double> inertia;            // after each assignment step
};

/// k-means++ seeding then Lloyd iterations until assignments settle or
/// max_iters is reached. Empty clusters are moved onto the point farthest
/// from its centroid. Throws Error(Usage) when k exceeds the vector count.
KMeansResult kmeans(std::span<const float> data, std::size_t dim, std::size_t k, std::uint64_t seed,
                    int max_iters = 25);

/// Index of the nearest row of `centroids`; ties go to the lowest index.
std::size_t nearest_centroid(std::span<const float> x, std::span<const float> centroids, std::size_t dim);

/// m subquantizers over contiguous sub-vectors, one byte per code.
class ProductQuantizer {
public:
    ProductQuantizer() = default;
    ProductQuantizer(std::size_t dim, std::size_t m, std::size_t ksub);

    std::size_t dim() const { return dim_; }
    std::size_t m() const { return m_; }
    std::size_t ksub() const { return ksub_; }
    std::size_t dsub() const { return dsub_; }
    std::size_t code_size() const { return m_; }

    /// Trains every subquantizer with k-means on `n` row-major vectors.
    void train(std::span<const float> data, std::size_t n, std::uint64_t seed, int iters = 25);

    void encode(std::span<const float> x, std::span<std::uint8_t> code) const;
    void decode(std::span<const std::uint8_t> code, std::span<float> out) const;

    /// m x ksub table of squared distances from each query sub-vector to
    /// each codeword.
    void distance_table(std::span<const float> x, std::span<float> table) const;

    std::span<const float> codeword(std::size_t sub, std::size_t k) const {
        return {centroids_.data() + (sub * ksub_ + k) * dsub_, dsub_};
    }
    const std::vector<float>& centroids() const { return centroids_; }
    std::vector<float>& centroids() { return centroids_; }

    friend bool operator==(const ProductQuantizer&, const ProductQuantizer&) = default;

private:
    std::size_t dim_ = 0;
    std::size_t m_ = 0;
    std::size_t ksub_ = 0;
    std::size_t dsub_ = 0;
    std::vector<float> centroids_;  // m x ksub x dsub
};

struct IndexConfig {
    std::size_t proj_dim = 128;
    std::size_t nlist = 64;
    std::size_t m = 16;
    std::uint64_t seed = 0;
    int kmeans_iters = 25;

    friend bool operator==(const IndexConfig&, const IndexConfig&) = default;
};

/// Coarse cell count scaled with corpus size: the desk default for small
/// corpora, growing toward 1600 for million-scale collections.
std::size_t suggested_nlist(std::size_t corpus_size);

/// Coarse k-means quantizer plus residual product quantization over an
/// inverted file. Immutable once built; concurrent searches are safe.
class PQIndex {
public:
    struct InvertedList {
        std::vector<std::string> ids;
        std::vector<std::uint8_t> codes;  // ids.size() x m

        friend bool operator==(const InvertedList&, const InvertedList&) = default;
    };

    const IndexConfig& config() const { return config_; }
    std::size_t input_dim() const { return projection_.input_dim; }
    std::size_t proj_dim() const { return projection_.output_dim; }
    std::size_t nlist() const { return lists_.size(); }
    std::size_t size() const;

    const Projection& projection() const { return projection_; }
    const std::vector<float>& coarse_centroids() const { return coarse_; }
    const ProductQuantizer& pq() const { return pq_; }
    const std::vector<InvertedList>& lists() const { return lists_; }

    std::span<const float> coarse_centroid(std::size_t list) const {
        return {coarse_.data() + list * proj_dim(), proj_dim()};
    }

    /// Free-form build metadata (encoder mode, source) carried in the file header.
    const std::map<std::string, std::string>& meta() const { return meta_; }
    void set_meta(std::string key, std::string value) { meta_[std::move(key)] = std::move(value); }

    /// Coarse cell of an already projected vector.
    std::size_t assign(std::span<const float> projected) const;

    /// Projected-space reconstruction of a stored code: coarse centroid plus
    /// decoded residual.
    std::vector<float> reconstruct(std::size_t list, std::size_t offset) const;

    /// Encodes a projected vector, returning its cell and code.
    std::pair<std::size_t, std::vector<std::uint8_t>> encode(std::span<const float> projected) const;
    std::vector<float> decode(std::size_t list, std::span<const std::uint8_t> code) const;

    /// Asymmetric-distance search over the `nprobe` nearest cells. Distances
    /// are L2 in the projected space.
    RetrievalResult search(std::span<const float> query, std::size_t k, std::size_t nprobe) const;

    friend bool operator==(const PQIndex&, const PQIndex&) = default;

private:
    friend PQIndex build_index(const EmbeddingSet&, const IndexConfig&, std::vector<std::string>*);
    friend PQIndex deserialize_index(std::string_view);

    IndexConfig config_;
    Projection projection_;
    std::vector<float> coarse_;  // nlist x proj_dim
    ProductQuantizer pq_;
    std::vector<InvertedList> lists_;
    std::map<std::string, std::string> meta_;
};

/// Fits the projection, trains the coarse quantizer, trains per-subspace
/// codebooks on the residuals and encodes the corpus. When the corpus is too
/// small for the requested cell or codeword counts they are reduced and a
/// note is appended to `warnings`. The effective values land in config().
PQIndex build_index(const EmbeddingSet& corpus, const IndexConfig& config,
                    std::vector<std::string>* warnings = nullptr);

/// Index file: "CSPQ0001", JSON header, raw blobs, CRC-32.
std::string serialize_index(const PQIndex& index);
PQIndex deserialize_index(std::string_view bytes);
void save_index(const PQIndex& index, const std::filesystem::path& path);
PQIndex load_index(const std::filesystem::path& path);

} // namespace canvas_search
