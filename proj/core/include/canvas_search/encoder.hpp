#pragma once

#include "canvas_search/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace canvas_search {

/// Flattened, L2-normalized search embedding.
struct Embedding {
    std::vector<float> values;

    std::size_t size() const { return values.size(); }
    std::span<const float> span() const { return values; }

    friend bool operator==(const Embedding&, const Embedding&) = default;
};

/// Scales `raw` to unit L2 norm. Throws Error(Data) on non-finite entries or a
/// zero vector ("zero embedding").
Embedding normalize_embedding(std::vector<float> raw);

/// 3x3 kernels, stride 1, zero padding 1.
struct ConvKernel {
    int out_channels = 0;
    int in_channels = 0;
    std::vector<float> weights;  // out x in x 3 x 3
    std::vector<float> bias;     // out

    friend bool operator==(const ConvKernel&, const ConvKernel&) = default;
};

/// Cross-correlation with zero padding 1, stride 1. Throws Error(Usage) when
/// the kernel does not match the input channels or its buffers are mis-sized.
Tensor3 conv2d(const Tensor3& input, const ConvKernel& kernel);

/// Inference-mode batch normalization parameters for one layer.
struct BatchNorm {
    std::vector<float> scale;
    std::vector<float> shift;
    std::vector<float> running_mean;
    std::vector<float> running_var;

    friend bool operator==(const BatchNorm&, const BatchNorm&) = default;
};

inline constexpr float kBatchNormEpsilon = 1e-5f;

void batch_norm_inplace(Tensor3& t, const BatchNorm& bn);
void relu_inplace(Tensor3& t);

/// 2x2 max-pooling with stride 2; odd sizes are floored.
Tensor3 maxpool2x2(const Tensor3& t);

struct EncoderArch {
    int in_channels = 256;
    std::vector<int> channels{384, 512, 832};
    int grid = 31;

    /// Side of the output tensor: grid halved (floor) once per pooling stage.
    int output_side() const;
    std::size_t output_dim() const;

    friend bool operator==(const EncoderArch&, const EncoderArch&) = default;
};

struct ConvLayer {
    ConvKernel conv;
    BatchNorm bn;

    friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

/// Parameters of the three-layer spatial encoder. Layer order is
/// conv -> BN -> ReLU -> 2x2 pool for all but the last layer, which has no pool.
struct EncoderWeights {
    EncoderArch arch;
    std::vector<ConvLayer> layers;

    friend bool operator==(const EncoderWeights&, const EncoderWeights&) = default;
};

/// Seeded He-uniform kernels, zero bias, identity batch norm.
EncoderWeights init_weights(std::uint64_t seed, const EncoderArch& arch = {});

/// Shape of every intermediate tensor, recorded by encoder_forward.
struct ForwardTrace {
    struct Stage {
        std::string name;
        int channels;
        int height;
        int width;
    };
    std::vector<Stage> stages;
    double pre_norm = 0.0;  // L2 norm of the flattened output before normalization
};

/// Runs the layer stack, flattens channel-major, normalizes.
Embedding encoder_forward(const QueryTensor& tensor, const EncoderWeights& weights,
                          ForwardTrace* trace = nullptr);

/// Weights file: "CSWT0001", JSON header with arch and blob offsets, raw f32
/// little-endian blobs, CRC-32.
std::string serialize_weights(const EncoderWeights& w);
EncoderWeights deserialize_weights(std::string_view bytes);
void save_weights(const EncoderWeights& w, const std::filesystem::path& path);
EncoderWeights load_weights(const std::filesystem::path& path);

/// Either the learned-weights encoder or the bypass that max-pools the query
/// tensor straight to the output grid and flattens it.
class SpatialEncoder {
public:
    enum class Mode { Weights, Bypass };

    static SpatialEncoder with_weights(EncoderWeights weights);
    static SpatialEncoder bypass(int input_channels, int output_side = 7);

    Mode mode() const { return mode_; }
    std::string_view mode_name() const { return mode_ == Mode::Weights ? "ft" : "bypass"; }
    int input_channels() const;
    std::size_t output_dim() const;

    Embedding encode(const QueryTensor& tensor, ForwardTrace* trace = nullptr) const;

private:
    Mode mode_ = Mode::Bypass;
    EncoderWeights weights_;
    int bypass_channels_ = 0;
    int bypass_side_ = 7;
};

} // namespace canvas_search
