#include "canvas_search/encoder.hpp"

#include "canvas_search/error.hpp"
#include "canvas_search/io.hpp"
#include "canvas_search/parallel.hpp"
#include "canvas_search/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>

namespace canvas_search {

using nlohmann::json;

namespace {

// Register tile: kMR output channels by kNR output pixels, two vectors per row.
#if defined(__AVX__)
using VecF = float __attribute__((vector_size(32)));
#else
using VecF = float __attribute__((vector_size(16)));
#endif
constexpr int kLanes = sizeof(VecF) / sizeof(float);
constexpr int kMR = 6;
constexpr int kNR = 2 * kLanes;
// Reduction block (input channels x taps) kept hot in cache.
constexpr int kKC = 256;

int round_up(int v, int m) { return (v + m - 1) / m * m; }

inline VecF load(const float* p) {
    VecF v;
    __builtin_memcpy(&v, p, sizeof(v));
    return v;
}

inline void store(float* p, VecF v) { __builtin_memcpy(p, &v, sizeof(v)); }

// acc[r][c] += sum_k w[k][r] * col[k][c] over one reduction block.
inline void micro_kernel(int kc, const float* __restrict w, const float* __restrict col,
                         float* __restrict acc) {
    VecF lo[kMR];
    VecF hi[kMR];
    for (int r = 0; r < kMR; ++r) {
        lo[r] = load(acc + r * kNR);
        hi[r] = load(acc + r * kNR + kLanes);
    }
    for (int k = 0; k < kc; ++k) {
        const VecF c0 = load(col + k * kNR);
        const VecF c1 = load(col + k * kNR + kLanes);
        const float* wk = w + k * kMR;
        for (int r = 0; r < kMR; ++r) {
            const VecF b = VecF{} + wk[r];
            lo[r] += b * c0;
            hi[r] += b * c1;
        }
    }
    for (int r = 0; r < kMR; ++r) {
        store(acc + r * kNR, lo[r]);
        store(acc + r * kNR + kLanes, hi[r]);
    }
}

#if !defined(__AVX__) && defined(__x86_64__)
// Portable builds still use AVX2 when the CPU has it: one 8-lane vector spans
// a whole kNR row, two panels per call. No FMA, so every element is summed in
// the same order as micro_kernel and results are bit-identical.
using Vec8 = float __attribute__((vector_size(32)));
static_assert(kNR == 8);

__attribute__((target("avx2"))) void micro_kernel_x2_avx2(int kc, const float* __restrict w,
                                                          const float* __restrict col0,
                                                          const float* __restrict col1,
                                                          float* __restrict acc0, float* __restrict acc1) {
    Vec8 a0[kMR];
    Vec8 a1[kMR];
    for (int r = 0; r < kMR; ++r) {
        __builtin_memcpy(&a0[r], acc0 + r * kNR, sizeof(Vec8));
        __builtin_memcpy(&a1[r], acc1 + r * kNR, sizeof(Vec8));
    }
    for (int k = 0; k < kc; ++k) {
        Vec8 c0;
        Vec8 c1;
        __builtin_memcpy(&c0, col0 + k * kNR, sizeof(Vec8));
        __builtin_memcpy(&c1, col1 + k * kNR, sizeof(Vec8));
        const float* wk = w + k * kMR;
        for (int r = 0; r < kMR; ++r) {
            const Vec8 b = Vec8{} + wk[r];
            a0[r] += b * c0;
            a1[r] += b * c1;
        }
    }
    for (int r = 0; r < kMR; ++r) {
        __builtin_memcpy(acc0 + r * kNR, &a0[r], sizeof(Vec8));
        __builtin_memcpy(acc1 + r * kNR, &a1[r], sizeof(Vec8));
    }
}

const bool kHaveAvx2 = __builtin_cpu_supports("avx2");
#else
constexpr bool kHaveAvx2 = false;
#endif

void kernel_block(int kc, const float* w, const float* col, std::size_t col_stride, float* acc,
                  int panels) {
    int pp = 0;
#if !defined(__AVX__) && defined(__x86_64__)
    if (kHaveAvx2) {
        for (; pp + 1 < panels; pp += 2) {
            micro_kernel_x2_avx2(kc, w, col + pp * col_stride, col + (pp + 1) * col_stride,
                                 acc + static_cast<std::size_t>(pp) * kMR * kNR,
                                 acc + static_cast<std::size_t>(pp + 1) * kMR * kNR);
        }
    }
#endif
    for (; pp < panels; ++pp) {
        micro_kernel(kc, w, col + pp * col_stride, acc + static_cast<std::size_t>(pp) * kMR * kNR);
    }
}

} // namespace

Embedding normalize_embedding(std::vector<float> raw) {
    double norm2 = 0.0;
    for (float v : raw) {
        if (!std::isfinite(v)) {
            throw_data("embedding contains NaN or Inf");
        }
        norm2 += static_cast<double>(v) * v;
    }
    if (!(norm2 > 0.0)) {
        throw_data("zero embedding: the encoder produced an all-zero vector");
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (float& v : raw) {
        v = static_cast<float>(v * inv);
    }
    return Embedding{std::move(raw)};
}

Tensor3 conv2d(const Tensor3& input, const ConvKernel& kernel) {
    if (kernel.in_channels != input.channels) {
        throw_usage("conv2d: kernel expects " + std::to_string(kernel.in_channels) +
                    " input channels, got " + std::to_string(input.channels));
    }
    if (kernel.out_channels < 1 ||
        kernel.weights.size() != static_cast<std::size_t>(kernel.out_channels) * kernel.in_channels * 9 ||
        kernel.bias.size() != static_cast<std::size_t>(kernel.out_channels)) {
        throw_usage("conv2d: kernel buffers do not match the declared shape");
    }
    if (input.data.size() != static_cast<std::size_t>(input.channels) * input.height * input.width) {
        throw_usage("conv2d: input buffer does not match its shape");
    }

    const int H = input.height;
    const int W = input.width;
    const int P = H * W;
    const int K = input.channels * 9;
    const int Cout = kernel.out_channels;
    const int p_panels = round_up(P, kNR) / kNR;
    const int c_panels = round_up(Cout, kMR) / kMR;

    // im2col, packed into kNR-wide column panels: col[panel][k][kNR].
    std::vector<float> col(static_cast<std::size_t>(p_panels) * K * kNR, 0.0f);
    for (int ci = 0; ci < input.channels; ++ci) {
        for (int t = 0; t < 9; ++t) {
            const int dy = t / 3 - 1;
            const int dx = t % 3 - 1;
            const int k = ci * 9 + t;
            for (int p = 0; p < P; ++p) {
                const int y = p / W + dy;
                const int x = p % W + dx;
                if (y < 0 || y >= H || x < 0 || x >= W) {
                    continue;
                }
                col[(static_cast<std::size_t>(p / kNR) * K + k) * kNR + p % kNR] = input.at(ci, y, x);
            }
        }
    }

    // Weights packed into kMR-tall row panels: w[panel][k][kMR].
    std::vector<float> wp(static_cast<std::size_t>(c_panels) * K * kMR, 0.0f);
    for (int co = 0; co < Cout; ++co) {
        for (int k = 0; k < K; ++k) {
            wp[(static_cast<std::size_t>(co / kMR) * K + k) * kMR + co % kMR] =
                    kernel.weights[static_cast<std::size_t>(co) * K + k];
        }
    }

    Tensor3 out(Cout, H, W);
    // Each task owns distinct output channels; every output sums bias first,
    // then k in ascending order, whatever the thread count.
    parallel_for(static_cast<std::size_t>(c_panels), 4, [&](std::size_t begin, std::size_t end) {
        std::vector<float> acc(static_cast<std::size_t>(p_panels) * kMR * kNR);
        for (std::size_t a = begin; a < end; ++a) {
            for (int pp = 0; pp < p_panels; ++pp) {
                for (int r = 0; r < kMR; ++r) {
                    const int co = static_cast<int>(a) * kMR + r;
                    const float b = co < Cout ? kernel.bias[co] : 0.0f;
                    std::fill_n(acc.data() + (static_cast<std::size_t>(pp) * kMR + r) * kNR, kNR, b);
                }
            }
            for (int k0 = 0; k0 < K; k0 += kKC) {
                const int kc = std::min(kKC, K - k0);
                const float* wpanel = wp.data() + (a * K + k0) * kMR;
                kernel_block(kc, wpanel, col.data() + static_cast<std::size_t>(k0) * kNR,
                             static_cast<std::size_t>(K) * kNR, acc.data(), p_panels);
            }
            for (int r = 0; r < kMR; ++r) {
                const int co = static_cast<int>(a) * kMR + r;
                if (co >= Cout) {
                    break;
                }
                float* dst = out.data.data() + static_cast<std::size_t>(co) * P;
                for (int p = 0; p < P; ++p) {
                    dst[p] = acc[(static_cast<std::size_t>(p / kNR) * kMR + r) * kNR + p % kNR];
                }
            }
        }
    });
    return out;
}

void batch_norm_inplace(Tensor3& t, const BatchNorm& bn) {
    const auto C = static_cast<std::size_t>(t.channels);
    if (bn.scale.size() != C || bn.shift.size() != C || bn.running_mean.size() != C ||
        bn.running_var.size() != C) {
        throw_usage("batch norm parameters do not match channel count");
    }
    for (int c = 0; c < t.channels; ++c) {
        const float inv = 1.0f / std::sqrt(bn.running_var[c] + kBatchNormEpsilon);
        const float a = bn.scale[c] * inv;
        const float b = bn.shift[c] - bn.running_mean[c] * a;
        for (float& v : t.channel(c)) {
            v = v * a + b;
        }
    }
}

void relu_inplace(Tensor3& t) {
    for (float& v : t.data) {
        v = std::max(v, 0.0f);
    }
}

Tensor3 maxpool2x2(const Tensor3& t) {
    Tensor3 out(t.channels, t.height / 2, t.width / 2);
    for (int c = 0; c < t.channels; ++c) {
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                out.at(c, y, x) = std::max({t.at(c, 2 * y, 2 * x), t.at(c, 2 * y, 2 * x + 1),
                                            t.at(c, 2 * y + 1, 2 * x), t.at(c, 2 * y + 1, 2 * x + 1)});
            }
        }
    }
    return out;
}

int EncoderArch::output_side() const {
    int side = grid;
    for (std::size_t i = 0; i + 1 < channels.size(); ++i) {
        side /= 2;
    }
    return side;
}

std::size_t EncoderArch::output_dim() const {
    const auto side = static_cast<std::size_t>(output_side());
    return static_cast<std::size_t>(channels.empty() ? 0 : channels.back()) * side * side;
}

namespace {

void check_arch(const EncoderArch& arch) {
    if (arch.in_channels < 1 || arch.channels.empty() || arch.grid < 1) {
        throw_usage("encoder arch needs positive input channels, grid and at least one layer");
    }
    for (int c : arch.channels) {
        if (c < 1) {
            throw_usage("encoder arch channel widths must be positive");
        }
    }
    if (arch.output_side() < 1) {
        throw_usage("encoder arch pools the grid away to nothing");
    }
}

void check_weights(const EncoderWeights& w) {
    check_arch(w.arch);
    if (w.layers.size() != w.arch.channels.size()) {
        throw_data("weights have " + std::to_string(w.layers.size()) + " layers, arch declares " +
                   std::to_string(w.arch.channels.size()));
    }
    int in = w.arch.in_channels;
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
        const auto& l = w.layers[i];
        const auto out = static_cast<std::size_t>(w.arch.channels[i]);
        if (l.conv.in_channels != in || l.conv.out_channels != w.arch.channels[i] ||
            l.conv.weights.size() != out * static_cast<std::size_t>(in) * 9 || l.conv.bias.size() != out ||
            l.bn.scale.size() != out || l.bn.shift.size() != out || l.bn.running_mean.size() != out ||
            l.bn.running_var.size() != out) {
            throw_data("weights layer " + std::to_string(i + 1) + " does not match the arch");
        }
        in = w.arch.channels[i];
    }
}

} // namespace

EncoderWeights init_weights(std::uint64_t seed, const EncoderArch& arch) {
    check_arch(arch);
    EncoderWeights w{arch, {}};
    SplitMix64 rng(mix_seed(seed, 0x5EEDC0DEULL));
    int in = arch.in_channels;
    for (int out : arch.channels) {
        ConvLayer l;
        l.conv.in_channels = in;
        l.conv.out_channels = out;
        l.conv.weights.resize(static_cast<std::size_t>(out) * in * 9);
        // He-uniform: variance 2 / fan_in keeps ReLU activations at unit scale.
        const double bound = std::sqrt(6.0 / (static_cast<double>(in) * 9.0));
        for (float& v : l.conv.weights) {
            v = static_cast<float>(rng.uniform(-bound, bound));
        }
        l.conv.bias.assign(out, 0.0f);
        l.bn.scale.assign(out, 1.0f);
        l.bn.shift.assign(out, 0.0f);
        l.bn.running_mean.assign(out, 0.0f);
        l.bn.running_var.assign(out, 1.0f);
        w.layers.push_back(std::move(l));
        in = out;
    }
    return w;
}

Embedding encoder_forward(const QueryTensor& tensor, const EncoderWeights& weights, ForwardTrace* trace) {
    check_weights(weights);
    if (tensor.channels != weights.arch.in_channels) {
        throw_usage("encoder expects " + std::to_string(weights.arch.in_channels) +
                    " input channels, tensor has " + std::to_string(tensor.channels));
    }
    if (tensor.height != weights.arch.grid || tensor.width != weights.arch.grid) {
        throw_usage("encoder expects a " + std::to_string(weights.arch.grid) + "x" +
                    std::to_string(weights.arch.grid) + " grid");
    }
    for (float v : tensor.data) {
        if (!std::isfinite(v)) {
            throw_data("query tensor contains NaN or Inf");
        }
    }
    auto record = [trace](std::string name, const Tensor3& t) {
        if (trace) {
            trace->stages.push_back({std::move(name), t.channels, t.height, t.width});
        }
    };
    record("input", tensor);

    Tensor3 x = tensor;
    for (std::size_t i = 0; i < weights.layers.size(); ++i) {
        const auto& l = weights.layers[i];
        const std::string tag = "conv" + std::to_string(i + 1);
        x = conv2d(x, l.conv);
        batch_norm_inplace(x, l.bn);
        relu_inplace(x);
        record(tag, x);
        if (i + 1 < weights.layers.size()) {
            x = maxpool2x2(x);
            record("pool" + std::to_string(i + 1), x);
        }
    }
    if (trace) {
        double n2 = 0.0;
        for (float v : x.data) n2 += static_cast<double>(v) * v;
        trace->pre_norm = std::sqrt(n2);
        trace->stages.push_back({"flatten", static_cast<int>(x.data.size()), 1, 1});
    }
    return normalize_embedding(std::move(x.data));
}

std::string serialize_weights(const EncoderWeights& w) {
    check_weights(w);
    std::string payload;
    json blobs = json::array();
    auto add = [&](const std::string& name, const std::vector<float>& v, std::vector<int> shape) {
        const auto off = append_floats(payload, v);
        blobs.push_back({{"name", name}, {"offset", off}, {"count", v.size()}, {"shape", shape}});
    };
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
        const auto& l = w.layers[i];
        const std::string p = "conv" + std::to_string(i + 1);
        add(p + ".weight", l.conv.weights, {l.conv.out_channels, l.conv.in_channels, 3, 3});
        add(p + ".bias", l.conv.bias, {l.conv.out_channels});
        add(p + ".bn.scale", l.bn.scale, {l.conv.out_channels});
        add(p + ".bn.shift", l.bn.shift, {l.conv.out_channels});
        add(p + ".bn.running_mean", l.bn.running_mean, {l.conv.out_channels});
        add(p + ".bn.running_var", l.bn.running_var, {l.conv.out_channels});
    }
    json header = {
            {"arch",
             {{"in_channels", w.arch.in_channels},
              {"channels", w.arch.channels},
              {"grid", w.arch.grid},
              {"kernel", 3},
              {"padding", 1},
              {"bn_epsilon", kBatchNormEpsilon}}},
            {"dtype", "f32le"},
            {"blobs", std::move(blobs)},
    };
    return encode_container({"CSWT0001", header.dump(), std::move(payload)});
}

EncoderWeights deserialize_weights(std::string_view bytes) {
    const Container c = decode_container(bytes, "CSWT", 1);
    json h = json::parse(c.header, nullptr, false);
    if (h.is_discarded() || !h.is_object()) {
        throw_data("weights header is not valid JSON");
    }
    try {
        if (h.at("dtype").get<std::string>() != "f32le") {
            throw_data("weights dtype must be f32le");
        }
        EncoderWeights w;
        const auto& a = h.at("arch");
        w.arch.in_channels = a.at("in_channels").get<int>();
        w.arch.channels = a.at("channels").get<std::vector<int>>();
        w.arch.grid = a.at("grid").get<int>();
        if (a.at("kernel").get<int>() != 3 || a.at("padding").get<int>() != 1) {
            throw_data("weights: only 3x3 kernels with padding 1 are supported");
        }
        check_arch(w.arch);

        std::map<std::string, std::pair<json, std::vector<float>>> blobs;
        for (const auto& b : h.at("blobs")) {
            blobs[b.at("name").get<std::string>()] = {
                    b.at("shape"),
                    read_floats(c.payload, b.at("offset").get<std::uint64_t>(), b.at("count").get<std::uint64_t>())};
        }
        auto take = [&](const std::string& name, std::vector<int> shape) {
            auto it = blobs.find(name);
            if (it == blobs.end()) {
                throw_data("weights: missing blob " + name);
            }
            if (it->second.first.get<std::vector<int>>() != shape) {
                throw_data("weights: shape descriptor mismatch for " + name);
            }
            return std::move(it->second.second);
        };
        int in = w.arch.in_channels;
        for (std::size_t i = 0; i < w.arch.channels.size(); ++i) {
            const int out = w.arch.channels[i];
            const std::string p = "conv" + std::to_string(i + 1);
            ConvLayer l;
            l.conv.in_channels = in;
            l.conv.out_channels = out;
            l.conv.weights = take(p + ".weight", {out, in, 3, 3});
            l.conv.bias = take(p + ".bias", {out});
            l.bn.scale = take(p + ".bn.scale", {out});
            l.bn.shift = take(p + ".bn.shift", {out});
            l.bn.running_mean = take(p + ".bn.running_mean", {out});
            l.bn.running_var = take(p + ".bn.running_var", {out});
            w.layers.push_back(std::move(l));
            in = out;
        }
        check_weights(w);
        return w;
    } catch (const json::exception& e) {
        throw_data(std::string("weights header: ") + e.what());
    }
}

void save_weights(const EncoderWeights& w, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_weights(w));
}

EncoderWeights load_weights(const std::filesystem::path& path) {
    return deserialize_weights(read_file(path));
}

SpatialEncoder SpatialEncoder::with_weights(EncoderWeights weights) {
    check_weights(weights);
    SpatialEncoder e;
    e.mode_ = Mode::Weights;
    e.weights_ = std::move(weights);
    return e;
}

SpatialEncoder SpatialEncoder::bypass(int input_channels, int output_side) {
    if (input_channels < 1 || output_side < 1) {
        throw_usage("bypass encoder needs positive channels and output side");
    }
    SpatialEncoder e;
    e.mode_ = Mode::Bypass;
    e.bypass_channels_ = input_channels;
    e.bypass_side_ = output_side;
    return e;
}

int SpatialEncoder::input_channels() const {
    return mode_ == Mode::Weights ? weights_.arch.in_channels : bypass_channels_;
}

std::size_t SpatialEncoder::output_dim() const {
    if (mode_ == Mode::Weights) {
        return weights_.arch.output_dim();
    }
    return static_cast<std::size_t>(bypass_channels_) * bypass_side_ * bypass_side_;
}

Embedding SpatialEncoder::encode(const QueryTensor& tensor, ForwardTrace* trace) const {
    if (mode_ == Mode::Weights) {
        return encoder_forward(tensor, weights_, trace);
    }
    if (tensor.channels != bypass_channels_) {
        throw_usage("bypass encoder expects " + std::to_string(bypass_channels_) + " channels");
    }
    Tensor3 pooled = maxpool_to_grid(tensor, bypass_side_);
    if (trace) {
        trace->stages.push_back({"input", tensor.channels, tensor.height, tensor.width});
        trace->stages.push_back({"pool", pooled.channels, pooled.height, pooled.width});
        double n2 = 0.0;
        for (float v : pooled.data) n2 += static_cast<double>(v) * v;
        trace->pre_norm = std::sqrt(n2);
    }
    return normalize_embedding(std::move(pooled.data));
}

} // namespace canvas_search
