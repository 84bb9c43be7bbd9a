#include "canvas_search/losses.hpp"

#include "canvas_search/error.hpp"
#include "canvas_search/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace canvas_search {

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw_usage("cosine: length mismatch " + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()));
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        throw_data("cosine of a zero vector is undefined");
    }
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double sim_loss(std::span<const float> query, std::span<const float> image) {
    return 1.0 - cosine_similarity(query, image);
}

double contrastive_loss(std::span<const float> query, std::span<const float> positive,
                        std::span<const float> negative, double margin) {
    const double d_pos = 1.0 - cosine_similarity(query, positive);
    const double d_neg = 1.0 - cosine_similarity(query, negative);
    return std::max(0.0, margin + d_pos - d_neg);
}

double total_loss(double sim, double ce, double con, const LossWeights& w) {
    return w.sim * sim + w.ce * ce + w.con * con;
}

ClassLikelihood ClassLikelihood::uniform_over(std::span<const std::size_t> present, std::size_t num_classes) {
    if (present.empty()) {
        throw_data("class likelihood needs at least one present class");
    }
    std::vector<std::size_t> uniq(present.begin(), present.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    ClassLikelihood c{std::vector<double>(num_classes, 0.0)};
    for (std::size_t i : uniq) {
        if (i >= num_classes) {
            throw_data("class index " + std::to_string(i) + " out of range");
        }
        c.probs[i] = 1.0 / static_cast<double>(uniq.size());
    }
    return c;
}

ClassifierHead ClassifierHead::init(std::size_t input_dim, std::size_t num_classes, std::uint64_t seed,
                                    std::size_t hidden_dim) {
    if (input_dim == 0 || num_classes == 0 || hidden_dim == 0) {
        throw_usage("classifier head dimensions must be positive");
    }
    ClassifierHead h;
    h.input_dim = input_dim;
    h.hidden_dim = hidden_dim;
    h.num_classes = num_classes;
    SplitMix64 rng(mix_seed(seed, 0xC1A55ULL));
    auto fill = [&](std::vector<float>& v, std::size_t n, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        v.resize(n);
        for (float& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
    };
    fill(h.w1, hidden_dim * input_dim, input_dim);
    fill(h.b1, hidden_dim, input_dim);
    fill(h.w2, num_classes * hidden_dim, hidden_dim);
    fill(h.b2, num_classes, hidden_dim);
    return h;
}

std::vector<double> ClassifierHead::logits(std::span<const float> x) const {
    if (x.size() != input_dim) {
        throw_usage("classifier head expects " + std::to_string(input_dim) + " inputs, got " +
                    std::to_string(x.size()));
    }
    std::vector<double> hidden(hidden_dim);
    for (std::size_t h = 0; h < hidden_dim; ++h) {
        const float* row = w1.data() + h * input_dim;
        double s = b1[h];
        for (std::size_t i = 0; i < input_dim; ++i) s += static_cast<double>(row[i]) * x[i];
        hidden[h] = std::max(0.0, s);
    }
    std::vector<double> out(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        const float* row = w2.data() + c * hidden_dim;
        double s = b2[c];
        for (std::size_t h = 0; h < hidden_dim; ++h) s += static_cast<double>(row[h]) * hidden[h];
        out[c] = s;
    }
    return out;
}

double ce_loss(std::span<const double> logits, const ClassLikelihood& target) {
    if (logits.size() != target.probs.size()) {
        throw_usage("cross-entropy: logits and target differ in length");
    }
    double sum = 0.0;
    for (double p : target.probs) {
        if (!(p >= 0.0)) {
            throw_data("cross-entropy: target has a negative or NaN entry");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw_data("cross-entropy: target is not normalized (sums to " + std::to_string(sum) + ")");
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    const double log_z = mx + std::log(z);
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (target.probs[i] > 0.0) {
            loss -= target.probs[i] * (logits[i] - log_z);
        }
    }
    return std::max(0.0, loss);
}

double ce_loss(const ClassifierHead& head, std::span<const float> index_tensor, const ClassLikelihood& target) {
    if (target.probs.size() != head.num_classes) {
        throw_usage("cross-entropy: target length does not match the head's classes");
    }
    const auto l = head.logits(index_tensor);
    return ce_loss(l, target);
}

} // namespace canvas_search
