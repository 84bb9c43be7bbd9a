#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace canvas_search {

/// Loss terms of the spatial encoder's training objective, evaluated as
/// diagnostics. Nothing here computes gradients.

double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// 1 - cos(query, image), in [0, 2].
double sim_loss(std::span<const float> query, std::span<const float> image);

inline constexpr double kContrastiveMargin = 0.3;

/// [margin + d(query, positive) - d(query, negative)]_+ with d the cosine
/// distance 1 - cos.
double contrastive_loss(std::span<const float> query, std::span<const float> positive,
                        std::span<const float> negative, double margin = kContrastiveMargin);

struct LossWeights {
    double sim = 0.80;
    double ce = 0.15;
    double con = 0.05;
};

double total_loss(double sim, double ce, double con, const LossWeights& w = {});

/// Target distribution over the class vocabulary, uniform over the classes
/// present in an image.
struct ClassLikelihood {
    std::vector<double> probs;

    /// Throws Error(Data) when `present` is empty or contains an index out of range.
    static ClassLikelihood uniform_over(std::span<const std::size_t> present, std::size_t num_classes);
};

/// Two fully connected layers, input -> hidden (ReLU) -> class logits.
struct ClassifierHead {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 4096;
    std::size_t num_classes = 0;
    std::vector<float> w1;  // hidden x input
    std::vector<float> b1;  // hidden
    std::vector<float> w2;  // classes x hidden
    std::vector<float> b2;  // classes

    /// Seeded uniform init scaled by fan-in.
    static ClassifierHead init(std::size_t input_dim, std::size_t num_classes, std::uint64_t seed,
                               std::size_t hidden_dim = 4096);

    std::vector<double> logits(std::span<const float> index_tensor) const;
};

/// -sum target * log softmax(logits). Throws Error(Data) when the target does
/// not sum to 1 within 1e-9 or has negative entries.
double ce_loss(std::span<const double> logits, const ClassLikelihood& target);
double ce_loss(const ClassifierHead& head, std::span<const float> index_tensor,
               const ClassLikelihood& target);

} // namespace canvas_search
