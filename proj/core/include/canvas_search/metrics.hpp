#pragma once

#include "canvas_search/canvas.hpp"
#include "canvas_search/index.hpp"
#include "canvas_search/manifest.hpp"

#include <span>
#include <string>
#include <vector>

namespace canvas_search {

struct EvalConfig {
    double tau = 0.5;
    std::size_t cutoff = 200;
    std::size_t p_at = 20;

    /// Throws Error(Usage) unless tau is in (0,1) and cutoff >= p_at >= 1.
    void validate() const;
};

/// Mean over query boxes of the best same-class IoU among image boxes. An
/// image box may serve several query boxes. Throws Error(Data) when the query
/// has no boxes.
double relevance(const Annotation& query, const Annotation& image);

/// 1 when r > tau (strictly), else 0.
int binarize(double r, double tau);

/// r when r > tau, else 0.
double gain(double r, double tau);

/// A metric value plus a flag set when the value is a convention rather than
/// a measurement (nothing relevant to find).
struct Metric {
    double value = 0.0;
    bool degenerate = false;
};

/// Sum of precision@k at each relevant rank within the first `cutoff`
/// entries, divided by min(total_relevant, cutoff). A cutoff of 0 means the
/// list length. Zero relevant gives 0 with the flag set.
Metric average_precision(std::span<const int> ranked_relevance, std::size_t total_relevant,
                         std::size_t cutoff = 0);

/// Linear-gain DCG over the ranked list divided by the DCG of `ideal_gains`
/// sorted descending and truncated to `cutoff`. Zero ideal DCG gives 0 with
/// the flag set.
Metric ndcg(std::span<const double> ranked_gains, std::span<const double> ideal_gains, std::size_t cutoff);

/// Fraction of the first k entries that are relevant; missing entries count
/// as not relevant.
double precision_at_k(std::span<const int> ranked_relevance, std::size_t k);

struct QueryEval {
    std::string query_id;
    double ap = 0.0;
    double ndcg = 0.0;
    double precision = 0.0;
    std::size_t relevant_in_corpus = 0;
    bool ap_degenerate = false;
    bool ndcg_degenerate = false;

    friend bool operator==(const QueryEval&, const QueryEval&) = default;
};

struct EvalReport {
    EvalConfig config;
    std::vector<QueryEval> queries;
    double mean_ap = 0.0;
    double mean_ndcg = 0.0;
    double mean_precision = 0.0;

    std::string to_json() const;
    std::string to_table() const;

    friend bool operator==(const EvalReport& a, const EvalReport& b) {
        return a.queries == b.queries && a.mean_ap == b.mean_ap && a.mean_ndcg == b.mean_ndcg &&
               a.mean_precision == b.mean_precision && a.config.tau == b.config.tau &&
               a.config.cutoff == b.config.cutoff && a.config.p_at == b.config.p_at;
    }
};

/// Scores every ranking against the corpus annotations. Relevance is computed
/// against the whole corpus so AP and ideal DCG see every relevant image, not
/// only the retrieved ones. Throws Error(Data) when a ranking names an image
/// that is not in the manifest or the counts differ.
EvalReport evaluate_run(std::span<const Annotation> queries, const DatasetManifest& corpus,
                        std::span<const RetrievalResult> rankings, const EvalConfig& config = {});

} // namespace canvas_search
