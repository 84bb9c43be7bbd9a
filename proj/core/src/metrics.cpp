#include "canvas_search/metrics.hpp"

#include "canvas_search/error.hpp"
#include "canvas_search/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <unordered_map>

namespace canvas_search {

void EvalConfig::validate() const {
    if (!(tau > 0.0 && tau < 1.0)) {
        throw_usage("tau must lie in (0, 1)");
    }
    if (p_at < 1 || cutoff < p_at) {
        throw_usage("need cutoff >= p_at >= 1");
    }
}

double relevance(const Annotation& query, const Annotation& image) {
    if (query.objects.empty()) {
        throw_data("relevance: query '" + query.image_id + "' has no boxes");
    }
    double sum = 0.0;
    for (const auto& q : query.objects) {
        double best = 0.0;
        for (const auto& o : image.objects) {
            if (o.class_label == q.class_label) {
                best = std::max(best, iou(q.bbox, o.bbox));
            }
        }
        sum += best;
    }
    return sum / static_cast<double>(query.objects.size());
}

int binarize(double r, double tau) { return r > tau ? 1 : 0; }

double gain(double r, double tau) { return r > tau ? r : 0.0; }

Metric average_precision(std::span<const int> ranked_relevance, std::size_t total_relevant,
                         std::size_t cutoff) {
    if (total_relevant == 0) {
        return {0.0, true};
    }
    if (cutoff == 0) {
        cutoff = ranked_relevance.size();
    }
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(cutoff, ranked_relevance.size()); ++i) {
        if (ranked_relevance[i]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    const std::size_t denom = std::min(total_relevant, cutoff);
    if (denom == 0) {
        return {0.0, false};
    }
    return {sum / static_cast<double>(denom), false};
}

Metric ndcg(std::span<const double> ranked_gains, std::span<const double> ideal_gains, std::size_t cutoff) {
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(cutoff, ranked_gains.size()); ++i) {
        dcg += ranked_gains[i] / std::log2(static_cast<double>(i) + 2.0);
    }
    std::vector<double> ideal(ideal_gains.begin(), ideal_gains.end());
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(cutoff, ideal.size()); ++i) {
        idcg += ideal[i] / std::log2(static_cast<double>(i) + 2.0);
    }
    if (!(idcg > 0.0)) {
        return {0.0, true};
    }
    return {std::min(1.0, dcg / idcg), false};
}

double precision_at_k(std::span<const int> ranked_relevance, std::size_t k) {
    if (k == 0) {
        throw_usage("precision@k needs k >= 1");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, ranked_relevance.size()); ++i) {
        hits += ranked_relevance[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(k);
}

EvalReport evaluate_run(std::span<const Annotation> queries, const DatasetManifest& corpus,
                        std::span<const RetrievalResult> rankings, const EvalConfig& config) {
    config.validate();
    if (queries.size() != rankings.size()) {
        throw_data("evaluation needs one ranking per query: " + std::to_string(queries.size()) +
                   " queries, " + std::to_string(rankings.size()) + " rankings");
    }
    std::unordered_map<std::string_view, std::size_t> position;
    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
        position.emplace(corpus.records[i].image_id, i);
    }
    for (const auto& r : rankings) {
        for (const auto& h : r.hits) {
            if (!position.contains(h.image_id)) {
                throw_data("ranking references unknown image_id '" + h.image_id + "'");
            }
        }
    }

    EvalReport report;
    report.config = config;
    report.queries.resize(queries.size());
    parallel_for(queries.size(), 1, [&](std::size_t b, std::size_t e) {
        std::vector<double> rel(corpus.records.size());
        for (std::size_t qi = b; qi < e; ++qi) {
            const auto& q = queries[qi];
            std::size_t total_relevant = 0;
            std::vector<double> ideal;
            for (std::size_t i = 0; i < corpus.records.size(); ++i) {
                rel[i] = relevance(q, corpus.records[i].annotation());
                total_relevant += static_cast<std::size_t>(binarize(rel[i], config.tau));
                ideal.push_back(gain(rel[i], config.tau));
            }
            const auto& hits = rankings[qi].hits;
            const std::size_t depth = std::min(config.cutoff, hits.size());
            std::vector<int> binary(depth);
            std::vector<double> gains(depth);
            for (std::size_t r = 0; r < depth; ++r) {
                const double v = rel[position.at(hits[r].image_id)];
                binary[r] = binarize(v, config.tau);
                gains[r] = gain(v, config.tau);
            }
            // Normalized by min(relevant, cutoff) even when fewer results came back.
            const Metric ap = average_precision(binary, total_relevant, config.cutoff);
            const Metric nd = ndcg(gains, ideal, config.cutoff);
            auto& out = report.queries[qi];
            out.query_id = q.image_id.empty() ? "q" + std::to_string(qi) : q.image_id;
            out.ap = ap.value;
            out.ap_degenerate = ap.degenerate;
            out.ndcg = nd.value;
            out.ndcg_degenerate = nd.degenerate;
            out.precision = precision_at_k(binary, config.p_at);
            out.relevant_in_corpus = total_relevant;
        }
    });
    if (!report.queries.empty()) {
        for (const auto& q : report.queries) {
            report.mean_ap += q.ap;
            report.mean_ndcg += q.ndcg;
            report.mean_precision += q.precision;
        }
        const auto n = static_cast<double>(report.queries.size());
        report.mean_ap /= n;
        report.mean_ndcg /= n;
        report.mean_precision /= n;
    }
    return report;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["config"] = {{"tau", config.tau}, {"cutoff", config.cutoff}, {"p_at", config.p_at}};
    j["mean"] = {{"map", mean_ap}, {"ndcg", mean_ndcg}, {"precision_at_k", mean_precision}};
    auto arr = nlohmann::ordered_json::array();
    for (const auto& q : queries) {
        arr.push_back({{"query_id", q.query_id},
                       {"ap", q.ap},
                       {"ndcg", q.ndcg},
                       {"precision_at_k", q.precision},
                       {"relevant_in_corpus", q.relevant_in_corpus},
                       {"ap_degenerate", q.ap_degenerate},
                       {"ndcg_degenerate", q.ndcg_degenerate}});
    }
    j["queries"] = std::move(arr);
    return j.dump(2);
}

std::string EvalReport::to_table() const {
    std::size_t w = 8;
    for (const auto& q : queries) w = std::max(w, q.query_id.size());
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %8s  %8s\n", static_cast<int>(w), "query", "AP", "NDCG",
                  ("P@" + std::to_string(config.p_at)).c_str(), "relevant");
    out += buf;
    for (const auto& q : queries) {
        std::snprintf(buf, sizeof buf, "%-*s  %8.4f  %8.4f  %8.4f  %8zu%s\n", static_cast<int>(w),
                      q.query_id.c_str(), q.ap, q.ndcg, q.precision, q.relevant_in_corpus,
                      (q.ap_degenerate || q.ndcg_degenerate) ? "  (no relevant images)" : "");
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "%-*s  %8.4f  %8.4f  %8.4f\n", static_cast<int>(w), "mean", mean_ap,
                  mean_ndcg, mean_precision);
    out += buf;
    std::snprintf(buf, sizeof buf, "tau=%.3g cutoff=%zu queries=%zu\n", config.tau, config.cutoff,
                  queries.size());
    out += buf;
    return out;
}

} // namespace canvas_search
