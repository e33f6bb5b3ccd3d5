#include "cvr/index.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cvr {

Index build_index(const std::map<std::uint64_t, Embedding>& entries) {
    if (entries.empty()) throw Error(ErrorKind::EmptyIndex, "build_index: no entries");
    const std::size_t m = entries.begin()->second.size();
    Index idx;
    idx.ids.reserve(entries.size());
    idx.rows = Mat(entries.size(), m);
    std::size_t i = 0;
    for (const auto& [id, emb] : entries) { // std::map iterates ascending
        if (emb.size() != m)
            throw Error(ErrorKind::ShapeError,
                        "build_index: dimension mismatch at id " + std::to_string(id));
        const Embedding unit = l2_normalize(emb);
        idx.ids.push_back(id);
        for (std::size_t j = 0; j < m; ++j) idx.rows.at(i, j) = unit[j];
        ++i;
    }
    return idx;
}

RankedResult top_k(const Index& index, const Embedding& query, std::size_t k,
                   std::uint64_t query_id, std::optional<std::uint64_t> exclude_id) {
    if (index.size() == 0) throw Error(ErrorKind::EmptyIndex, "top_k: empty index");
    if (k == 0) throw Error(ErrorKind::BadInput, "top_k: k must be >= 1");
    if (query.size() != index.rows.cols)
        throw Error(ErrorKind::ShapeError, "top_k: query dimension mismatch");

    std::vector<ScoredId> scored;
    scored.reserve(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (exclude_id && index.ids[i] == *exclude_id) continue;
        scored.push_back({index.ids[i], cosine_sim(query, index.rows.row_copy(i))});
    }
    if (scored.empty()) throw Error(ErrorKind::EmptyIndex, "top_k: all entries excluded");

    const std::size_t take = std::min(k, scored.size());
    auto by_score_then_id = [](const ScoredId& a, const ScoredId& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    };
    std::partial_sort(scored.begin(), scored.begin() + take, scored.end(), by_score_then_id);
    scored.resize(take);

    RankedResult res;
    res.query_id = query_id;
    res.hits = std::move(scored);
    return res;
}

double MetricsReport::at(std::size_t k) const {
    for (std::size_t i = 0; i < ks.size(); ++i)
        if (ks[i] == k) return recall[i];
    throw Error(ErrorKind::BadInput, "metrics report: no cutoff " + std::to_string(k));
}

MetricsReport make_metrics_report(std::vector<std::size_t> ks, std::vector<double> recall,
                                  std::size_t query_count) {
    if (ks.size() != recall.size())
        throw Error(ErrorKind::ShapeError, "metrics report: ks/recall size mismatch");
    for (std::size_t i = 0; i + 1 < ks.size(); ++i)
        if (ks[i] >= ks[i + 1])
            throw Error(ErrorKind::BadInput, "metrics report: cutoffs must increase");
    for (std::size_t i = 0; i < recall.size(); ++i) {
        if (!(recall[i] >= 0.0 && recall[i] <= 100.0))
            throw Error(ErrorKind::BadInput, "metrics report: recall out of [0, 100]");
        if (i > 0 && recall[i] < recall[i - 1])
            throw Error(ErrorKind::BadInput, "metrics report: recall must be non-decreasing in k");
    }
    MetricsReport r;
    r.ks = std::move(ks);
    r.recall = std::move(recall);
    r.query_count = query_count;
    return r;
}

namespace {

// rank (1-based) of the truth id within the hits, 0 if absent
std::size_t rank_of(const std::vector<ScoredId>& hits, std::uint64_t truth) {
    for (std::size_t i = 0; i < hits.size(); ++i)
        if (hits[i].id == truth) return i + 1;
    return 0;
}

} // namespace

MetricsReport recall_at_k(const std::vector<RankedResult>& results,
                          const std::map<std::uint64_t, std::uint64_t>& truth,
                          const std::vector<std::size_t>& ks) {
    if (results.empty()) throw Error(ErrorKind::BadInput, "recall_at_k: no results");
    std::vector<std::size_t> hit_counts(ks.size(), 0);
    for (const auto& res : results) {
        auto it = truth.find(res.query_id);
        if (it == truth.end())
            throw Error(ErrorKind::MissingGroundTruth,
                        "recall_at_k: no truth for query " + std::to_string(res.query_id));
        const std::size_t rank = rank_of(res.hits, it->second);
        for (std::size_t i = 0; i < ks.size(); ++i)
            if (rank != 0 && rank <= ks[i]) ++hit_counts[i];
    }
    std::vector<double> recall(ks.size());
    for (std::size_t i = 0; i < ks.size(); ++i)
        recall[i] = 100.0 * static_cast<double>(hit_counts[i]) /
                    static_cast<double>(results.size());
    return make_metrics_report(ks, std::move(recall), results.size());
}

MetricsReport subset_recall(const std::vector<RankedResult>& results,
                            const std::map<std::uint64_t, std::uint64_t>& truth,
                            const std::map<std::uint64_t, std::vector<std::uint64_t>>& subsets,
                            const std::vector<std::size_t>& ks) {
    if (results.empty()) throw Error(ErrorKind::BadInput, "subset_recall: no results");
    std::vector<std::size_t> hit_counts(ks.size(), 0);
    for (const auto& res : results) {
        auto tit = truth.find(res.query_id);
        if (tit == truth.end())
            throw Error(ErrorKind::MissingGroundTruth,
                        "subset_recall: no truth for query " + std::to_string(res.query_id));
        auto sit = subsets.find(res.query_id);
        if (sit == subsets.end())
            throw Error(ErrorKind::InvalidSubset,
                        "subset_recall: no subset for query " + std::to_string(res.query_id));
        const auto& subset = sit->second;
        if (std::find(subset.begin(), subset.end(), tit->second) == subset.end())
            throw Error(ErrorKind::InvalidSubset,
                        "subset_recall: subset for query " + std::to_string(res.query_id) +
                            " lacks the target");
        // restrict the ranking to subset members, keeping score order
        std::size_t rank = 0, seen = 0;
        for (const auto& hit : res.hits) {
            if (std::find(subset.begin(), subset.end(), hit.id) == subset.end()) continue;
            ++seen;
            if (hit.id == tit->second) {
                rank = seen;
                break;
            }
        }
        for (std::size_t i = 0; i < ks.size(); ++i)
            if (rank != 0 && rank <= ks[i]) ++hit_counts[i];
    }
    std::vector<double> recall(ks.size());
    for (std::size_t i = 0; i < ks.size(); ++i)
        recall[i] = 100.0 * static_cast<double>(hit_counts[i]) /
                    static_cast<double>(results.size());
    return make_metrics_report(ks, std::move(recall), results.size());
}

} // namespace cvr
