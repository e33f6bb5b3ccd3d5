#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "cvr/embedding.hpp"

namespace cvr {

/// Exact-search gallery: ids ascending, one unit-norm row per id.
struct Index {
    std::vector<std::uint64_t> ids;
    Mat rows; // N x m

    std::size_t size() const { return ids.size(); }
};

/// Normalizes every entry and lays rows out in ascending id order.
/// Throws DuplicateId / ShapeError.
Index build_index(const std::map<std::uint64_t, Embedding>& entries);

struct ScoredId {
    std::uint64_t id = 0;
    double score = 0.0;
};

/// One query's ranking: scores non-increasing, ties broken by ascending id.
struct RankedResult {
    std::uint64_t query_id = 0;
    std::vector<ScoredId> hits;
};

/// Exact top-k by cosine (dot against unit rows). Deterministic; optionally
/// excludes one id (self-exclusion). Throws EmptyIndex.
RankedResult top_k(const Index& index, const Embedding& query, std::size_t k,
                   std::uint64_t query_id = 0,
                   std::optional<std::uint64_t> exclude_id = std::nullopt);

/// Recall percentages at the requested cutoffs. Construction validates the
/// monotonicity and range invariants.
struct MetricsReport {
    std::vector<std::size_t> ks;
    std::vector<double> recall; // percentages, aligned with ks
    std::size_t query_count = 0;

    double at(std::size_t k) const; // recall for cutoff k; throws if absent
};

MetricsReport make_metrics_report(std::vector<std::size_t> ks, std::vector<double> recall,
                                  std::size_t query_count);

/// R@k = 100 * |{queries whose target appears in the first k hits}| / |queries|.
/// Throws MissingGroundTruth.
MetricsReport recall_at_k(const std::vector<RankedResult>& results,
                          const std::map<std::uint64_t, std::uint64_t>& truth,
                          const std::vector<std::size_t>& ks);

/// Recall after restricting each ranking to the query's candidate subset,
/// keeping the original score order. Each subset must contain the truth.
MetricsReport subset_recall(const std::vector<RankedResult>& results,
                            const std::map<std::uint64_t, std::uint64_t>& truth,
                            const std::map<std::uint64_t, std::vector<std::uint64_t>>& subsets,
                            const std::vector<std::size_t>& ks);

} // namespace cvr
