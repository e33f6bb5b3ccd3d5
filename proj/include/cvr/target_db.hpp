#pragma once

#include <array>
#include <map>
#include <string>

#include "cvr/encoder.hpp"

namespace cvr {

/// The three per-video target tables contrasted against during training:
/// visual (pooled provider rows), multi-modal (the video grounded with its
/// own description by a frozen snapshot of f) and text (the description
/// alone). Key sets are identical and every entry is unit-norm.
struct TargetDatabases {
    std::map<std::uint64_t, Embedding> visual;
    std::map<std::uint64_t, Embedding> multimodal;
    std::map<std::uint64_t, Embedding> text;
};

/// Pooled, normalized visual embedding of one id (mean of its context rows).
Embedding visual_embedding(const VisualProvider& provider, std::uint64_t id);

/// Builds all three tables from a parameter snapshot. Deterministic given
/// the snapshot and inputs. Throws MissingDescription / MissingEmbedding.
TargetDatabases build_target_databases(const VisualProvider& provider,
                                       const std::map<std::uint64_t, std::string>& descriptions,
                                       const EncoderParams& params_snapshot);

/// S_x[i][j] = cosine(joint row i, table x entry for target_ids[j]); the
/// diagonal holds the ground-truth positives. Order: visual, multimodal, text.
std::array<SimilarityMatrix, 3> batch_similarities(const Mat& joint, const TargetDatabases& dbs,
                                                   const std::vector<std::uint64_t>& target_ids);

/// Target rows for a batch as a B x m matrix (for the gradient path).
Mat gather_targets(const std::map<std::uint64_t, Embedding>& table,
                   const std::vector<std::uint64_t>& target_ids);

} // namespace cvr
