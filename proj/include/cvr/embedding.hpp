#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "cvr/mat.hpp"

namespace cvr {

/// Unit-norm (once normalized) real vector in the shared latent space.
using Embedding = std::vector<double>;

/// Ordered rows of embeddings, e.g. the context fed to cross-attention.
using EmbeddingSequence = Mat;

/// B x B (or B x N) matrix of pairwise similarities.
using SimilarityMatrix = Mat;

using TokenSequence = std::vector<std::uint32_t>;

/// Lowercases, splits on whitespace and maps each word into [0, vocab_size)
/// with a stable 64-bit hash. Identical text gives identical ids on every
/// platform. Throws EmptyText for empty or whitespace-only input.
TokenSequence tokenize(std::string_view text, std::uint32_t vocab_size);

double dot(const Embedding& a, const Embedding& b);
double l2_norm(const Embedding& v);

/// dot(a,b) / (|a||b|), in [-1, 1]. Throws DegenerateVector on zero norm,
/// ShapeError on dimension mismatch.
double cosine_sim(const Embedding& a, const Embedding& b);

/// Scales v to unit norm. Throws DegenerateVector on zero norm.
Embedding l2_normalize(const Embedding& v);

} // namespace cvr
