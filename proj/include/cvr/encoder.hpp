#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "cvr/embedding.hpp"

namespace cvr {

struct EncoderConfig {
    std::uint32_t embed_dim = 64;   // m: latent dimension shared by all embeddings
    std::uint32_t hidden_dim = 64;  // h: token state width inside the encoders
    std::uint32_t vocab_size = 4096;
    std::uint32_t heads = 4;
    std::uint32_t blocks = 1;
    std::uint32_t context_rows = 1; // n_v: rows per visual context sequence
};

struct AttentionWeights {
    Mat wq, wk, wv, wo; // h x h each
};

/// One block of the frozen text encoder: self-attention + feed-forward.
struct TextBlock {
    AttentionWeights self_attn;
    Mat ffn_in;  // h x 4h
    Mat ffn_out; // 4h x h
};

/// One block of the trainable multi-modal encoder: the text block plus
/// cross-attention grounding on a context sequence.
struct FusionBlock {
    AttentionWeights self_attn;
    AttentionWeights cross_attn;
    Mat ffn_in;
    Mat ffn_out;
};

/// Raw (pre-softplus) loss-weight scalars. Trained jointly with the fusion
/// encoder.
struct RawWeights {
    double lambda_hat = 0.0;
    double mu_hat = 0.0;
    double delta_hat = 0.0;
};

/// All model state. The token table and the text-encoder weights are frozen;
/// training touches only the fusion blocks, the fusion projection and the raw
/// loss weights. Checkpoint serialization walks fields in declaration order.
struct EncoderParams {
    EncoderConfig cfg;

    Mat token_table;                     // V x h, frozen, shared by e and f

    std::vector<TextBlock> text_blocks;  // frozen encoder e
    Mat text_proj;                       // h x m, frozen

    std::vector<FusionBlock> fusion_blocks; // trainable encoder f
    Mat fusion_proj;                     // h x m, trainable

    RawWeights raw_weights;              // trainable
};

/// Seeded deterministic initialization. Trainable weights are uniform
/// (-0.05, 0.05); the frozen token table rows are unit Gaussian, normalized.
/// The text encoder starts as a copy of the fusion encoder with the
/// cross-attention layers removed, so a zeroed cross-attention path in f
/// reproduces e exactly.
EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed);

/// Frozen visual side: maps video id to its stored context sequence.
struct VisualProvider {
    std::map<std::uint64_t, Mat> sequences; // id -> n_v x m rows

    const Mat& lookup(std::uint64_t id) const;
    bool contains(std::uint64_t id) const { return sequences.count(id) != 0; }
};

/// Returns the stored sequence for the id, unchanged. Throws MissingEmbedding.
const EmbeddingSequence& encode_visual(const VisualProvider& provider, std::uint64_t id);

struct TextEncodeResult {
    Mat sequence;     // final token states, n x h
    Embedding pooled; // mean of final states, projected to m, unit norm
};

/// Frozen text encoder e: fusion architecture with cross-attention removed.
TextEncodeResult encode_text(const EncoderParams& params, const TokenSequence& tokens);

// --- forward/backward plumbing for the trainable encoder ---

struct AttnCache {
    Mat x_q;              // query-side input
    Mat q, k, v;          // projections
    std::vector<Mat> probs; // per head, n x n_ctx
    Mat heads_concat;     // n x h
};

struct BlockCache {
    AttnCache self_attn;
    Mat x_after_self;
    bool has_cross = false;
    AttnCache cross_attn;
    Mat x_after_cross;
    Mat ffn_pre;   // x * ffn_in
    Mat ffn_act;   // gelu(ffn_pre)
    Mat x_out;
};

struct GroundCache {
    Mat context;          // the grounding rows
    TokenSequence tokens;
    Mat x0;               // embedded tokens
    std::vector<BlockCache> blocks;
    Embedding pooled_h;   // mean of final token states (h)
    Embedding projected;  // pooled_h * fusion_proj (m), pre-normalization
    double proj_norm = 0.0;
    Embedding out;        // normalized
};

/// Gradients for everything training updates; shapes mirror EncoderParams.
struct ParamGrads {
    std::vector<FusionBlock> fusion_blocks;
    Mat fusion_proj;
    RawWeights raw_weights;

    static ParamGrads zeros_like(const EncoderParams& params);
    void add_scaled_into(EncoderParams& params, double scale) const; // params += scale * grads
};

/// Multi-modal encoder f: token states self-attend, cross-attend to the
/// context rows, pass the feed-forward, then mean-pool, project to m and
/// normalize. Context row width must equal hidden_dim (ShapeError otherwise).
Embedding ground(const EncoderParams& params, const EmbeddingSequence& context,
                 const TokenSequence& tokens);

Embedding ground_forward(const EncoderParams& params, const EmbeddingSequence& context,
                         const TokenSequence& tokens, GroundCache* cache);

/// Backpropagates d_out (gradient w.r.t. the normalized output) into the
/// trainable weights. Context and token table are frozen, so no input
/// gradients are produced.
void ground_backward(const EncoderParams& params, const GroundCache& cache,
                     const Embedding& d_out, ParamGrads& grads);

/// Which of the three inputs participate, mirroring the input-combination
/// ablation rows.
struct InputMask {
    bool video = true;
    bool description = true;
    bool change_text = true;

    bool any() const { return video || description || change_text; }
};

struct JointCache {
    InputMask mode;
    // caches for the enabled pairwise terms, fixed order: (q,t), (q,d), (e(d),t)
    bool has_qt = false, has_qd = false, has_et = false;
    GroundCache qt, qd, et;
    Embedding sum;       // pre-normalization
    double sum_norm = 0.0;
    Embedding out;
    bool trainable = false; // false for single-input fallbacks
};

/// Eq-2 style fusion: sum of the enabled pairwise grounded embeddings in the
/// fixed order f(q,t), f(q,d), f(e(d),t), then L2-normalized. With two inputs
/// only the single supported term remains; a single input falls back to its
/// frozen embedding (video: normalized mean of q rows; description / change
/// text: the pooled text encoding). Throws NoInputs for an empty mask.
Embedding joint_embedding(const EncoderParams& params, const EmbeddingSequence& q,
                          const TokenSequence& d_tokens, const EmbeddingSequence& d_seq,
                          const TokenSequence& t_tokens, InputMask mode,
                          JointCache* cache = nullptr);

/// Backward counterpart; no-op for non-trainable fallback modes.
void joint_backward(const EncoderParams& params, const JointCache& cache,
                    const Embedding& d_out, ParamGrads& grads);

// --- checkpoint file (magic "CVRC") ---

void save_checkpoint(const std::string& path, const EncoderParams& params);
EncoderParams load_checkpoint(const std::string& path);

/// FNV-1a over the frozen tensors; the frozen-ness invariant is a checksum
/// equality before and after training.
std::uint64_t frozen_checksum(const EncoderParams& params);

/// Byte-level digest of every tensor, for determinism checks.
std::uint64_t params_checksum(const EncoderParams& params);

} // namespace cvr
