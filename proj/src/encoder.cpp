#include "cvr/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace cvr {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double dens = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return phi + x * dens;
}

void softmax_rows(Mat& m) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* r = m.row(i);
        double mx = r[0];
        for (std::size_t j = 1; j < m.cols; ++j) mx = std::max(mx, r[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            r[j] = std::exp(r[j] - mx);
            z += r[j];
        }
        for (std::size_t j = 0; j < m.cols; ++j) r[j] /= z;
    }
}

/// Multi-head attention. Queries from x_q, keys/values from x_c.
Mat attention_forward(const AttentionWeights& w, const Mat& x_q, const Mat& x_c,
                      std::uint32_t heads, AttnCache* cache) {
    const std::size_t h = w.wq.cols;
    const std::size_t dh = h / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat q = matmul(x_q, w.wq);
    Mat k = matmul(x_c, w.wk);
    Mat v = matmul(x_c, w.wv);

    const std::size_t n = x_q.rows;
    const std::size_t c = x_c.rows;
    Mat heads_concat(n, h);
    std::vector<Mat> probs(heads);

    for (std::uint32_t a = 0; a < heads; ++a) {
        const std::size_t off = a * dh;
        Mat s(n, c);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                double acc = 0.0;
                for (std::size_t d = 0; d < dh; ++d) acc += q.at(i, off + d) * k.at(j, off + d);
                s.at(i, j) = acc * scale;
            }
        softmax_rows(s);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < dh; ++d) {
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j) acc += s.at(i, j) * v.at(j, off + d);
                heads_concat.at(i, off + d) = acc;
            }
        probs[a] = std::move(s);
    }

    Mat out = matmul(heads_concat, w.wo);
    if (cache) {
        cache->x_q = x_q;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->probs = std::move(probs);
        cache->heads_concat = std::move(heads_concat);
    }
    return out;
}

/// Accumulates weight gradients and the query-side input gradient; the
/// key/value-side input gradient is accumulated into *dx_c when given
/// (pass &dx_q for self-attention, nullptr for a frozen context).
void attention_backward(const AttentionWeights& w, const AttnCache& cache, const Mat& x_c,
                        const Mat& d_out, std::uint32_t heads, AttentionWeights& gw,
                        Mat& dx_q, Mat* dx_c) {
    const std::size_t h = w.wq.cols;
    const std::size_t dh = h / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t n = cache.x_q.rows;
    const std::size_t c = x_c.rows;

    add_inplace(gw.wo, matmul_tn(cache.heads_concat, d_out));
    Mat dheads = matmul_nt(d_out, w.wo);

    Mat dq(n, h), dk(c, h), dv(c, h);
    for (std::uint32_t a = 0; a < heads; ++a) {
        const std::size_t off = a * dh;
        const Mat& p = cache.probs[a];

        // dP[i][j] = sum_d dheads[i][off+d] * v[j][off+d]
        Mat dp(n, c);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                double acc = 0.0;
                for (std::size_t d = 0; d < dh; ++d)
                    acc += dheads.at(i, off + d) * cache.v.at(j, off + d);
                dp.at(i, j) = acc;
            }
        // dV[j] += P^T dheads
        for (std::size_t j = 0; j < c; ++j)
            for (std::size_t d = 0; d < dh; ++d) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    acc += p.at(i, j) * dheads.at(i, off + d);
                dv.at(j, off + d) = acc;
            }
        // softmax backward: dS = P .* (dP - rowsum(dP .* P)), then undo scale
        Mat ds(n, c);
        for (std::size_t i = 0; i < n; ++i) {
            double rowsum = 0.0;
            for (std::size_t j = 0; j < c; ++j) rowsum += dp.at(i, j) * p.at(i, j);
            for (std::size_t j = 0; j < c; ++j)
                ds.at(i, j) = p.at(i, j) * (dp.at(i, j) - rowsum) * scale;
        }
        // dQ_a = dS K_a ; dK_a = dS^T Q_a
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < dh; ++d) {
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j) acc += ds.at(i, j) * cache.k.at(j, off + d);
                dq.at(i, off + d) = acc;
            }
        for (std::size_t j = 0; j < c; ++j)
            for (std::size_t d = 0; d < dh; ++d) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) acc += ds.at(i, j) * cache.q.at(i, off + d);
                dk.at(j, off + d) = acc;
            }
    }

    add_inplace(gw.wq, matmul_tn(cache.x_q, dq));
    add_inplace(gw.wk, matmul_tn(x_c, dk));
    add_inplace(gw.wv, matmul_tn(x_c, dv));

    add_inplace(dx_q, matmul_nt(dq, w.wq));
    if (dx_c) {
        add_inplace(*dx_c, matmul_nt(dk, w.wk));
        add_inplace(*dx_c, matmul_nt(dv, w.wv));
    }
}

Mat embed_tokens(const EncoderParams& params, const TokenSequence& tokens) {
    if (tokens.empty()) throw Error(ErrorKind::EmptyText, "encoder: empty token sequence");
    const std::size_t h = params.cfg.hidden_dim;
    Mat x(tokens.size(), h);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= params.cfg.vocab_size)
            throw Error(ErrorKind::InvalidToken,
                        "encoder: token id " + std::to_string(tokens[i]) + " >= vocab size");
        const double* row = params.token_table.row(tokens[i]);
        std::memcpy(x.row(i), row, h * sizeof(double));
    }
    return x;
}

Mat ffn_forward(const Mat& x, const Mat& w_in, const Mat& w_out, Mat* pre_cache, Mat* act_cache) {
    Mat pre = matmul(x, w_in);
    Mat act(pre.rows, pre.cols);
    for (std::size_t i = 0; i < pre.a.size(); ++i) act.a[i] = gelu(pre.a[i]);
    Mat out = matmul(act, w_out);
    if (pre_cache) *pre_cache = std::move(pre);
    if (act_cache) *act_cache = std::move(act);
    return out;
}

Embedding pool_project(const Mat& states, const Mat& proj, Embedding* pooled_out,
                       Embedding* projected_out, double* norm_out) {
    const std::size_t h = states.cols;
    Embedding pooled(h, 0.0);
    for (std::size_t i = 0; i < states.rows; ++i)
        for (std::size_t d = 0; d < h; ++d) pooled[d] += states.at(i, d);
    for (std::size_t d = 0; d < h; ++d) pooled[d] /= static_cast<double>(states.rows);

    Embedding projected(proj.cols, 0.0);
    for (std::size_t d = 0; d < h; ++d) {
        const double pd = pooled[d];
        const double* prow = proj.row(d);
        for (std::size_t j = 0; j < proj.cols; ++j) projected[j] += pd * prow[j];
    }
    const double n = l2_norm(projected);
    if (n == 0.0)
        throw Error(ErrorKind::DegenerateVector, "encoder: zero pooled projection");
    Embedding out(projected.size());
    for (std::size_t j = 0; j < projected.size(); ++j) out[j] = projected[j] / n;

    if (pooled_out) *pooled_out = std::move(pooled);
    if (projected_out) *projected_out = std::move(projected);
    if (norm_out) *norm_out = n;
    return out;
}

Mat init_uniform(Rng& rng, std::size_t r, std::size_t c) {
    Mat m(r, c);
    for (double& x : m.a) x = rng.uniform(-0.05, 0.05);
    return m;
}

double inverse_softplus(double y) { return std::log(std::expm1(y)); }

} // namespace

EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed) {
    if (cfg.hidden_dim % cfg.heads != 0)
        throw Error(ErrorKind::ShapeError, "init_params: heads must divide hidden_dim");
    Rng rng(seed);
    EncoderParams p;
    p.cfg = cfg;

    p.token_table = Mat(cfg.vocab_size, cfg.hidden_dim);
    for (std::size_t i = 0; i < p.token_table.rows; ++i) {
        double* row = p.token_table.row(i);
        double ss = 0.0;
        for (std::size_t d = 0; d < cfg.hidden_dim; ++d) {
            row[d] = rng.normal();
            ss += row[d] * row[d];
        }
        const double n = std::sqrt(ss);
        for (std::size_t d = 0; d < cfg.hidden_dim; ++d) row[d] /= n;
    }

    const std::size_t h = cfg.hidden_dim;
    p.fusion_blocks.resize(cfg.blocks);
    for (auto& b : p.fusion_blocks) {
        b.self_attn = {init_uniform(rng, h, h), init_uniform(rng, h, h), init_uniform(rng, h, h),
                       init_uniform(rng, h, h)};
        b.cross_attn = {init_uniform(rng, h, h), init_uniform(rng, h, h), init_uniform(rng, h, h),
                        init_uniform(rng, h, h)};
        b.ffn_in = init_uniform(rng, h, 4 * h);
        b.ffn_out = init_uniform(rng, 4 * h, h);
    }
    p.fusion_proj = init_uniform(rng, h, cfg.embed_dim);

    // e is f with the cross-attention layers removed; start both identical
    p.text_blocks.resize(cfg.blocks);
    for (std::size_t i = 0; i < p.text_blocks.size(); ++i) {
        p.text_blocks[i].self_attn = p.fusion_blocks[i].self_attn;
        p.text_blocks[i].ffn_in = p.fusion_blocks[i].ffn_in;
        p.text_blocks[i].ffn_out = p.fusion_blocks[i].ffn_out;
    }
    p.text_proj = p.fusion_proj;

    const double third = inverse_softplus(1.0 / 3.0);
    p.raw_weights = {third, third, third};
    return p;
}

const Mat& VisualProvider::lookup(std::uint64_t id) const {
    auto it = sequences.find(id);
    if (it == sequences.end())
        throw Error(ErrorKind::MissingEmbedding,
                    "visual provider: unknown id " + std::to_string(id));
    return it->second;
}

const EmbeddingSequence& encode_visual(const VisualProvider& provider, std::uint64_t id) {
    return provider.lookup(id);
}

TextEncodeResult encode_text(const EncoderParams& params, const TokenSequence& tokens) {
    Mat x = embed_tokens(params, tokens);
    for (const auto& b : params.text_blocks) {
        Mat attn = attention_forward(b.self_attn, x, x, params.cfg.heads, nullptr);
        add_inplace(x, attn);
        Mat ffn = ffn_forward(x, b.ffn_in, b.ffn_out, nullptr, nullptr);
        add_inplace(x, ffn);
    }
    TextEncodeResult res;
    res.pooled = pool_project(x, params.text_proj, nullptr, nullptr, nullptr);
    res.sequence = std::move(x);
    return res;
}

Embedding ground_forward(const EncoderParams& params, const EmbeddingSequence& context,
                         const TokenSequence& tokens, GroundCache* cache) {
    if (context.rows == 0)
        throw Error(ErrorKind::ShapeError, "ground: empty context sequence");
    if (context.cols != params.cfg.hidden_dim)
        throw Error(ErrorKind::ShapeError,
                    "ground: context row width " + std::to_string(context.cols) +
                        " != hidden dim " + std::to_string(params.cfg.hidden_dim));

    Mat x = embed_tokens(params, tokens);
    if (cache) {
        cache->context = context;
        cache->tokens = tokens;
        cache->x0 = x;
        cache->blocks.assign(params.fusion_blocks.size(), BlockCache{});
    }

    for (std::size_t bi = 0; bi < params.fusion_blocks.size(); ++bi) {
        const auto& b = params.fusion_blocks[bi];
        BlockCache* bc = cache ? &cache->blocks[bi] : nullptr;

        Mat attn = attention_forward(b.self_attn, x, x, params.cfg.heads,
                                     bc ? &bc->self_attn : nullptr);
        add_inplace(x, attn);
        if (bc) bc->x_after_self = x;

        Mat cross = attention_forward(b.cross_attn, x, context, params.cfg.heads,
                                      bc ? &bc->cross_attn : nullptr);
        add_inplace(x, cross);
        if (bc) {
            bc->has_cross = true;
            bc->x_after_cross = x;
        }

        Mat ffn = ffn_forward(x, b.ffn_in, b.ffn_out, bc ? &bc->ffn_pre : nullptr,
                              bc ? &bc->ffn_act : nullptr);
        add_inplace(x, ffn);
        if (bc) bc->x_out = x;
    }

    Embedding pooled, projected;
    double norm = 0.0;
    Embedding out = pool_project(x, params.fusion_proj, &pooled, &projected, &norm);
    if (cache) {
        cache->pooled_h = std::move(pooled);
        cache->projected = std::move(projected);
        cache->proj_norm = norm;
        cache->out = out;
    }
    return out;
}

Embedding ground(const EncoderParams& params, const EmbeddingSequence& context,
                 const TokenSequence& tokens) {
    return ground_forward(params, context, tokens, nullptr);
}

ParamGrads ParamGrads::zeros_like(const EncoderParams& params) {
    ParamGrads g;
    const std::size_t h = params.cfg.hidden_dim;
    g.fusion_blocks.resize(params.fusion_blocks.size());
    for (auto& b : g.fusion_blocks) {
        b.self_attn = {Mat(h, h), Mat(h, h), Mat(h, h), Mat(h, h)};
        b.cross_attn = {Mat(h, h), Mat(h, h), Mat(h, h), Mat(h, h)};
        b.ffn_in = Mat(h, 4 * h);
        b.ffn_out = Mat(4 * h, h);
    }
    g.fusion_proj = Mat(h, params.cfg.embed_dim);
    g.raw_weights = {0.0, 0.0, 0.0};
    return g;
}

void ParamGrads::add_scaled_into(EncoderParams& params, double scale) const {
    for (std::size_t i = 0; i < fusion_blocks.size(); ++i) {
        auto& pb = params.fusion_blocks[i];
        const auto& gb = fusion_blocks[i];
        axpy_inplace(pb.self_attn.wq, scale, gb.self_attn.wq);
        axpy_inplace(pb.self_attn.wk, scale, gb.self_attn.wk);
        axpy_inplace(pb.self_attn.wv, scale, gb.self_attn.wv);
        axpy_inplace(pb.self_attn.wo, scale, gb.self_attn.wo);
        axpy_inplace(pb.cross_attn.wq, scale, gb.cross_attn.wq);
        axpy_inplace(pb.cross_attn.wk, scale, gb.cross_attn.wk);
        axpy_inplace(pb.cross_attn.wv, scale, gb.cross_attn.wv);
        axpy_inplace(pb.cross_attn.wo, scale, gb.cross_attn.wo);
        axpy_inplace(pb.ffn_in, scale, gb.ffn_in);
        axpy_inplace(pb.ffn_out, scale, gb.ffn_out);
    }
    axpy_inplace(params.fusion_proj, scale, fusion_proj);
    params.raw_weights.lambda_hat += scale * raw_weights.lambda_hat;
    params.raw_weights.mu_hat += scale * raw_weights.mu_hat;
    params.raw_weights.delta_hat += scale * raw_weights.delta_hat;
}

void ground_backward(const EncoderParams& params, const GroundCache& cache,
                     const Embedding& d_out, ParamGrads& grads) {
    const std::size_t h = params.cfg.hidden_dim;
    const std::size_t m = params.cfg.embed_dim;
    const Mat& x_final = cache.blocks.empty() ? cache.x0 : cache.blocks.back().x_out;
    const std::size_t n = x_final.rows;

    // normalize backward: out = projected / norm
    double od = 0.0;
    for (std::size_t j = 0; j < m; ++j) od += cache.out[j] * d_out[j];
    Embedding dproj(m);
    for (std::size_t j = 0; j < m; ++j)
        dproj[j] = (d_out[j] - cache.out[j] * od) / cache.proj_norm;

    // projection backward
    Embedding dpooled(h, 0.0);
    for (std::size_t d = 0; d < h; ++d) {
        const double* prow = params.fusion_proj.row(d);
        double* grow = grads.fusion_proj.row(d);
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            grow[j] += cache.pooled_h[d] * dproj[j];
            acc += prow[j] * dproj[j];
        }
        dpooled[d] = acc;
    }

    // mean-pool backward
    Mat dx(n, h);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < h; ++d)
            dx.at(i, d) = dpooled[d] / static_cast<double>(n);

    for (std::size_t bi = params.fusion_blocks.size(); bi-- > 0;) {
        const auto& b = params.fusion_blocks[bi];
        const auto& bc = cache.blocks[bi];
        auto& gb = grads.fusion_blocks[bi];

        // ffn residual: x_out = x_after_cross + gelu(x_after_cross W1) W2
        Mat dact = matmul_nt(dx, b.ffn_out);
        add_inplace(gb.ffn_out, matmul_tn(bc.ffn_act, dx));
        Mat dpre(dact.rows, dact.cols);
        for (std::size_t i = 0; i < dpre.a.size(); ++i)
            dpre.a[i] = dact.a[i] * gelu_grad(bc.ffn_pre.a[i]);
        add_inplace(gb.ffn_in, matmul_tn(bc.x_after_cross, dpre));
        add_inplace(dx, matmul_nt(dpre, b.ffn_in));

        // cross-attention residual; context is frozen, no input gradient there
        Mat dx_before_cross = dx;
        attention_backward(b.cross_attn, bc.cross_attn, cache.context, dx, params.cfg.heads,
                           gb.cross_attn, dx_before_cross, nullptr);
        dx = std::move(dx_before_cross);

        // self-attention residual; both streams feed the same input
        Mat dx_before_self = dx;
        attention_backward(b.self_attn, bc.self_attn, bc.self_attn.x_q, dx, params.cfg.heads,
                           gb.self_attn, dx_before_self, &dx_before_self);
        dx = std::move(dx_before_self);
    }
    // token table is frozen; dx at the embedding layer is dropped
}

Embedding joint_embedding(const EncoderParams& params, const EmbeddingSequence& q,
                          const TokenSequence& d_tokens, const EmbeddingSequence& d_seq,
                          const TokenSequence& t_tokens, InputMask mode, JointCache* cache) {
    if (!mode.any()) throw Error(ErrorKind::NoInputs, "joint_embedding: empty input mask");
    if (cache) {
        *cache = JointCache{};
        cache->mode = mode;
    }

    const int enabled = int(mode.video) + int(mode.description) + int(mode.change_text);
    if (enabled == 1) {
        Embedding out;
        if (mode.video) {
            if (q.rows == 0)
                throw Error(ErrorKind::ShapeError, "joint_embedding: empty visual sequence");
            Embedding mean(q.cols, 0.0);
            for (std::size_t i = 0; i < q.rows; ++i)
                for (std::size_t j = 0; j < q.cols; ++j) mean[j] += q.at(i, j);
            for (double& x : mean) x /= static_cast<double>(q.rows);
            out = l2_normalize(mean);
        } else if (mode.description) {
            out = pool_project(d_seq, params.text_proj, nullptr, nullptr, nullptr);
        } else {
            out = encode_text(params, t_tokens).pooled;
        }
        if (cache) {
            cache->out = out;
            cache->trainable = false;
        }
        return out;
    }

    // pairwise terms, fixed evaluation order: f(q,t), f(q,d), f(e(d),t)
    Embedding sum(params.cfg.embed_dim, 0.0);
    auto accumulate = [&](const EmbeddingSequence& ctx, const TokenSequence& toks,
                          GroundCache* gc) {
        Embedding e = ground_forward(params, ctx, toks, gc);
        for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += e[j];
    };

    if (mode.video && mode.change_text) {
        accumulate(q, t_tokens, cache ? &cache->qt : nullptr);
        if (cache) cache->has_qt = true;
    }
    if (mode.video && mode.description) {
        accumulate(q, d_tokens, cache ? &cache->qd : nullptr);
        if (cache) cache->has_qd = true;
    }
    if (mode.description && mode.change_text) {
        accumulate(d_seq, t_tokens, cache ? &cache->et : nullptr);
        if (cache) cache->has_et = true;
    }

    const double n = l2_norm(sum);
    if (n == 0.0)
        throw Error(ErrorKind::DegenerateVector, "joint_embedding: zero sum");
    Embedding out(sum.size());
    for (std::size_t j = 0; j < sum.size(); ++j) out[j] = sum[j] / n;
    if (cache) {
        cache->sum = std::move(sum);
        cache->sum_norm = n;
        cache->out = out;
        cache->trainable = true;
    }
    return out;
}

void joint_backward(const EncoderParams& params, const JointCache& cache,
                    const Embedding& d_out, ParamGrads& grads) {
    if (!cache.trainable) return; // single-input fallbacks have no trainable path

    const std::size_t m = cache.out.size();
    double od = 0.0;
    for (std::size_t j = 0; j < m; ++j) od += cache.out[j] * d_out[j];
    Embedding dsum(m);
    for (std::size_t j = 0; j < m; ++j)
        dsum[j] = (d_out[j] - cache.out[j] * od) / cache.sum_norm;

    if (cache.has_qt) ground_backward(params, cache.qt, dsum, grads);
    if (cache.has_qd) ground_backward(params, cache.qd, dsum, grads);
    if (cache.has_et) ground_backward(params, cache.et, dsum, grads);
}

// --- checkpoint io ---

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'V', 'R', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double x) {
    std::uint64_t v;
    std::memcpy(&v, &x, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double x;
    std::memcpy(&x, &v, 8);
    return x;
}

void put_mat(std::ostream& os, const Mat& m) {
    for (double x : m.a) put_f64(os, x);
}

void get_mat(std::istream& is, Mat& m, std::size_t r, std::size_t c) {
    m = Mat(r, c);
    for (double& x : m.a) x = get_f64(is);
}

template <typename Fn>
void walk_tensors(EncoderParams& p, Fn&& fn) {
    fn(p.token_table);
    for (auto& b : p.text_blocks) {
        fn(b.self_attn.wq);
        fn(b.self_attn.wk);
        fn(b.self_attn.wv);
        fn(b.self_attn.wo);
        fn(b.ffn_in);
        fn(b.ffn_out);
    }
    fn(p.text_proj);
    for (auto& b : p.fusion_blocks) {
        fn(b.self_attn.wq);
        fn(b.self_attn.wk);
        fn(b.self_attn.wv);
        fn(b.self_attn.wo);
        fn(b.cross_attn.wq);
        fn(b.cross_attn.wk);
        fn(b.cross_attn.wv);
        fn(b.cross_attn.wo);
        fn(b.ffn_in);
        fn(b.ffn_out);
    }
    fn(p.fusion_proj);
}

std::uint64_t fnv_mix(std::uint64_t h, const Mat& m) {
    for (double x : m.a) {
        std::uint64_t v;
        std::memcpy(&v, &x, 8);
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

} // namespace

void save_checkpoint(const std::string& path, const EncoderParams& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::BadInput, "cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, params.cfg.embed_dim);
    put_u32(os, params.cfg.hidden_dim);
    put_u32(os, params.cfg.vocab_size);
    put_u32(os, params.cfg.heads);
    put_u32(os, params.cfg.blocks);
    walk_tensors(const_cast<EncoderParams&>(params), [&](const Mat& m) { put_mat(os, m); });
    put_f64(os, params.raw_weights.lambda_hat);
    put_f64(os, params.raw_weights.mu_hat);
    put_f64(os, params.raw_weights.delta_hat);
    if (!os) throw Error(ErrorKind::BadInput, "checkpoint write failed: " + path);
}

EncoderParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::BadInput, "cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw Error(ErrorKind::BadInput, "bad checkpoint magic: " + path);
    const std::uint32_t version = get_u32(is);
    if (version != kCheckpointVersion)
        throw Error(ErrorKind::BadInput,
                    "unsupported checkpoint version " + std::to_string(version));
    EncoderConfig cfg;
    cfg.embed_dim = get_u32(is);
    cfg.hidden_dim = get_u32(is);
    cfg.vocab_size = get_u32(is);
    cfg.heads = get_u32(is);
    cfg.blocks = get_u32(is);
    if (!is || cfg.embed_dim == 0 || cfg.hidden_dim == 0 || cfg.vocab_size == 0 ||
        cfg.heads == 0 || cfg.hidden_dim % cfg.heads != 0)
        throw Error(ErrorKind::BadInput, "bad checkpoint header: " + path);

    EncoderParams p;
    p.cfg = cfg;
    const std::size_t h = cfg.hidden_dim;
    p.text_blocks.resize(cfg.blocks);
    p.fusion_blocks.resize(cfg.blocks);

    auto read_into = [&](Mat& m, std::size_t r, std::size_t c) { get_mat(is, m, r, c); };
    read_into(p.token_table, cfg.vocab_size, h);
    for (auto& b : p.text_blocks) {
        read_into(b.self_attn.wq, h, h);
        read_into(b.self_attn.wk, h, h);
        read_into(b.self_attn.wv, h, h);
        read_into(b.self_attn.wo, h, h);
        read_into(b.ffn_in, h, 4 * h);
        read_into(b.ffn_out, 4 * h, h);
    }
    read_into(p.text_proj, h, cfg.embed_dim);
    for (auto& b : p.fusion_blocks) {
        read_into(b.self_attn.wq, h, h);
        read_into(b.self_attn.wk, h, h);
        read_into(b.self_attn.wv, h, h);
        read_into(b.self_attn.wo, h, h);
        read_into(b.cross_attn.wq, h, h);
        read_into(b.cross_attn.wk, h, h);
        read_into(b.cross_attn.wv, h, h);
        read_into(b.cross_attn.wo, h, h);
        read_into(b.ffn_in, h, 4 * h);
        read_into(b.ffn_out, 4 * h, h);
    }
    read_into(p.fusion_proj, h, cfg.embed_dim);
    p.raw_weights.lambda_hat = get_f64(is);
    p.raw_weights.mu_hat = get_f64(is);
    p.raw_weights.delta_hat = get_f64(is);
    if (!is) throw Error(ErrorKind::BadInput, "truncated checkpoint: " + path);
    return p;
}

std::uint64_t frozen_checksum(const EncoderParams& params) {
    std::uint64_t h = 1469598103934665603ULL;
    h = fnv_mix(h, params.token_table);
    for (const auto& b : params.text_blocks) {
        h = fnv_mix(h, b.self_attn.wq);
        h = fnv_mix(h, b.self_attn.wk);
        h = fnv_mix(h, b.self_attn.wv);
        h = fnv_mix(h, b.self_attn.wo);
        h = fnv_mix(h, b.ffn_in);
        h = fnv_mix(h, b.ffn_out);
    }
    h = fnv_mix(h, params.text_proj);
    return h;
}

std::uint64_t params_checksum(const EncoderParams& params) {
    std::uint64_t h = 1469598103934665603ULL;
    walk_tensors(const_cast<EncoderParams&>(params), [&](const Mat& m) { h = fnv_mix(h, m); });
    const double raws[3] = {params.raw_weights.lambda_hat, params.raw_weights.mu_hat,
                            params.raw_weights.delta_hat};
    Mat r(1, 3);
    r.a = {raws[0], raws[1], raws[2]};
    h = fnv_mix(h, r);
    return h;
}

} // namespace cvr
