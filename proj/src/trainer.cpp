#include "cvr/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace cvr {

namespace {

const char* kDescWords[] = {"meadow",  "harbor",  "canyon", "orchard", "glacier", "market",
                            "stadium", "library", "desert", "lagoon",  "village", "factory"};
const char* kChangeWords[] = {"golden",   "frozen", "misty",    "crowded",   "deserted",
                              "stormy",   "sunny",  "autumnal", "neon",      "ancient",
                              "miniature", "aerial"};

std::string desc_word(std::uint32_t a) {
    return kDescWords[a % (sizeof(kDescWords) / sizeof(kDescWords[0]))] +
           (a < 12 ? std::string() : std::to_string(a / 12));
}

std::string change_word(std::uint32_t b) {
    return kChangeWords[b % (sizeof(kChangeWords) / sizeof(kChangeWords[0]))] +
           (b < 12 ? std::string() : std::to_string(b / 12));
}

Embedding random_unit(Rng& rng, std::size_t m) {
    Embedding v(m);
    double ss = 0.0;
    for (double& x : v) {
        x = rng.normal();
        ss += x * x;
    }
    const double n = std::sqrt(ss);
    for (double& x : v) x /= n;
    return v;
}

void quantize_f32(Embedding& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

Mat sequence_of(const Embedding& e, std::uint32_t rows) {
    Mat seq(rows, e.size());
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < e.size(); ++c) seq.at(r, c) = e[c];
    return seq;
}

/// Shared text-encoding cache; the text encoder is frozen, so entries never
/// go stale.
class TextCache {
public:
    explicit TextCache(const EncoderParams& params) : params_(params) {}

    const TextEncodeResult& get(const std::string& text) {
        auto it = cache_.find(text);
        if (it != cache_.end()) return it->second;
        TextEncodeResult res = encode_text(params_, tokenize(text, params_.cfg.vocab_size));
        return cache_.emplace(text, std::move(res)).first->second;
    }

private:
    const EncoderParams& params_;
    std::map<std::string, TextEncodeResult> cache_;
};

Embedding joint_for_triplet(const EncoderParams& params, const Dataset& data,
                            const TripletRecord& tr, const InputMask& inputs,
                            TextCache& text_cache, JointCache* cache) {
    static const Mat kEmpty;
    const Mat* q = &kEmpty;
    if (inputs.video) q = &data.provider.lookup(tr.query_id);

    TokenSequence d_tokens, t_tokens;
    const Mat* d_seq = &kEmpty;
    if (inputs.description) {
        d_tokens = tokenize(tr.description, params.cfg.vocab_size);
        d_seq = &text_cache.get(tr.description).sequence;
    }
    if (inputs.change_text) t_tokens = tokenize(tr.change_text, params.cfg.vocab_size);

    return joint_embedding(params, *q, d_tokens, *d_seq, t_tokens, inputs, cache);
}

bool params_finite(const EncoderParams& p) {
    for (const auto& b : p.fusion_blocks) {
        if (!all_finite(b.self_attn.wq) || !all_finite(b.self_attn.wk) ||
            !all_finite(b.self_attn.wv) || !all_finite(b.self_attn.wo) ||
            !all_finite(b.cross_attn.wq) || !all_finite(b.cross_attn.wk) ||
            !all_finite(b.cross_attn.wv) || !all_finite(b.cross_attn.wo) ||
            !all_finite(b.ffn_in) || !all_finite(b.ffn_out))
            return false;
    }
    if (!all_finite(p.fusion_proj)) return false;
    return std::isfinite(p.raw_weights.lambda_hat) && std::isfinite(p.raw_weights.mu_hat) &&
           std::isfinite(p.raw_weights.delta_hat);
}

void scale_grads(ParamGrads& g, double s) {
    for (auto& b : g.fusion_blocks) {
        for (Mat* m : {&b.self_attn.wq, &b.self_attn.wk, &b.self_attn.wv, &b.self_attn.wo,
                       &b.cross_attn.wq, &b.cross_attn.wk, &b.cross_attn.wv, &b.cross_attn.wo,
                       &b.ffn_in, &b.ffn_out})
            for (double& x : m->a) x *= s;
    }
    for (double& x : g.fusion_proj.a) x *= s;
    g.raw_weights.lambda_hat *= s;
    g.raw_weights.mu_hat *= s;
    g.raw_weights.delta_hat *= s;
}

void accumulate_grads(ParamGrads& dst, const ParamGrads& src) {
    for (std::size_t i = 0; i < dst.fusion_blocks.size(); ++i) {
        auto& d = dst.fusion_blocks[i];
        const auto& s = src.fusion_blocks[i];
        add_inplace(d.self_attn.wq, s.self_attn.wq);
        add_inplace(d.self_attn.wk, s.self_attn.wk);
        add_inplace(d.self_attn.wv, s.self_attn.wv);
        add_inplace(d.self_attn.wo, s.self_attn.wo);
        add_inplace(d.cross_attn.wq, s.cross_attn.wq);
        add_inplace(d.cross_attn.wk, s.cross_attn.wk);
        add_inplace(d.cross_attn.wv, s.cross_attn.wv);
        add_inplace(d.cross_attn.wo, s.cross_attn.wo);
        add_inplace(d.ffn_in, s.ffn_in);
        add_inplace(d.ffn_out, s.ffn_out);
    }
    add_inplace(dst.fusion_proj, src.fusion_proj);
    dst.raw_weights.lambda_hat += src.raw_weights.lambda_hat;
    dst.raw_weights.mu_hat += src.raw_weights.mu_hat;
    dst.raw_weights.delta_hat += src.raw_weights.delta_hat;
}

} // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.triplets < 4)
        throw Error(ErrorKind::TooSmall, "generate_synthetic: need at least 4 triplets");
    if (spec.dim == 0 || spec.context_rows == 0 || spec.desc_words == 0 ||
        spec.change_words == 0)
        throw Error(ErrorKind::BadInput, "generate_synthetic: zero-sized field");

    const std::uint32_t n = spec.triplets;
    const std::uint32_t n_query = std::max<std::uint32_t>(2, n / 2);
    const std::uint32_t per_query = (n + n_query - 1) / n_query;
    if (per_query > spec.change_words)
        throw Error(ErrorKind::BadInput,
                    "generate_synthetic: not enough change words for unique pairs");

    Rng rng(spec.seed);
    Dataset data;

    std::vector<Embedding> desc_dirs, change_dirs;
    for (std::uint32_t a = 0; a < spec.desc_words; ++a)
        desc_dirs.push_back(random_unit(rng, spec.dim));
    for (std::uint32_t b = 0; b < spec.change_words; ++b)
        change_dirs.push_back(random_unit(rng, spec.dim));

    // queries: random unit embeddings, one description word each
    std::vector<Embedding> query_emb(n_query);
    std::vector<std::uint32_t> query_desc(n_query), query_first_change(n_query);
    for (std::uint32_t qi = 0; qi < n_query; ++qi) {
        Embedding q = random_unit(rng, spec.dim);
        quantize_f32(q);
        query_emb[qi] = q;
        query_desc[qi] = static_cast<std::uint32_t>(rng.below(spec.desc_words));
        query_first_change[qi] = static_cast<std::uint32_t>(rng.below(spec.change_words));

        const std::uint64_t id = qi + 1;
        data.provider.sequences.emplace(id, sequence_of(q, spec.context_rows));
        data.descriptions.emplace(
            id, "a detailed view of the " + desc_word(query_desc[qi]) + " scene");
    }

    // triplets: round-robin over queries; change words rotate per query so
    // every (query, change text) pair is unique
    std::vector<TripletRecord> triplets;
    triplets.reserve(n);
    for (std::uint32_t t = 0; t < n; ++t) {
        const std::uint32_t qi = t % n_query;
        const std::uint32_t round = t / n_query;
        const std::uint32_t b = (query_first_change[qi] + round) % spec.change_words;
        const std::uint32_t a = query_desc[qi];

        Embedding target(spec.dim);
        for (std::size_t c = 0; c < spec.dim; ++c)
            target[c] = query_emb[qi][c] + desc_dirs[a][c] + change_dirs[b][c];
        target = l2_normalize(target);
        quantize_f32(target);

        const std::uint64_t target_id = n_query + 1 + t;
        data.provider.sequences.emplace(target_id, sequence_of(target, spec.context_rows));
        data.descriptions.emplace(target_id, "a detailed view of the " + desc_word(a) +
                                                 " scene made " + change_word(b));

        TripletRecord rec;
        rec.query_id = qi + 1;
        rec.description = data.descriptions.at(qi + 1);
        rec.change_text = "make it " + change_word(b);
        rec.target_id = target_id;
        triplets.push_back(std::move(rec));
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    const std::size_t n_train = static_cast<std::size_t>(0.8 * n);
    const std::size_t n_val = static_cast<std::size_t>(0.1 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const TripletRecord& tr = triplets[order[i]];
        if (i < n_train)
            data.train_split.push_back(tr);
        else if (i < n_train + n_val)
            data.val_split.push_back(tr);
        else
            data.test_split.push_back(tr);
    }
    return data;
}

TrainResult train(const TrainConfig& config, const Dataset& data,
                  const EncoderParams& params_init) {
    if (config.batch_size == 0) throw Error(ErrorKind::BadInput, "train: batch size must be >= 1");
    if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate))
        throw Error(ErrorKind::BadInput, "train: bad learning rate");
    if (!config.losses.any()) throw Error(ErrorKind::NoLossTerms, "train: no loss terms enabled");
    if (!config.inputs.any()) throw Error(ErrorKind::NoInputs, "train: no inputs enabled");
    if (data.train_split.empty()) throw Error(ErrorKind::BadInput, "train: empty training split");

    LossConfig lcfg = config.loss;

    EncoderParams params = params_init;
    TargetDatabases dbs = build_target_databases(data.provider, data.descriptions, params_init);
    TextCache text_cache(params); // e is frozen; cache survives updates to f

    Rng rng(config.seed);
    std::vector<EpochStats> history;
    ParamGrads velocity = ParamGrads::zeros_like(params);
    const bool use_momentum = config.momentum != 0.0;

    std::vector<std::size_t> order(data.train_split.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::uint32_t epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t n_batches = 0;

        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t b_eff = std::min<std::size_t>(config.batch_size,
                                                            order.size() - start);
            Mat joint(b_eff, params.cfg.embed_dim);
            std::vector<JointCache> caches(b_eff);
            std::vector<std::uint64_t> target_ids(b_eff);

            for (std::size_t i = 0; i < b_eff; ++i) {
                const TripletRecord& tr = data.train_split[order[start + i]];
                const Embedding j = joint_for_triplet(params, data, tr, config.inputs,
                                                      text_cache, &caches[i]);
                for (std::size_t c = 0; c < j.size(); ++c) joint.at(i, c) = j[c];
                target_ids[i] = tr.target_id;
            }

            const auto sims = batch_similarities(joint, dbs, target_ids);
            const Mat* s_ve = config.losses.ve ? &sims[0] : nullptr;
            const Mat* s_mme = config.losses.mme ? &sims[1] : nullptr;
            const Mat* s_te = config.losses.te ? &sims[2] : nullptr;
            const CombinedLoss cl = combined_loss(s_ve, s_mme, s_te, params.raw_weights, lcfg);
            if (!std::isfinite(cl.value)) throw DivergedTraining(params, history);

            Mat t_ve, t_mme, t_te;
            if (config.losses.ve) t_ve = gather_targets(dbs.visual, target_ids);
            if (config.losses.mme) t_mme = gather_targets(dbs.multimodal, target_ids);
            if (config.losses.te) t_te = gather_targets(dbs.text, target_ids);
            const LossGradients lg =
                loss_gradients(joint, config.losses.ve ? &t_ve : nullptr,
                               config.losses.mme ? &t_mme : nullptr,
                               config.losses.te ? &t_te : nullptr, params.raw_weights, lcfg);

            ParamGrads grads = ParamGrads::zeros_like(params);
            for (std::size_t i = 0; i < b_eff; ++i)
                joint_backward(params, caches[i], lg.d_joint.row_copy(i), grads);
            grads.raw_weights = lg.d_raw;

            EncoderParams before = params;
            if (use_momentum) {
                scale_grads(velocity, config.momentum);
                accumulate_grads(velocity, grads);
                velocity.add_scaled_into(params, -config.learning_rate);
            } else {
                grads.add_scaled_into(params, -config.learning_rate);
            }
            if (!params_finite(params)) throw DivergedTraining(std::move(before), history);

            loss_sum += cl.value;
            ++n_batches;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_loss = loss_sum / static_cast<double>(n_batches);
        if (!data.val_split.empty()) {
            EvalOptions val_opts;
            val_opts.ks = {1};
            val_opts.inputs = config.inputs;
            stats.val_r1 = evaluate_retrieval(params, data, data.val_split, val_opts).at(1);
        }
        const LossWeights w = effective_weights(params.raw_weights);
        stats.lambda = w.lambda;
        stats.mu = w.mu;
        stats.delta = w.delta;
        history.push_back(stats);

        if (config.refresh_targets_each_epoch && epoch < config.epochs)
            dbs = build_target_databases(data.provider, data.descriptions, params);
    }
    return {std::move(params), std::move(history)};
}

MetricsReport evaluate_retrieval(const EncoderParams& params, const Dataset& data,
                                 const std::vector<TripletRecord>& split,
                                 const EvalOptions& opts) {
    if (split.empty()) throw Error(ErrorKind::BadInput, "evaluate: empty split");
    if (opts.ks.empty()) throw Error(ErrorKind::BadInput, "evaluate: no cutoffs");

    std::map<std::uint64_t, Embedding> gallery;
    if (opts.gallery == GalleryKind::Visual) {
        for (const auto& [id, seq] : data.provider.sequences)
            gallery.emplace(id, visual_embedding(data.provider, id));
    } else {
        const TargetDatabases dbs =
            build_target_databases(data.provider, data.descriptions, params);
        gallery = opts.gallery == GalleryKind::Multimodal ? dbs.multimodal : dbs.text;
    }
    const Index index = build_index(gallery);

    TextCache text_cache(params);
    const std::size_t kmax = *std::max_element(opts.ks.begin(), opts.ks.end());

    std::vector<RankedResult> results;
    std::map<std::uint64_t, std::uint64_t> truth;
    results.reserve(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) {
        const TripletRecord& tr = split[i];
        const Embedding joint =
            joint_for_triplet(params, data, tr, opts.inputs, text_cache, nullptr);
        // query ids repeat across triplets, so results are keyed by position
        std::optional<std::uint64_t> exclude;
        if (opts.exclude_self) exclude = tr.query_id;
        results.push_back(top_k(index, joint, kmax, /*query_id=*/i, exclude));
        truth[i] = tr.target_id;
    }
    return recall_at_k(results, truth, opts.ks);
}

std::string input_mask_label(const InputMask& mask) {
    std::string s;
    auto append = [&](const char* part) {
        if (!s.empty()) s += "+";
        s += part;
    };
    if (mask.video) append("video");
    if (mask.description) append("description");
    if (mask.change_text) append("change");
    return s.empty() ? "none" : s;
}

std::string term_mask_label(const TermMask& mask) {
    std::string s;
    auto append = [&](const char* part) {
        if (!s.empty()) s += "+";
        s += part;
    };
    if (mask.ve) append("ve");
    if (mask.mme) append("mme");
    if (mask.te) append("te");
    return s.empty() ? "none" : s;
}

std::vector<AblationCell> ablate_inputs(const EncoderParams& trained, const Dataset& data,
                                        const std::vector<InputMask>& grid,
                                        const EvalOptions& base_opts) {
    if (grid.empty()) throw Error(ErrorKind::BadInput, "ablate_inputs: empty grid");
    std::vector<AblationCell> cells;
    for (const auto& mask : grid) {
        AblationCell cell;
        cell.label = input_mask_label(mask);
        try {
            EvalOptions opts = base_opts;
            opts.inputs = mask;
            cell.metrics = evaluate_retrieval(trained, data, data.test_split, opts);
            cell.ok = true;
        } catch (const Error& e) {
            cell.error = e.what();
        }
        cells.push_back(std::move(cell));
    }
    return cells;
}

std::vector<AblationCell> ablate_losses(const TrainConfig& base_config, const Dataset& data,
                                        const EncoderParams& params_init,
                                        const std::vector<TermMask>& grid,
                                        const EvalOptions& base_opts) {
    if (grid.empty()) throw Error(ErrorKind::BadInput, "ablate_losses: empty grid");
    std::vector<AblationCell> cells;
    for (const auto& mask : grid) {
        AblationCell cell;
        cell.label = term_mask_label(mask);
        try {
            TrainConfig config = base_config;
            config.losses = mask;
            const TrainResult result = train(config, data, params_init);
            EvalOptions opts = base_opts;
            opts.inputs = base_config.inputs;
            cell.metrics = evaluate_retrieval(result.params, data, data.test_split, opts);
            cell.ok = true;
        } catch (const Error& e) {
            cell.error = e.what();
        }
        cells.push_back(std::move(cell));
    }
    return cells;
}

} // namespace cvr
