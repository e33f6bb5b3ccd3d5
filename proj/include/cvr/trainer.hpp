#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvr/index.hpp"
#include "cvr/loss.hpp"
#include "cvr/store.hpp"
#include "cvr/target_db.hpp"

namespace cvr {

/// Which per-database loss terms participate in training.
struct TermMask {
    bool ve = true;
    bool mme = true;
    bool te = true;

    bool any() const { return ve || mme || te; }
};

struct TrainConfig {
    std::uint32_t epochs = 10;
    std::uint32_t batch_size = 32;
    double learning_rate = 1e-3;
    double momentum = 0.0; // 0 = plain SGD
    std::uint64_t seed = 0;
    TermMask losses;
    InputMask inputs;
    LossConfig loss; // temperature, alpha, beta, detach_weights
    bool refresh_targets_each_epoch = false;
};

struct EpochStats {
    std::uint32_t epoch = 0;
    double mean_loss = 0.0; // mean over the epoch's batch losses
    double val_r1 = 0.0;    // R@1 against the visual database, 0 when no val split
    double lambda = 0.0, mu = 0.0, delta = 0.0;
};

struct Dataset {
    VisualProvider provider;
    std::map<std::uint64_t, std::string> descriptions;
    std::vector<TripletRecord> train_split;
    std::vector<TripletRecord> val_split;
    std::vector<TripletRecord> test_split;
};

struct SyntheticSpec {
    std::uint32_t triplets = 512; // N
    std::uint32_t dim = 64;       // m
    std::uint64_t seed = 0;
    std::uint32_t desc_words = 12;   // distinct description-determined directions
    std::uint32_t change_words = 12; // distinct change-text-determined directions
    std::uint32_t context_rows = 1;  // rows per visual sequence (n_v)
};

/// Seeded synthetic corpus with planted structure: each target's visual
/// embedding is the normalized sum of its query's embedding, the direction
/// of the query's description word and the direction of the change word, so
/// the fused query can retrieve it exactly. Values are quantized to float32
/// so an in-memory dataset matches its persisted form bit for bit.
/// Splits 80/10/10. Throws TooSmall for fewer than 4 triplets.
Dataset generate_synthetic(const SyntheticSpec& spec);

struct TrainResult {
    EncoderParams params;
    std::vector<EpochStats> history;
};

/// Thrown when a step produces a non-finite loss; carries the last finite
/// state so callers can persist it.
class DivergedTraining : public Error {
public:
    DivergedTraining(EncoderParams params, std::vector<EpochStats> history)
        : Error(ErrorKind::DivergedTraining, "training diverged: non-finite loss"),
          last_params(std::move(params)),
          history(std::move(history)) {}

    EncoderParams last_params;
    std::vector<EpochStats> history;
};

/// Mini-batch contrastive training of the fusion encoder and the loss
/// weights. Target databases come from a snapshot of the initial parameters
/// (optionally refreshed per epoch). Deterministic for a fixed seed.
TrainResult train(const TrainConfig& config, const Dataset& data,
                  const EncoderParams& params_init);

enum class GalleryKind { Visual, Multimodal, Text };

struct EvalOptions {
    std::vector<std::size_t> ks = {1, 5, 10, 50};
    InputMask inputs;
    bool exclude_self = false;
    GalleryKind gallery = GalleryKind::Visual; // non-visual galleries are diagnostic only
};

/// Retrieval metrics of one split: joint embedding per triplet, exact top-k
/// against the gallery, recall over the split.
MetricsReport evaluate_retrieval(const EncoderParams& params, const Dataset& data,
                                 const std::vector<TripletRecord>& split,
                                 const EvalOptions& opts);

struct AblationCell {
    std::string label;
    bool ok = false;
    MetricsReport metrics;
    std::string error;
};

/// Input-combination ablation: re-evaluates a frozen checkpoint per mask
/// (no retraining). Per-cell errors are recorded and the grid continues.
std::vector<AblationCell> ablate_inputs(const EncoderParams& trained, const Dataset& data,
                                        const std::vector<InputMask>& grid,
                                        const EvalOptions& base_opts);

/// Loss-combination ablation: trains one model per term set and evaluates it.
std::vector<AblationCell> ablate_losses(const TrainConfig& base_config, const Dataset& data,
                                        const EncoderParams& params_init,
                                        const std::vector<TermMask>& grid,
                                        const EvalOptions& base_opts);

std::string input_mask_label(const InputMask& mask);
std::string term_mask_label(const TermMask& mask);

} // namespace cvr
