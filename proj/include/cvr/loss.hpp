#pragma once

#include "cvr/embedding.hpp"
#include "cvr/encoder.hpp"

namespace cvr {

struct LossConfig {
    double temperature = 0.07; // tau
    double alpha = 1.0;        // positive-term scale
    double beta = 0.5;         // hard-negative sharpness; 0 recovers plain InfoNCE
    bool detach_weights = false; // treat w_{i,j} as constant in the gradient
};

/// Effective per-term loss weights, softplus of the raw parameters.
struct LossWeights {
    double lambda = 0.0; // visual term
    double mu = 0.0;     // multi-modal term
    double delta = 0.0;  // text term
};

double softplus(double x);
double sigmoid(double x);
LossWeights effective_weights(const RawWeights& raw);

/// Hard-negative weights. row[i][j] = (B-1) exp(beta S_ij / tau) normalized
/// over the row's negatives; col is the column-wise analogue. Diagonals are
/// zero and unused. B=1 yields empty matrices.
struct HnWeightMats {
    Mat row;
    Mat col;
};
HnWeightMats hn_weights(const SimilarityMatrix& s, const LossConfig& cfg);

/// Two-direction hard-negative contrastive loss over a B x B similarity
/// matrix whose diagonal holds the positive pairs. Log-sum-exp stabilized.
double hn_nce_loss(const SimilarityMatrix& s, const LossConfig& cfg);

/// dLoss/dS for hn_nce_loss; flows through the hard-negative weights unless
/// cfg.detach_weights is set.
Mat hn_nce_loss_grad(const SimilarityMatrix& s, const LossConfig& cfg, double* value = nullptr);

struct CombinedLoss {
    double value = 0.0;
    LossWeights weights;
    double term_ve = 0.0, term_mme = 0.0, term_te = 0.0;
};

/// Weighted sum of the enabled per-database losses. Pass nullptr to disable
/// a term; all disabled throws NoLossTerms.
CombinedLoss combined_loss(const SimilarityMatrix* s_ve, const SimilarityMatrix* s_mme,
                           const SimilarityMatrix* s_te, const RawWeights& raw,
                           const LossConfig& cfg);

struct LossGradients {
    Mat d_joint;        // B x m, gradient w.r.t. the (unit-norm) joint embeddings
    RawWeights d_raw;   // gradient w.r.t. raw loss-weight parameters
    CombinedLoss loss;
};

/// End-of-pipeline gradients. joint holds B unit-norm rows; each enabled
/// target matrix holds the B unit-norm target rows for that database, so
/// similarities reduce to dot products and targets are constants.
LossGradients loss_gradients(const Mat& joint, const Mat* t_ve, const Mat* t_mme,
                             const Mat* t_te, const RawWeights& raw, const LossConfig& cfg);

} // namespace cvr
