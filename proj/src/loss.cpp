#include "cvr/loss.hpp"

#include <cmath>
#include <limits>

namespace cvr {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

LossWeights effective_weights(const RawWeights& raw) {
    return {softplus(raw.lambda_hat), softplus(raw.mu_hat), softplus(raw.delta_hat)};
}

namespace {

void check_square_finite(const SimilarityMatrix& s, const LossConfig& cfg) {
    if (s.rows != s.cols || s.rows == 0)
        throw Error(ErrorKind::ShapeError, "loss: similarity matrix must be square, non-empty");
    if (!all_finite(s))
        throw Error(ErrorKind::NonFiniteInput, "loss: non-finite similarity entries");
    if (!(cfg.temperature > 0.0))
        throw Error(ErrorKind::BadInput, "loss: temperature must be positive");
}

double lse(const std::vector<double>& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

/// One direction of the loss (rows of x = S/tau score positives on the
/// diagonal against the row's negatives). Returns the summed loss; when
/// dx is non-null accumulates the gradient w.r.t. x into it.
double direction_term(const Mat& x, const LossConfig& cfg, Mat* dx) {
    const std::size_t b = x.rows;
    const double beta = cfg.beta;
    double total = 0.0;

    for (std::size_t i = 0; i < b; ++i) {
        // log Z_i over the row's negatives, for the hard-negative weights
        double log_z = 0.0;
        if (b > 1) {
            std::vector<double> bx;
            bx.reserve(b - 1);
            for (std::size_t k = 0; k < b; ++k)
                if (k != i) bx.push_back(beta * x.at(i, k));
            log_z = lse(bx);
        }

        // logits of the denominator: positive carries log(alpha), each
        // negative carries its log-weight
        std::vector<double> l(b);
        for (std::size_t j = 0; j < b; ++j) {
            if (j == i) {
                l[j] = cfg.alpha > 0.0 ? x.at(i, i) + std::log(cfg.alpha)
                                       : -std::numeric_limits<double>::infinity();
            } else {
                const double log_w =
                    std::log(static_cast<double>(b - 1)) + beta * x.at(i, j) - log_z;
                l[j] = x.at(i, j) + log_w;
            }
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : l) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : l) z += std::exp(v - mx);
        const double lse_l = mx + std::log(z);
        total += lse_l - x.at(i, i);

        if (dx) {
            std::vector<double> p(b);
            for (std::size_t j = 0; j < b; ++j) p[j] = std::exp(l[j] - lse_l);
            dx->at(i, i) += p[i] - 1.0;
            if (b > 1) {
                const double neg_mass = 1.0 - p[i];
                for (std::size_t j = 0; j < b; ++j) {
                    if (j == i) continue;
                    if (cfg.detach_weights) {
                        dx->at(i, j) += p[j];
                    } else {
                        const double w_frac = std::exp(beta * x.at(i, j) - log_z); // w/(B-1)
                        dx->at(i, j) += p[j] * (1.0 + beta) - beta * neg_mass * w_frac;
                    }
                }
            }
        }
    }
    return total;
}

} // namespace

HnWeightMats hn_weights(const SimilarityMatrix& s, const LossConfig& cfg) {
    check_square_finite(s, cfg);
    const std::size_t b = s.rows;
    if (b == 1) return {};

    HnWeightMats w;
    w.row = Mat(b, b);
    w.col = Mat(b, b);
    const double bt = cfg.beta / cfg.temperature;
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<double> bx;
        bx.reserve(b - 1);
        for (std::size_t k = 0; k < b; ++k)
            if (k != i) bx.push_back(bt * s.at(i, k));
        const double log_z = lse(bx);
        for (std::size_t j = 0; j < b; ++j)
            if (j != i)
                w.row.at(i, j) =
                    static_cast<double>(b - 1) * std::exp(bt * s.at(i, j) - log_z);
    }
    for (std::size_t j = 0; j < b; ++j) {
        std::vector<double> bx;
        bx.reserve(b - 1);
        for (std::size_t k = 0; k < b; ++k)
            if (k != j) bx.push_back(bt * s.at(k, j));
        const double log_z = lse(bx);
        for (std::size_t i = 0; i < b; ++i)
            if (i != j)
                w.col.at(i, j) =
                    static_cast<double>(b - 1) * std::exp(bt * s.at(i, j) - log_z);
    }
    return w;
}

double hn_nce_loss(const SimilarityMatrix& s, const LossConfig& cfg) {
    check_square_finite(s, cfg);
    Mat x(s.rows, s.cols);
    for (std::size_t i = 0; i < s.a.size(); ++i) x.a[i] = s.a[i] / cfg.temperature;
    const double row_term = direction_term(x, cfg, nullptr);
    const double col_term = direction_term(transpose(x), cfg, nullptr);
    return row_term + col_term;
}

Mat hn_nce_loss_grad(const SimilarityMatrix& s, const LossConfig& cfg, double* value) {
    check_square_finite(s, cfg);
    const std::size_t b = s.rows;
    Mat x(b, b);
    for (std::size_t i = 0; i < s.a.size(); ++i) x.a[i] = s.a[i] / cfg.temperature;

    Mat dx(b, b);
    const double row_term = direction_term(x, cfg, &dx);
    Mat dxt(b, b);
    const double col_term = direction_term(transpose(x), cfg, &dxt);
    Mat dxt_t = transpose(dxt);
    add_inplace(dx, dxt_t);

    for (double& g : dx.a) g /= cfg.temperature;
    if (value) *value = row_term + col_term;
    return dx;
}

CombinedLoss combined_loss(const SimilarityMatrix* s_ve, const SimilarityMatrix* s_mme,
                           const SimilarityMatrix* s_te, const RawWeights& raw,
                           const LossConfig& cfg) {
    if (!s_ve && !s_mme && !s_te)
        throw Error(ErrorKind::NoLossTerms, "combined_loss: all terms disabled");
    CombinedLoss out;
    out.weights = effective_weights(raw);
    if (s_ve) {
        out.term_ve = hn_nce_loss(*s_ve, cfg);
        out.value += out.weights.lambda * out.term_ve;
    }
    if (s_mme) {
        out.term_mme = hn_nce_loss(*s_mme, cfg);
        out.value += out.weights.mu * out.term_mme;
    }
    if (s_te) {
        out.term_te = hn_nce_loss(*s_te, cfg);
        out.value += out.weights.delta * out.term_te;
    }
    return out;
}

LossGradients loss_gradients(const Mat& joint, const Mat* t_ve, const Mat* t_mme,
                             const Mat* t_te, const RawWeights& raw, const LossConfig& cfg) {
    if (!t_ve && !t_mme && !t_te)
        throw Error(ErrorKind::NoLossTerms, "loss_gradients: all terms disabled");
    if (!all_finite(joint))
        throw Error(ErrorKind::NonFiniteInput, "loss_gradients: non-finite joint embeddings");

    LossGradients out;
    out.loss.weights = effective_weights(raw);
    out.d_joint = Mat(joint.rows, joint.cols);

    auto run_term = [&](const Mat* targets, double weight, double raw_param, double& term_value,
                        double& d_raw_param) {
        if (!targets) return;
        if (targets->rows != joint.rows || targets->cols != joint.cols)
            throw Error(ErrorKind::ShapeError, "loss_gradients: target shape mismatch");
        if (!all_finite(*targets))
            throw Error(ErrorKind::NonFiniteInput, "loss_gradients: non-finite targets");
        const Mat s = matmul_nt(joint, *targets);
        double value = 0.0;
        Mat ds = hn_nce_loss_grad(s, cfg, &value);
        term_value = value;
        // d joint = weight * dS * targets
        Mat dj = matmul(ds, *targets);
        axpy_inplace(out.d_joint, weight, dj);
        out.loss.value += weight * value;
        d_raw_param = value * sigmoid(raw_param); // d softplus
    };

    run_term(t_ve, out.loss.weights.lambda, raw.lambda_hat, out.loss.term_ve,
             out.d_raw.lambda_hat);
    run_term(t_mme, out.loss.weights.mu, raw.mu_hat, out.loss.term_mme, out.d_raw.mu_hat);
    run_term(t_te, out.loss.weights.delta, raw.delta_hat, out.loss.term_te,
             out.d_raw.delta_hat);
    return out;
}

} // namespace cvr
