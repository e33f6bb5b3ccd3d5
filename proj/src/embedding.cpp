#include "cvr/embedding.hpp"

#include <cctype>
#include <cmath>

namespace cvr {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::EmptyText: return "EmptyText";
        case ErrorKind::DegenerateVector: return "DegenerateVector";
        case ErrorKind::MissingEmbedding: return "MissingEmbedding";
        case ErrorKind::InvalidToken: return "InvalidToken";
        case ErrorKind::ShapeError: return "ShapeError";
        case ErrorKind::NoInputs: return "NoInputs";
        case ErrorKind::NonFiniteInput: return "NonFiniteInput";
        case ErrorKind::NoLossTerms: return "NoLossTerms";
        case ErrorKind::MissingDescription: return "MissingDescription";
        case ErrorKind::EmptyAfterCleaning: return "EmptyAfterCleaning";
        case ErrorKind::EmptyCalibration: return "EmptyCalibration";
        case ErrorKind::DuplicateId: return "DuplicateId";
        case ErrorKind::EmptyIndex: return "EmptyIndex";
        case ErrorKind::MissingGroundTruth: return "MissingGroundTruth";
        case ErrorKind::InvalidSubset: return "InvalidSubset";
        case ErrorKind::TooSmall: return "TooSmall";
        case ErrorKind::DivergedTraining: return "DivergedTraining";
        case ErrorKind::BadInput: return "BadInput";
    }
    return "Unknown";
}

namespace {

// FNV-1a, 64 bit. Stable across platforms by construction.
std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

} // namespace

TokenSequence tokenize(std::string_view text, std::uint32_t vocab_size) {
    TokenSequence ids;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            ids.push_back(static_cast<std::uint32_t>(fnv1a(word) % vocab_size));
            word.clear();
        }
    };
    for (unsigned char c : text) {
        if (is_space(c)) {
            flush();
        } else {
            // ASCII lowercasing only; multi-byte UTF-8 passes through untouched
            word.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a')
                                                : static_cast<char>(c));
        }
    }
    flush();
    if (ids.empty()) {
        throw Error(ErrorKind::EmptyText, "tokenize: empty or whitespace-only text");
    }
    return ids;
}

double dot(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size()) {
        throw Error(ErrorKind::ShapeError, "dot: dimension mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(const Embedding& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double cosine_sim(const Embedding& a, const Embedding& b) {
    const double d = dot(a, b);
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) {
        throw Error(ErrorKind::DegenerateVector, "cosine_sim: zero-norm operand");
    }
    return d / (na * nb);
}

Embedding l2_normalize(const Embedding& v) {
    const double n = l2_norm(v);
    if (n == 0.0) {
        throw Error(ErrorKind::DegenerateVector, "l2_normalize: zero vector");
    }
    Embedding out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

// --- Mat helpers ---

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) throw Error(ErrorKind::ShapeError, "matmul: inner dims differ");
    Mat c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            double* crow = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
    if (a.cols != b.cols) throw Error(ErrorKind::ShapeError, "matmul_nt: inner dims differ");
    Mat c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            c.at(i, j) = s;
        }
    }
    return c;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
    if (a.rows != b.rows) throw Error(ErrorKind::ShapeError, "matmul_tn: inner dims differ");
    Mat c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = a.row(k);
        const double* brow = b.row(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* crow = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

void add_inplace(Mat& dst, const Mat& src) {
    if (!dst.same_shape(src)) throw Error(ErrorKind::ShapeError, "add_inplace: shape mismatch");
    for (std::size_t i = 0; i < dst.a.size(); ++i) dst.a[i] += src.a[i];
}

void axpy_inplace(Mat& dst, double s, const Mat& src) {
    if (!dst.same_shape(src)) throw Error(ErrorKind::ShapeError, "axpy_inplace: shape mismatch");
    for (std::size_t i = 0; i < dst.a.size(); ++i) dst.a[i] += s * src.a[i];
}

Mat transpose(const Mat& m) {
    Mat t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t.at(j, i) = m.at(i, j);
    return t;
}

bool all_finite(const Mat& m) {
    for (double x : m.a)
        if (!std::isfinite(x)) return false;
    return true;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller on two fixed-arithmetic uniforms
    double u1 = unit();
    while (u1 <= 0.0) u1 = unit();
    const double u2 = unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw Error(ErrorKind::BadInput, "Rng::below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return x % n;
}

} // namespace cvr
