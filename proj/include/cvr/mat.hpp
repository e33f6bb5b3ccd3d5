#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "cvr/error.hpp"

namespace cvr {

/// Dense row-major matrix of doubles. All encoder and loss math runs on
/// this one type; embeddings are single rows handled as std::vector<double>.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    double* row(std::size_t i) { return a.data() + i * cols; }
    const double* row(std::size_t i) const { return a.data() + i * cols; }

    std::vector<double> row_copy(std::size_t i) const {
        return std::vector<double>(row(i), row(i) + cols);
    }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// C = A * B
Mat matmul(const Mat& a, const Mat& b);
// C = A * B^T
Mat matmul_nt(const Mat& a, const Mat& b);
// C = A^T * B
Mat matmul_tn(const Mat& a, const Mat& b);

void add_inplace(Mat& dst, const Mat& src);                  // dst += src
void axpy_inplace(Mat& dst, double s, const Mat& src);       // dst += s * src
Mat transpose(const Mat& m);
bool all_finite(const Mat& m);

/// Deterministic random source. Wraps mt19937_64 but derives doubles with
/// fixed arithmetic so streams are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    // [0, 1)
    double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    // standard normal via Box-Muller; second value of each pair is cached
    double normal();

    // uniform integer in [0, n), rejection sampled
    std::uint64_t below(std::uint64_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        // Fisher-Yates; std::shuffle is not pinned down by the standard
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace cvr
