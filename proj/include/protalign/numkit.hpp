#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "protalign/errors.hpp"

namespace protalign::numkit {

// Dense row-major matrix of doubles. All numkit operations keep entries
// finite; NaN/Inf in a result is reported as an error, never returned.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Throws ShapeError unless a.cols == b.rows. Output is checked finite.
Matrix matmul(const Matrix& a, const Matrix& b);

// a * b^T, i.e. (m x k) * (n x k)^T -> m x n. Used for all-pairs dot products.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// a^T * b, i.e. (k x m)^T * (k x n) -> m x n. Used for gradient accumulation.
Matrix matmul_tn(const Matrix& a, const Matrix& b);

// Numerically stable softmax with max-subtraction. Masked entries (mask[i]
// false) receive exactly 0; unmasked entries sum to 1. Throws DegenerateError
// when every entry is masked.
std::vector<double> softmax_row(std::span<const double> x,
                                const std::vector<bool>* mask = nullptr);

// gain * (x - mean) / sqrt(var + epsilon) + bias, with biased (1/D) variance.
std::vector<double> layer_norm(std::span<const double> x,
                               std::span<const double> gain,
                               std::span<const double> bias, double epsilon);

// Scales x to unit Euclidean norm. Throws DegenerateError if ||x|| <= 1e-12.
std::vector<double> l2_normalize(std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> x);

bool all_finite(std::span<const double> x);
void require_finite(std::span<const double> x, const char* what);

// Deterministic generator: std::mt19937_64 for the bit stream (fully
// specified by the standard) with hand-rolled uniform/normal transforms so
// the draw sequence is identical across platforms and standard libraries.
// Normal variates come from Box-Muller, no spare caching.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // [0, 1) with 53 bits of precision.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal(double mean = 0.0, double stddev = 1.0);

    // Unbiased integer in [0, n) via rejection.
    std::size_t index(std::size_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace protalign::numkit
