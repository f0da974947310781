#include "protalign/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace protalign::numkit {

bool all_finite(std::span<const double> x) {
    return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(std::span<const double> x, const char* what) {
    if (!all_finite(x)) {
        throw Error(std::string("non-finite values in ") + what);
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(a.cols) +
                         " vs " + std::to_string(b.rows) + ")");
    }
    Matrix out(a.rows, b.cols);
    // ikj order so the inner loop streams over contiguous rows of b and out.
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* orow = out.data.data() + i * out.cols;
        const double* arow = a.data.data() + i * a.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    require_finite(out.data, "matmul output");
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) {
        throw ShapeError("matmul_nt: widths disagree (" + std::to_string(a.cols) + " vs " +
                         std::to_string(b.cols) + ")");
    }
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.rows; ++j) {
            out(i, j) = dot(a.row(i), b.row(j));
        }
    }
    require_finite(out.data, "matmul_nt output");
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) {
        throw ShapeError("matmul_tn: heights disagree (" + std::to_string(a.rows) + " vs " +
                         std::to_string(b.rows) + ")");
    }
    Matrix out(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = a.data.data() + k * a.cols;
        const double* brow = b.data.data() + k * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            double* orow = out.data.data() + i * out.cols;
            for (std::size_t j = 0; j < b.cols; ++j) {
                orow[j] += aki * brow[j];
            }
        }
    }
    require_finite(out.data, "matmul_tn output");
    return out;
}

std::vector<double> softmax_row(std::span<const double> x, const std::vector<bool>* mask) {
    if (mask && mask->size() != x.size()) {
        throw ShapeError("softmax_row: mask length mismatch");
    }
    const auto live = [&](std::size_t i) { return !mask || (*mask)[i]; };

    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (live(i)) mx = std::max(mx, x[i]);
    }
    if (!std::isfinite(mx)) {
        throw DegenerateError("softmax_row: every entry is masked");
    }
    std::vector<double> out(x.size(), 0.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (live(i)) {
            out[i] = std::exp(x[i] - mx);
            sum += out[i];
        }
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] /= sum;
    }
    require_finite(out, "softmax_row output");
    return out;
}

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                               std::span<const double> bias, double epsilon) {
    if (x.size() != gain.size() || x.size() != bias.size()) {
        throw ShapeError("layer_norm: vector lengths disagree");
    }
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;  // biased variance
    const double inv_sigma = 1.0 / std::sqrt(var + epsilon);

    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = gain[i] * (x[i] - mean) * inv_sigma + bias[i];
    }
    require_finite(out, "layer_norm output");
    return out;
}

std::vector<double> l2_normalize(std::span<const double> x) {
    const double n = norm2(x);
    if (!(n > 1e-12)) {
        throw DegenerateError("l2_normalize: vector norm below tolerance");
    }
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] / n;
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> x) {
    return std::sqrt(dot(x, x));
}

double Rng::normal(double mean, double stddev) {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) {
        throw ContractError("Rng::index: n must be positive");
    }
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() / n * static_cast<std::uint64_t>(n);
    std::uint64_t r;
    do {
        r = next_u64();
    } while (r >= limit);
    return static_cast<std::size_t>(r % n);
}

}  // namespace protalign::numkit
