#include "protalign/losses.hpp"

#include <algorithm>
#include <cmath>

namespace protalign::losses {

namespace {

void check_batch(const EmbeddingBatch& batch) {
    if (batch.p.rows != batch.s.rows || batch.p.cols != batch.s.cols) {
        throw ShapeError("losses: p and s shapes disagree");
    }
    if (batch.p.rows == 0) {
        throw ShapeError("losses: empty batch");
    }
}

// log(1 + exp(-z)) without overflow.
double softplus_neg(double z) {
    return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

}  // namespace

LossOutput clip_loss(const EmbeddingBatch& batch, const ClipConfig& cfg) {
    check_batch(batch);
    if (!(cfg.tau > 0.0)) {
        throw ConfigError("clip_loss: tau must be positive");
    }
    const std::size_t n = batch.p.rows;

    Matrix z = numkit::matmul_nt(batch.p, batch.s);
    for (double& v : z.data) v /= cfg.tau;

    // Row softmax (sequence -> structure) and column softmax (structure ->
    // sequence), both with max-subtraction.
    Matrix row_sm(n, n), col_sm(n, n);
    double value = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto zi = z.row(i);
        const double mx = *std::max_element(zi.begin(), zi.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            row_sm(i, j) = std::exp(zi[j] - mx);
            sum += row_sm(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) row_sm(i, j) /= sum;
        value -= (z(i, i) - mx - std::log(sum));
    }
    for (std::size_t j = 0; j < n; ++j) {
        double mx = z(0, j);
        for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, z(i, j));
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            col_sm(i, j) = std::exp(z(i, j) - mx);
            sum += col_sm(i, j);
        }
        for (std::size_t i = 0; i < n; ++i) col_sm(i, j) /= sum;
        value -= (z(j, j) - mx - std::log(sum));
    }
    value /= 2.0 * static_cast<double>(n);

    // dL/dz_ij = (1/2N) [(row_sm - I) + (col_sm - I)].
    Matrix dz(n, n);
    const double inv2n = 1.0 / (2.0 * static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double eye = (i == j) ? 1.0 : 0.0;
            dz(i, j) = inv2n * ((row_sm(i, j) - eye) + (col_sm(i, j) - eye)) / cfg.tau;
        }
    }

    LossOutput out;
    out.value = value;
    out.grad_p = numkit::matmul(dz, batch.s);
    out.grad_s = numkit::matmul_tn(dz, batch.p);
    return out;
}

LossOutput siglip_loss(const EmbeddingBatch& batch, const SiglipConfig& cfg) {
    check_batch(batch);
    if (!(cfg.tau > 0.0)) {
        throw ConfigError("siglip_loss: tau must be positive");
    }
    const std::size_t n = batch.p.rows;
    const double inv_n = 1.0 / static_cast<double>(n);

    const Matrix sim = numkit::matmul_nt(batch.p, batch.s);

    double value = 0.0;
    double grad_bias = 0.0;
    Matrix dsim(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double y = (i == j) ? 1.0 : -1.0;
            const double zz = y * (sim(i, j) / cfg.tau - cfg.bias);
            value += inv_n * softplus_neg(zz);
            // d/dz of -log sigma(z) is -(1 - sigma(z)).
            const double one_minus_sigma = 1.0 / (1.0 + std::exp(zz));
            dsim(i, j) = -inv_n * y * one_minus_sigma / cfg.tau;
            grad_bias += inv_n * y * one_minus_sigma;
        }
    }

    LossOutput out;
    out.value = value;
    out.grad_p = numkit::matmul(dsim, batch.s);
    out.grad_s = numkit::matmul_tn(dsim, batch.p);
    if (cfg.bias_learnable) {
        out.grad_bias = grad_bias;
    }
    return out;
}

Matrix similarity_matrix(const EmbeddingBatch& batch) {
    check_batch(batch);
    return numkit::matmul_nt(batch.p, batch.s);
}

}  // namespace protalign::losses
