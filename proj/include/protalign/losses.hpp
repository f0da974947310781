#pragma once

#include "protalign/numkit.hpp"

namespace protalign::losses {

using numkit::Matrix;

// Paired pooled embeddings: row i of p is the positive of row i of s.
// Rows are unit norm when produced by the projector; the loss functions do
// not re-check this so finite-difference probes on raw entries stay valid.
struct EmbeddingBatch {
    Matrix p;  // N x D, pooled sequence embeddings
    Matrix s;  // N x D, pooled structure embeddings
};

struct ClipConfig {
    double tau = 0.07;
};

struct SiglipConfig {
    double tau = 0.07;
    double bias = -10.0;
    bool bias_learnable = false;
};

struct LossOutput {
    double value = 0.0;
    Matrix grad_p;
    Matrix grad_s;
    double grad_bias = 0.0;  // populated only when bias_learnable
};

// Symmetric softmax contrastive loss over the in-batch similarity matrix:
// -(1/2N) sum_i [log softmax-row-i at i + log softmax-col-i at i] of
// (P S^T / tau). Gradients are with respect to the raw p/s entries.
LossOutput clip_loss(const EmbeddingBatch& batch, const ClipConfig& cfg);

// Pairwise sigmoid loss, -(1/N) sum_ij log sigma(y_ij (P_i.S_j/tau - b)),
// y_ij = +1 iff i == j. Normalization is by N over the N^2 terms, so the
// value grows with batch size.
LossOutput siglip_loss(const EmbeddingBatch& batch, const SiglipConfig& cfg);

// All-pairs dot products; equals cosine similarity for unit rows.
Matrix similarity_matrix(const EmbeddingBatch& batch);

}  // namespace protalign::losses
