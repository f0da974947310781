#pragma once

#include <string>
#include <vector>

#include "protalign/numkit.hpp"

namespace protalign::projector {

using numkit::Matrix;
using numkit::Rng;

// One modality's variable-length token matrix (t x d_in).
struct TokenEmbeddings {
    std::string id;
    Matrix tokens;
};

// Single-query multi-head attention pooling head. A learnable query token
// attends over the (projected) input tokens; the pooled vector goes through
// an output projection, LayerNorm, and L2 normalization.
//
// wq/wk/wv are stored as full dim x dim matrices whose column blocks
// [h*head_width, (h+1)*head_width) belong to head h.
struct ProjectionHead {
    std::size_t dim = 0;    // D
    std::size_t heads = 0;  // L
    Matrix input_proj;      // d_in x D
    std::vector<double> query_token;  // D
    Matrix wq, wk, wv;      // D x D, partitioned by head column blocks
    Matrix wo;              // D x D
    std::vector<double> ln_gain, ln_bias;  // D

    std::size_t input_dim() const { return input_proj.rows; }
    std::size_t head_width() const { return dim / heads; }
};

// Gradient buffers mirroring ProjectionHead shapes exactly.
struct HeadGradients {
    Matrix input_proj;
    std::vector<double> query_token;
    Matrix wq, wk, wv, wo;
    std::vector<double> ln_gain, ln_bias;

    static HeadGradients zeros_like(const ProjectionHead& head);
    void add(const HeadGradients& other);
};

struct PooledEmbedding {
    std::vector<double> vector;  // unit norm
};

// Activation record for backward. Valid only for the forward call that
// produced it.
struct ForwardTape {
    Matrix tokens;           // t x d_in (input copy)
    std::vector<bool> mask;  // empty = all tokens real
    Matrix h;                // t x D, projected tokens
    std::vector<double> q;   // D, projected query
    Matrix k, v;             // t x D
    Matrix attn;             // heads x t, per-head attention weights
    std::vector<double> pooled;  // D
    std::vector<double> y;       // D, after wo, before LayerNorm
    double ln_mean = 0.0;
    double ln_inv_sigma = 0.0;
    std::vector<double> xhat;  // D, normalized pre-affine LayerNorm value
    std::vector<double> u;     // D, after LayerNorm
    std::vector<double> out;   // D, unit vector
    bool valid = false;
};

constexpr double kLayerNormEpsilon = 1e-5;

// Forward pass. mask, when given, marks real-token rows; padded keys get
// exactly zero attention weight. Throws ShapeError on width mismatch and
// DegenerateError when every key is masked.
PooledEmbedding forward(const ProjectionHead& head, const Matrix& tokens,
                        const std::vector<bool>* mask = nullptr,
                        ForwardTape* tape = nullptr);

PooledEmbedding forward(const ProjectionHead& head, const TokenEmbeddings& x,
                        ForwardTape* tape = nullptr);

// Gradients of a scalar loss with respect to every head parameter, given the
// loss gradient at the unit-norm output. Chains through L2 normalization,
// LayerNorm, the output projection, attention, and the input projection.
HeadGradients backward(const ProjectionHead& head, const ForwardTape& tape,
                       std::span<const double> grad_out);

// Same, accumulating into an existing buffer (used across a batch).
void backward_accumulate(const ProjectionHead& head, const ForwardTape& tape,
                         std::span<const double> grad_out, HeadGradients& acc);

// Glorot-uniform projections, N(0, 0.02^2) query token, identity LayerNorm
// affine. Deterministic given the rng state.
ProjectionHead init(Rng& rng, std::size_t d_in, std::size_t d, std::size_t heads);

}  // namespace protalign::projector
