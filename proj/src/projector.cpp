#include "protalign/projector.hpp"

#include <cmath>
#include <string>

namespace protalign::projector {

namespace {

void add_into(std::vector<double>& dst, const std::vector<double>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void add_into(Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

HeadGradients HeadGradients::zeros_like(const ProjectionHead& head) {
    HeadGradients g;
    g.input_proj = Matrix(head.input_proj.rows, head.input_proj.cols);
    g.query_token.assign(head.dim, 0.0);
    g.wq = Matrix(head.dim, head.dim);
    g.wk = Matrix(head.dim, head.dim);
    g.wv = Matrix(head.dim, head.dim);
    g.wo = Matrix(head.dim, head.dim);
    g.ln_gain.assign(head.dim, 0.0);
    g.ln_bias.assign(head.dim, 0.0);
    return g;
}

void HeadGradients::add(const HeadGradients& other) {
    add_into(input_proj, other.input_proj);
    add_into(query_token, other.query_token);
    add_into(wq, other.wq);
    add_into(wk, other.wk);
    add_into(wv, other.wv);
    add_into(wo, other.wo);
    add_into(ln_gain, other.ln_gain);
    add_into(ln_bias, other.ln_bias);
}

PooledEmbedding forward(const ProjectionHead& head, const Matrix& tokens,
                        const std::vector<bool>* mask, ForwardTape* tape) {
    const std::size_t t = tokens.rows;
    const std::size_t d = head.dim;
    if (t < 1) {
        throw ShapeError("projector::forward: empty token matrix");
    }
    if (tokens.cols != head.input_dim()) {
        throw ShapeError("projector::forward: token width " + std::to_string(tokens.cols) +
                         " does not match head input width " +
                         std::to_string(head.input_dim()));
    }
    if (mask && mask->size() != t) {
        throw ShapeError("projector::forward: mask length mismatch");
    }

    const Matrix h = numkit::matmul(tokens, head.input_proj);  // t x D

    std::vector<double> q(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        const double qr = head.query_token[r];
        for (std::size_t c = 0; c < d; ++c) {
            q[c] += qr * head.wq(r, c);
        }
    }

    const Matrix k = numkit::matmul(h, head.wk);  // t x D
    const Matrix v = numkit::matmul(h, head.wv);  // t x D

    const std::size_t hw = head.head_width();
    // Logit scale is sqrt(D), not the per-head sqrt(D/L).
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    Matrix attn(head.heads, t);
    std::vector<double> pooled(d, 0.0);
    std::vector<double> logits(t);
    for (std::size_t l = 0; l < head.heads; ++l) {
        const std::size_t c0 = l * hw;
        for (std::size_t i = 0; i < t; ++i) {
            double s = 0.0;
            for (std::size_t c = c0; c < c0 + hw; ++c) {
                s += q[c] * k(i, c);
            }
            logits[i] = s * scale;
        }
        const std::vector<double> w = numkit::softmax_row(logits, mask);
        for (std::size_t i = 0; i < t; ++i) {
            attn(l, i) = w[i];
            for (std::size_t c = c0; c < c0 + hw; ++c) {
                pooled[c] += w[i] * v(i, c);
            }
        }
    }

    std::vector<double> y(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        const double pr = pooled[r];
        for (std::size_t c = 0; c < d; ++c) {
            y[c] += pr * head.wo(r, c);
        }
    }

    double mean = 0.0;
    for (double val : y) mean += val;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double val : y) var += (val - mean) * (val - mean);
    var /= static_cast<double>(d);
    const double inv_sigma = 1.0 / std::sqrt(var + kLayerNormEpsilon);

    std::vector<double> xhat(d), u(d);
    for (std::size_t c = 0; c < d; ++c) {
        xhat[c] = (y[c] - mean) * inv_sigma;
        u[c] = head.ln_gain[c] * xhat[c] + head.ln_bias[c];
    }

    PooledEmbedding out;
    out.vector = numkit::l2_normalize(u);

    if (tape) {
        tape->tokens = tokens;
        tape->mask = mask ? *mask : std::vector<bool>{};
        tape->h = h;
        tape->q = std::move(q);
        tape->k = k;
        tape->v = v;
        tape->attn = std::move(attn);
        tape->pooled = std::move(pooled);
        tape->y = std::move(y);
        tape->ln_mean = mean;
        tape->ln_inv_sigma = inv_sigma;
        tape->xhat = std::move(xhat);
        tape->u = std::move(u);
        tape->out = out.vector;
        tape->valid = true;
    }
    return out;
}

PooledEmbedding forward(const ProjectionHead& head, const TokenEmbeddings& x,
                        ForwardTape* tape) {
    return forward(head, x.tokens, nullptr, tape);
}

void backward_accumulate(const ProjectionHead& head, const ForwardTape& tape,
                         std::span<const double> grad_out, HeadGradients& acc) {
    if (!tape.valid) {
        throw ContractError("projector::backward: tape was not produced by forward");
    }
    const std::size_t d = head.dim;
    const std::size_t t = tape.tokens.rows;
    if (grad_out.size() != d || tape.u.size() != d || tape.h.rows != t) {
        throw ContractError("projector::backward: tape does not match head shapes");
    }

    // L2 normalize: out = u / ||u||.
    const double unorm = numkit::norm2(tape.u);
    const double g_dot_out = numkit::dot(grad_out, tape.out);
    std::vector<double> du(d);
    for (std::size_t c = 0; c < d; ++c) {
        du[c] = (grad_out[c] - g_dot_out * tape.out[c]) / unorm;
    }

    // LayerNorm affine.
    std::vector<double> dxhat(d);
    for (std::size_t c = 0; c < d; ++c) {
        acc.ln_gain[c] += du[c] * tape.xhat[c];
        acc.ln_bias[c] += du[c];
        dxhat[c] = du[c] * head.ln_gain[c];
    }

    // LayerNorm statistics.
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        mean_dxhat += dxhat[c];
        mean_dxhat_xhat += dxhat[c] * tape.xhat[c];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    std::vector<double> dy(d);
    for (std::size_t c = 0; c < d; ++c) {
        dy[c] = tape.ln_inv_sigma * (dxhat[c] - mean_dxhat - tape.xhat[c] * mean_dxhat_xhat);
    }

    // Output projection: y = pooled^T wo.
    std::vector<double> dpooled(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        const double pr = tape.pooled[r];
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            acc.wo(r, c) += pr * dy[c];
            s += head.wo(r, c) * dy[c];
        }
        dpooled[r] = s;
    }

    const std::size_t hw = head.head_width();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const auto live = [&](std::size_t i) { return tape.mask.empty() || tape.mask[i]; };

    Matrix dk(t, d), dv(t, d);
    std::vector<double> dq(d, 0.0);
    std::vector<double> da(t), dlogits(t);
    for (std::size_t l = 0; l < head.heads; ++l) {
        const std::size_t c0 = l * hw;
        // pooled[block] = sum_i attn_i * v[i, block]
        for (std::size_t i = 0; i < t; ++i) {
            const double ai = tape.attn(l, i);
            double s = 0.0;
            for (std::size_t c = c0; c < c0 + hw; ++c) {
                dv(i, c) = ai * dpooled[c];
                s += tape.v(i, c) * dpooled[c];
            }
            da[i] = s;
        }
        // softmax backward; masked positions carry zero gradient.
        double a_dot_da = 0.0;
        for (std::size_t i = 0; i < t; ++i) a_dot_da += tape.attn(l, i) * da[i];
        for (std::size_t i = 0; i < t; ++i) {
            dlogits[i] = live(i) ? tape.attn(l, i) * (da[i] - a_dot_da) : 0.0;
        }
        // logits_i = scale * q[block] . k[i, block]
        for (std::size_t i = 0; i < t; ++i) {
            const double gi = dlogits[i] * scale;
            for (std::size_t c = c0; c < c0 + hw; ++c) {
                dq[c] += gi * tape.k(i, c);
                dk(i, c) = gi * tape.q[c];
            }
        }
    }

    // q = query_token^T wq.
    for (std::size_t r = 0; r < d; ++r) {
        const double qr = head.query_token[r];
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            acc.wq(r, c) += qr * dq[c];
            s += head.wq(r, c) * dq[c];
        }
        acc.query_token[r] += s;
    }

    // k = h wk, v = h wv; dh = dk wk^T + dv wv^T.
    Matrix dh(t, d);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t r = 0; r < d; ++r) {
            const double hir = tape.h(i, r);
            double s = 0.0;
            const double* wkrow = head.wk.data.data() + r * d;
            const double* wvrow = head.wv.data.data() + r * d;
            const double* dkrow = dk.data.data() + i * d;
            const double* dvrow = dv.data.data() + i * d;
            double* gwk = acc.wk.data.data() + r * d;
            double* gwv = acc.wv.data.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) {
                gwk[c] += hir * dkrow[c];
                gwv[c] += hir * dvrow[c];
                s += wkrow[c] * dkrow[c] + wvrow[c] * dvrow[c];
            }
            dh(i, r) = s;
        }
    }

    // h = tokens * input_proj.
    const std::size_t din = head.input_dim();
    for (std::size_t i = 0; i < t; ++i) {
        const double* xrow = tape.tokens.data.data() + i * din;
        const double* dhrow = dh.data.data() + i * d;
        for (std::size_t r = 0; r < din; ++r) {
            const double xir = xrow[r];
            double* grow = acc.input_proj.data.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) {
                grow[c] += xir * dhrow[c];
            }
        }
    }
}

HeadGradients backward(const ProjectionHead& head, const ForwardTape& tape,
                       std::span<const double> grad_out) {
    HeadGradients g = HeadGradients::zeros_like(head);
    backward_accumulate(head, tape, grad_out, g);
    return g;
}

ProjectionHead init(Rng& rng, std::size_t d_in, std::size_t d, std::size_t heads) {
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("projector::init: dim must be divisible by heads");
    }
    if (d_in < 1 || d < 1) {
        throw ConfigError("projector::init: dimensions must be positive");
    }

    const auto glorot = [&rng](Matrix& m, std::size_t fan_in, std::size_t fan_out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& v : m.data) v = rng.uniform(-bound, bound);
    };

    ProjectionHead head;
    head.dim = d;
    head.heads = heads;
    head.input_proj = Matrix(d_in, d);
    glorot(head.input_proj, d_in, d);
    head.query_token.resize(d);
    for (double& v : head.query_token) v = rng.normal(0.0, 0.02);
    head.wq = Matrix(d, d);
    head.wk = Matrix(d, d);
    head.wv = Matrix(d, d);
    head.wo = Matrix(d, d);
    glorot(head.wq, d, d);
    glorot(head.wk, d, d);
    glorot(head.wv, d, d);
    glorot(head.wo, d, d);
    head.ln_gain.assign(d, 1.0);
    head.ln_bias.assign(d, 0.0);
    return head;
}

}  // namespace protalign::projector
