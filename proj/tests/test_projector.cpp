#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "protalign/projector.hpp"

using namespace protalign;
using numkit::Matrix;
using numkit::Rng;
using projector::ForwardTape;
using projector::HeadGradients;
using projector::ProjectionHead;

namespace {

Matrix random_tokens(Rng& rng, std::size_t t, std::size_t d_in) {
    Matrix m(t, d_in);
    for (double& v : m.data) v = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("init is deterministic and uses the stated affine init") {
    Rng a(5), b(5);
    const auto h1 = projector::init(a, 10, 16, 4);
    const auto h2 = projector::init(b, 10, 16, 4);
    CHECK(h1.input_proj.data == h2.input_proj.data);
    CHECK(h1.query_token == h2.query_token);
    CHECK(h1.wq.data == h2.wq.data);
    CHECK(h1.wo.data == h2.wo.data);
    for (double v : h1.ln_gain) CHECK(v == 1.0);
    for (double v : h1.ln_bias) CHECK(v == 0.0);
}

TEST_CASE("init rejects dim not divisible by heads") {
    Rng rng(1);
    CHECK_THROWS_AS(projector::init(rng, 8, 10, 4), ConfigError);
}

TEST_CASE("default head shape: d=128, 4 heads of width 32") {
    Rng rng(1);
    const auto h = projector::init(rng, 64, 128, 4);
    CHECK(h.head_width() == 32);
    CHECK(h.query_token.size() == 128);
}

TEST_CASE("forward output is unit norm and deterministic") {
    Rng rng(2);
    const auto head = projector::init(rng, 12, 16, 4);
    const Matrix tokens = random_tokens(rng, 6, 12);
    const auto out1 = projector::forward(head, tokens);
    const auto out2 = projector::forward(head, tokens);
    CHECK(std::abs(numkit::norm2(out1.vector) - 1.0) <= 1e-9);
    CHECK(out1.vector == out2.vector);  // bitwise
}

TEST_CASE("forward rejects width mismatch and all-masked input") {
    Rng rng(2);
    const auto head = projector::init(rng, 12, 16, 4);
    CHECK_THROWS_AS(projector::forward(head, Matrix(3, 7)), ShapeError);
    const Matrix tokens = random_tokens(rng, 3, 12);
    const std::vector<bool> all_pad(3, false);
    CHECK_THROWS_AS(projector::forward(head, tokens, &all_pad), DegenerateError);
}

TEST_CASE("t=1: attention weight is exactly 1") {
    Rng rng(3);
    const auto head = projector::init(rng, 8, 16, 2);
    const Matrix tokens = random_tokens(rng, 1, 8);
    ForwardTape tape;
    projector::forward(head, tokens, nullptr, &tape);
    for (std::size_t l = 0; l < head.heads; ++l) {
        CHECK(tape.attn(l, 0) == 1.0);
    }
}

TEST_CASE("duplicating every token row leaves the output unchanged") {
    Rng rng(4);
    const auto head = projector::init(rng, 10, 16, 4);
    const Matrix tokens = random_tokens(rng, 5, 10);
    Matrix doubled(10, 10);
    for (std::size_t i = 0; i < 5; ++i) {
        std::copy(tokens.row(i).begin(), tokens.row(i).end(), doubled.row(i).begin());
        std::copy(tokens.row(i).begin(), tokens.row(i).end(), doubled.row(i + 5).begin());
    }
    const auto a = projector::forward(head, tokens);
    const auto b = projector::forward(head, doubled);
    for (std::size_t c = 0; c < a.vector.size(); ++c) {
        CHECK(std::abs(a.vector[c] - b.vector[c]) <= 1e-12);
    }
}

TEST_CASE("permutation invariance of token rows (property)") {
    Rng rng(5);
    const auto head = projector::init(rng, 9, 12, 3);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t t = 2 + rng.index(8);
        const Matrix tokens = random_tokens(rng, t, 9);
        std::vector<std::size_t> perm(t);
        for (std::size_t i = 0; i < t; ++i) perm[i] = i;
        rng.shuffle(perm);
        Matrix permuted(t, 9);
        for (std::size_t i = 0; i < t; ++i) {
            std::copy(tokens.row(perm[i]).begin(), tokens.row(perm[i]).end(),
                      permuted.row(i).begin());
        }
        const auto a = projector::forward(head, tokens);
        const auto b = projector::forward(head, permuted);
        for (std::size_t c = 0; c < a.vector.size(); ++c) {
            CHECK(std::abs(a.vector[c] - b.vector[c]) <= 1e-12);
        }
    }
}

TEST_CASE("padded keys get zero attention and match the unpadded result") {
    Rng rng(6);
    const auto head = projector::init(rng, 8, 16, 4);
    const Matrix tokens = random_tokens(rng, 4, 8);
    Matrix padded(7, 8);
    std::vector<bool> mask(7, false);
    for (std::size_t i = 0; i < 4; ++i) {
        std::copy(tokens.row(i).begin(), tokens.row(i).end(), padded.row(i).begin());
        mask[i] = true;
    }
    // Junk in padded rows must not leak through.
    for (std::size_t i = 4; i < 7; ++i) {
        for (double& v : padded.row(i)) v = 1e6;
    }
    ForwardTape tape;
    const auto b = projector::forward(head, padded, &mask, &tape);
    const auto a = projector::forward(head, tokens);
    for (std::size_t c = 0; c < a.vector.size(); ++c) {
        CHECK(std::abs(a.vector[c] - b.vector[c]) <= 1e-12);
    }
    for (std::size_t l = 0; l < head.heads; ++l) {
        for (std::size_t i = 4; i < 7; ++i) CHECK(tape.attn(l, i) == 0.0);
    }
}

TEST_CASE("backward: zero grad_out gives zero gradients; stale tape rejected") {
    Rng rng(7);
    const auto head = projector::init(rng, 8, 16, 4);
    const Matrix tokens = random_tokens(rng, 3, 8);
    ForwardTape tape;
    projector::forward(head, tokens, nullptr, &tape);
    const std::vector<double> zero(16, 0.0);
    const auto g = projector::backward(head, tape, zero);
    for (double v : g.input_proj.data) CHECK(v == 0.0);
    for (double v : g.wq.data) CHECK(v == 0.0);
    for (double v : g.ln_gain) CHECK(v == 0.0);

    ForwardTape stale;
    CHECK_THROWS_AS(projector::backward(head, stale, zero), ContractError);
}

TEST_CASE("backward ln_bias gradient equals grad chained through normalize only") {
    Rng rng(8);
    const auto head = projector::init(rng, 8, 16, 4);
    const Matrix tokens = random_tokens(rng, 4, 8);
    ForwardTape tape;
    projector::forward(head, tokens, nullptr, &tape);
    std::vector<double> g(16);
    for (double& v : g) v = rng.normal();
    const auto grads = projector::backward(head, tape, g);

    // Hand-derived: d/d ln_bias = (g - (g . out) out) / ||u||.
    const double unorm = numkit::norm2(tape.u);
    const double gdot = numkit::dot(g, tape.out);
    for (std::size_t c = 0; c < 16; ++c) {
        const double expected = (g[c] - gdot * tape.out[c]) / unorm;
        CHECK(grads.ln_bias[c] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng(9);
    for (int trial = 0; trial < 3; ++trial) {
        auto head = projector::init(rng, 6, 16, 4);
        const Matrix tokens = random_tokens(rng, 1 + rng.index(5), 6);
        std::vector<double> g(16);
        for (double& v : g) v = rng.normal();

        ForwardTape tape;
        projector::forward(head, tokens, nullptr, &tape);
        const auto grads = projector::backward(head, tape, g);

        const auto scalar_out = [&]() {
            const auto out = projector::forward(head, tokens);
            return numkit::dot(g, out.vector);
        };

        const double h = 1e-5;
        const auto check_tensor = [&](std::vector<double>& param,
                                      const std::vector<double>& analytic) {
            for (std::size_t i = 0; i < param.size(); ++i) {
                const double saved = param[i];
                param[i] = saved + h;
                const double lp = scalar_out();
                param[i] = saved - h;
                const double lm = scalar_out();
                param[i] = saved;
                const double fd = (lp - lm) / (2 * h);
                const double rel = std::abs(analytic[i] - fd) /
                                   std::max({std::abs(analytic[i]), std::abs(fd), 1e-6});
                CHECK(rel <= 1e-4);
            }
        };

        check_tensor(head.input_proj.data, grads.input_proj.data);
        check_tensor(head.query_token, grads.query_token);
        check_tensor(head.wq.data, grads.wq.data);
        check_tensor(head.wk.data, grads.wk.data);
        check_tensor(head.wv.data, grads.wv.data);
        check_tensor(head.wo.data, grads.wo.data);
        check_tensor(head.ln_gain, grads.ln_gain);
        check_tensor(head.ln_bias, grads.ln_bias);
    }
}
