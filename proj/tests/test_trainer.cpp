#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "protalign/retrieval.hpp"
#include "protalign/trainer.hpp"

using namespace protalign;
using dataio::PairedRecord;
using dataio::SynthSpec;
using numkit::Rng;
using trainer::AdamConfig;
using trainer::AdamState;
using trainer::LossKind;
using trainer::TrainConfig;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("protalign_test_" + name)).string();
}

std::vector<PairedRecord> small_dataset(std::size_t n = 48) {
    SynthSpec spec;
    spec.n_pairs = n;
    spec.latent_dim = 4;
    spec.d_p = 12;
    spec.d_s = 10;
    spec.t_min = 1;
    spec.t_max = 5;
    spec.noise_sigma = 0.05;
    spec.seed = 21;
    return dataio::generate_synthetic(spec);
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.dim = 16;
    cfg.heads = 4;
    cfg.batch_size = 16;
    cfg.epochs = 8;
    cfg.eval_every = 4;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("adam_step: zero gradient leaves parameters unchanged") {
    std::vector<double> param = {1.5, -2.0};
    const std::vector<double> grad = {0.0, 0.0};
    AdamState state;
    adam_step(param, grad, state, AdamConfig{}, 1);
    CHECK(param[0] == 1.5);
    CHECK(param[1] == -2.0);
}

TEST_CASE("adam_step: first bias-corrected step has magnitude ~lr") {
    // m_hat = g, v_hat = g^2 at step 1, so the update is lr * g/(|g| + eps).
    std::vector<double> param = {0.0};
    const std::vector<double> grad = {1.0};
    AdamState state;
    AdamConfig cfg;
    adam_step(param, grad, state, cfg, 1);
    CHECK(param[0] == doctest::Approx(-cfg.lr / (1.0 + cfg.epsilon)).epsilon(1e-12));
}

TEST_CASE("adam_step shape mismatch") {
    std::vector<double> param = {0.0};
    const std::vector<double> grad = {1.0, 2.0};
    AdamState state;
    CHECK_THROWS_AS(adam_step(param, grad, state, AdamConfig{}, 1), ContractError);
}

TEST_CASE("train: epochs=0 yields empty report and the initialization") {
    const auto data = small_dataset();
    auto cfg = small_config();
    cfg.epochs = 0;
    const auto result = trainer::train(data, {}, cfg);
    CHECK(result.report.epochs.empty());

    Rng rng(cfg.seed);
    const auto head0 = projector::init(rng, 12, cfg.dim, cfg.heads);
    CHECK(result.model.seq_head.input_proj.data == head0.input_proj.data);
}

TEST_CASE("train: loss decreases and run is deterministic bitwise") {
    const auto data = small_dataset();
    const auto cfg = small_config();
    const auto r1 = trainer::train(data, {}, cfg);
    const auto r2 = trainer::train(data, {}, cfg);
    REQUIRE(r1.report.epochs.size() == 8);
    CHECK(r1.report.epochs.back().loss < r1.report.epochs.front().loss);
    for (std::size_t e = 0; e < 8; ++e) {
        CHECK(r1.report.epochs[e].loss == r2.report.epochs[e].loss);  // bitwise
    }
    CHECK(r1.model.seq_head.wq.data == r2.model.seq_head.wq.data);
    CHECK(r1.model.struct_head.wo.data == r2.model.struct_head.wo.data);
    for (const auto& e : r1.report.epochs) CHECK(std::isfinite(e.loss));
}

TEST_CASE("train: lr=0 repeats the loss exactly and freezes recall") {
    const auto data = small_dataset();
    auto cfg = small_config();
    cfg.adam.lr = 0.0;
    cfg.eval_every = 2;
    const auto splits = dataio::split(data, 0.75, 0.25, 0.0, 1);
    const auto result = trainer::train(splits.train, splits.val, cfg);
    const double first = result.report.epochs.front().loss;
    std::optional<double> frozen_r5;
    for (const auto& e : result.report.epochs) {
        CHECK(std::abs(e.loss - first) <= 1e-12);
        if (e.recall_at_5) {
            if (frozen_r5) CHECK(*e.recall_at_5 == *frozen_r5);
            frozen_r5 = e.recall_at_5;
        }
    }
    CHECK(frozen_r5.has_value());
}

TEST_CASE("train: 5-epoch smoothed loss is non-increasing on the default synth seed") {
    SynthSpec spec;
    spec.n_pairs = 128;
    const auto data = dataio::generate_synthetic(spec);
    TrainConfig cfg;
    cfg.dim = 32;
    cfg.batch_size = 32;
    cfg.epochs = 30;
    cfg.eval_every = 0;
    const auto result = trainer::train(data, {}, cfg);
    const auto& logs = result.report.epochs;
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w + 5 <= logs.size(); ++w) {
        double avg = 0.0;
        for (std::size_t i = 0; i < 5; ++i) avg += logs[w + i].loss;
        avg /= 5.0;
        CHECK(avg <= prev + 1e-9);
        prev = avg;
    }
}

TEST_CASE("train: pooled embeddings stay unit norm after updates") {
    const auto data = small_dataset();
    const auto cfg = small_config();
    const auto result = trainer::train(data, {}, cfg);
    for (std::size_t i = 0; i < 8; ++i) {
        const auto out = projector::forward(result.model.seq_head, data[i].seq_tokens);
        CHECK(std::abs(numkit::norm2(out.vector) - 1.0) <= 1e-9);
    }
}

TEST_CASE("train: config errors") {
    const auto data = small_dataset();
    auto cfg = small_config();
    cfg.tau = 0.0;
    CHECK_THROWS_AS(trainer::train(data, {}, cfg), ConfigError);
    cfg = small_config();
    cfg.dim = 10;  // not divisible by 4 heads
    CHECK_THROWS_AS(trainer::train(data, {}, cfg), ConfigError);
    cfg = small_config();
    CHECK_THROWS_AS(trainer::train({}, {}, cfg), ConfigError);
}

TEST_CASE("grad_check: CLIP and SigLIP paths within 1e-4") {
    trainer::GradCheckConfig gc;
    gc.max_coords_per_group = 40;
    for (std::uint64_t seed : {101, 202, 303}) {
        Rng rng(seed);
        const auto rep = trainer::grad_check(gc, rng);
        CHECK(rep.max_rel_err <= 1e-4);
    }
    trainer::GradCheckConfig gs = gc;
    gs.loss = LossKind::Siglip;
    gs.bias_learnable = true;
    Rng rng(404);
    const auto rep = trainer::grad_check(gs, rng);
    CHECK(rep.max_rel_err <= 1e-4);
    bool has_bias_group = false;
    for (const auto& g : rep.groups) has_bias_group |= g.name == "siglip_bias";
    CHECK(has_bias_group);
}

TEST_CASE("checkpoint: bitwise round trip and idempotent re-save") {
    const auto data = small_dataset();
    auto cfg = small_config();
    cfg.epochs = 2;
    const std::string p1 = temp_path("ckpt1.pac1");
    const std::string p2 = temp_path("ckpt2.pac1");
    const auto result = trainer::train(data, {}, cfg, p1);

    const auto ckpt = trainer::load_checkpoint(p1);
    CHECK(ckpt.model.seq_head.input_proj.data == result.model.seq_head.input_proj.data);
    CHECK(ckpt.model.struct_head.wv.data == result.model.struct_head.wv.data);
    CHECK(ckpt.model.siglip_bias == result.model.siglip_bias);
    CHECK(ckpt.meta.dim == cfg.dim);
    CHECK(ckpt.meta.loss == LossKind::Clip);

    trainer::save_checkpoint(p2, ckpt.model, ckpt.meta);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), {});
    const std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);

    // Recall is reproduced exactly after reload.
    const auto before_q =
        retrieval::embed_bank(result.model.seq_head, data, retrieval::Side::Sequence);
    const auto before_c =
        retrieval::embed_bank(result.model.struct_head, data, retrieval::Side::Structure);
    const auto after_q =
        retrieval::embed_bank(ckpt.model.seq_head, data, retrieval::Side::Sequence);
    const auto after_c =
        retrieval::embed_bank(ckpt.model.struct_head, data, retrieval::Side::Structure);
    const auto rb = retrieval::recall_at_k(before_q, before_c, {1, 5});
    const auto ra = retrieval::recall_at_k(after_q, after_c, {1, 5});
    CHECK(rb.recall_at_k == ra.recall_at_k);

    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("checkpoint: bad magic and truncation") {
    const std::string path = temp_path("ckpt_bad.pac1");
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE";
    }
    CHECK_THROWS_AS(trainer::load_checkpoint(path), FormatError);

    const auto data = small_dataset(8);
    auto cfg = small_config();
    cfg.epochs = 1;
    trainer::train(data, {}, cfg, path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 16);
    CHECK_THROWS_AS(trainer::load_checkpoint(path), CorruptionError);
    std::remove(path.c_str());
}

TEST_CASE("report CSV has the documented columns") {
    const auto data = small_dataset();
    auto cfg = small_config();
    cfg.epochs = 4;
    cfg.eval_every = 2;
    const auto splits = dataio::split(data, 0.75, 0.25, 0.0, 1);
    const auto result = trainer::train(splits.train, splits.val, cfg);
    const std::string path = temp_path("report.csv");
    trainer::write_report_csv(result.report, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,loss,recall_at_1,recall_at_5");
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == 4);
    std::remove(path.c_str());
}
