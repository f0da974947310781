#include "protalign/trainer.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "protalign/retrieval.hpp"

namespace protalign::trainer {

using losses::EmbeddingBatch;
using losses::LossOutput;
using numkit::Matrix;
using projector::ForwardTape;
using projector::HeadGradients;
using projector::ProjectionHead;

void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state,
               const AdamConfig& cfg, std::uint64_t step) {
    if (param.size() != grad.size()) {
        throw ContractError("adam_step: param/grad size mismatch");
    }
    if (state.m.empty()) {
        state.m.assign(param.size(), 0.0);
        state.v.assign(param.size(), 0.0);
    } else if (state.m.size() != param.size()) {
        throw ContractError("adam_step: state size mismatch");
    }
    if (step < 1) {
        throw ContractError("adam_step: step must be >= 1");
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
}

std::vector<ParamRef> head_param_refs(ProjectionHead& head, HeadGradients* grads,
                                      const std::string& prefix) {
    std::vector<ParamRef> refs;
    const auto push = [&](const char* name, std::vector<double>* p, std::vector<double>* g) {
        refs.push_back({prefix + name, p, g});
    };
    push("input_proj", &head.input_proj.data, grads ? &grads->input_proj.data : nullptr);
    push("query_token", &head.query_token, grads ? &grads->query_token : nullptr);
    push("wq", &head.wq.data, grads ? &grads->wq.data : nullptr);
    push("wk", &head.wk.data, grads ? &grads->wk.data : nullptr);
    push("wv", &head.wv.data, grads ? &grads->wv.data : nullptr);
    push("wo", &head.wo.data, grads ? &grads->wo.data : nullptr);
    push("ln_gain", &head.ln_gain, grads ? &grads->ln_gain : nullptr);
    push("ln_bias", &head.ln_bias, grads ? &grads->ln_bias : nullptr);
    return refs;
}

namespace {

void validate_config(const TrainConfig& cfg) {
    if (cfg.batch_size < 1 || cfg.dim < 1 || cfg.heads < 1) {
        throw ConfigError("train: counts must be >= 1");
    }
    if (cfg.dim % cfg.heads != 0) {
        throw ConfigError("train: dim must be divisible by heads");
    }
    if (!(cfg.tau > 0.0)) {
        throw ConfigError("train: tau must be positive");
    }
    if (!(cfg.adam.lr >= 0.0)) {
        throw ConfigError("train: learning rate must be non-negative");
    }
}

void check_widths(const std::vector<PairedRecord>& records, std::size_t d_p,
                  std::size_t d_s) {
    for (const auto& r : records) {
        if (r.seq_tokens.cols != d_p || r.struct_tokens.cols != d_s) {
            throw ConfigError("train: record " + r.id + " widths disagree with the dataset");
        }
    }
}

LossOutput run_loss(const EmbeddingBatch& eb, const TrainConfig& cfg, double bias) {
    if (cfg.loss == LossKind::Clip) {
        return losses::clip_loss(eb, losses::ClipConfig{cfg.tau});
    }
    return losses::siglip_loss(eb, losses::SiglipConfig{cfg.tau, bias, cfg.bias_learnable});
}

}  // namespace

void write_report_csv(const TrainReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "epoch,loss,recall_at_1,recall_at_5\n";
    char buf[40];
    for (const auto& e : report.epochs) {
        std::snprintf(buf, sizeof(buf), "%.12g", e.loss);
        out << e.epoch << ',' << buf << ',';
        if (e.recall_at_1) {
            std::snprintf(buf, sizeof(buf), "%.6f", *e.recall_at_1);
            out << buf;
        }
        out << ',';
        if (e.recall_at_5) {
            std::snprintf(buf, sizeof(buf), "%.6f", *e.recall_at_5);
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

TrainResult train(const std::vector<PairedRecord>& train_set,
                  const std::vector<PairedRecord>& val_set, const TrainConfig& cfg,
                  const std::string& checkpoint_path) {
    validate_config(cfg);
    if (train_set.empty()) {
        throw ConfigError("train: empty training set");
    }
    const std::size_t d_p = train_set[0].seq_tokens.cols;
    const std::size_t d_s = train_set[0].struct_tokens.cols;
    check_widths(train_set, d_p, d_s);
    check_widths(val_set, d_p, d_s);

    numkit::Rng init_rng(cfg.seed);
    TrainResult result;
    result.model.seq_head = projector::init(init_rng, d_p, cfg.dim, cfg.heads);
    result.model.struct_head = projector::init(init_rng, d_s, cfg.dim, cfg.heads);
    result.model.siglip_bias = cfg.siglip_bias;
    Model& model = result.model;

    const std::size_t n_head_tensors =
        head_param_refs(model.seq_head, nullptr, "").size();
    std::vector<AdamState> states(2 * n_head_tensors + 1);
    std::uint64_t step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        // Reseeded per epoch so the run is a pure function of (seed, config,
        // dataset) and an lr=0 run repeats its loss exactly.
        numkit::Rng epoch_rng(cfg.seed);
        const auto batches = dataio::make_batches(train_set, cfg.batch_size, epoch_rng);

        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto& batch = batches[b];
            const std::size_t n = batch.records.size();

            EmbeddingBatch eb{Matrix(n, cfg.dim), Matrix(n, cfg.dim)};
            std::vector<ForwardTape> seq_tapes(n), struct_tapes(n);
            LossOutput lo;
            try {
                for (std::size_t i = 0; i < n; ++i) {
                    const auto p = projector::forward(model.seq_head, batch.seq.tokens[i],
                                                      &batch.seq.mask[i], &seq_tapes[i]);
                    const auto s = projector::forward(model.struct_head,
                                                      batch.strct.tokens[i],
                                                      &batch.strct.mask[i], &struct_tapes[i]);
                    std::copy(p.vector.begin(), p.vector.end(), eb.p.row(i).begin());
                    std::copy(s.vector.begin(), s.vector.end(), eb.s.row(i).begin());
                }
                lo = run_loss(eb, cfg, model.siglip_bias);
            } catch (const ShapeError&) {
                throw;
            } catch (const Error& e) {
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(b) + ": " + e.what());
            }
            if (!std::isfinite(lo.value)) {
                throw DivergenceError("NaN/Inf loss at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(b));
            }
            loss_sum += lo.value;

            HeadGradients gseq = HeadGradients::zeros_like(model.seq_head);
            HeadGradients gstruct = HeadGradients::zeros_like(model.struct_head);
            for (std::size_t i = 0; i < n; ++i) {
                projector::backward_accumulate(model.seq_head, seq_tapes[i], lo.grad_p.row(i),
                                               gseq);
                projector::backward_accumulate(model.struct_head, struct_tapes[i],
                                               lo.grad_s.row(i), gstruct);
            }

            ++step;
            std::size_t si = 0;
            for (auto& ref : head_param_refs(model.seq_head, &gseq, "seq.")) {
                adam_step(*ref.param, *ref.grad, states[si++], cfg.adam, step);
            }
            for (auto& ref : head_param_refs(model.struct_head, &gstruct, "struct.")) {
                adam_step(*ref.param, *ref.grad, states[si++], cfg.adam, step);
            }
            if (cfg.loss == LossKind::Siglip && cfg.bias_learnable) {
                adam_step({&model.siglip_bias, 1}, {&lo.grad_bias, 1}, states[si], cfg.adam,
                          step);
            }
        }

        EpochLog log;
        log.epoch = epoch;
        log.loss = loss_sum / static_cast<double>(batches.size());
        if (cfg.eval_every > 0 && !val_set.empty() && epoch % cfg.eval_every == 0) {
            const auto qb =
                retrieval::embed_bank(model.seq_head, val_set, retrieval::Side::Sequence);
            const auto cb =
                retrieval::embed_bank(model.struct_head, val_set, retrieval::Side::Structure);
            const auto rep = retrieval::recall_at_k(qb, cb, {1, 5});
            log.recall_at_1 = rep.recall_at_k[0];
            log.recall_at_5 = rep.recall_at_k[1];
        }
        log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.report.epochs.push_back(log);
    }

    if (!checkpoint_path.empty()) {
        CheckpointMeta meta;
        meta.dim = cfg.dim;
        meta.heads = cfg.heads;
        meta.d_p = d_p;
        meta.d_s = d_s;
        meta.loss = cfg.loss;
        meta.tau = cfg.tau;
        meta.siglip_bias = model.siglip_bias;
        meta.bias_learnable = cfg.bias_learnable;
        save_checkpoint(checkpoint_path, model, meta);
        result.report.checkpoint_path = checkpoint_path;
    }
    return result;
}

GradCheckReport grad_check(const GradCheckConfig& cfg, numkit::Rng& rng) {
    Model model;
    model.seq_head = projector::init(rng, cfg.d_p, cfg.dim, cfg.heads);
    model.struct_head = projector::init(rng, cfg.d_s, cfg.dim, cfg.heads);
    model.siglip_bias = cfg.siglip_bias;

    std::vector<PairedRecord> records(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        const std::size_t t_p = 1 + rng.index(cfg.t_max);
        const std::size_t t_s = 1 + rng.index(cfg.t_max);
        records[i].id = "gc" + std::to_string(i);
        records[i].seq_tokens = Matrix(t_p, cfg.d_p);
        records[i].struct_tokens = Matrix(t_s, cfg.d_s);
        for (double& v : records[i].seq_tokens.data) v = rng.normal();
        for (double& v : records[i].struct_tokens.data) v = rng.normal();
    }

    TrainConfig tc;
    tc.loss = cfg.loss;
    tc.tau = cfg.tau;
    tc.bias_learnable = cfg.bias_learnable;

    const auto eval_loss = [&](const Model& m) {
        EmbeddingBatch eb{Matrix(cfg.n, cfg.dim), Matrix(cfg.n, cfg.dim)};
        for (std::size_t i = 0; i < cfg.n; ++i) {
            const auto p = projector::forward(m.seq_head, records[i].seq_tokens);
            const auto s = projector::forward(m.struct_head, records[i].struct_tokens);
            std::copy(p.vector.begin(), p.vector.end(), eb.p.row(i).begin());
            std::copy(s.vector.begin(), s.vector.end(), eb.s.row(i).begin());
        }
        return run_loss(eb, tc, m.siglip_bias).value;
    };

    // Analytic gradients through the whole pipeline.
    EmbeddingBatch eb{Matrix(cfg.n, cfg.dim), Matrix(cfg.n, cfg.dim)};
    std::vector<ForwardTape> seq_tapes(cfg.n), struct_tapes(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        const auto p = projector::forward(model.seq_head, records[i].seq_tokens, nullptr,
                                          &seq_tapes[i]);
        const auto s = projector::forward(model.struct_head, records[i].struct_tokens,
                                          nullptr, &struct_tapes[i]);
        std::copy(p.vector.begin(), p.vector.end(), eb.p.row(i).begin());
        std::copy(s.vector.begin(), s.vector.end(), eb.s.row(i).begin());
    }
    const LossOutput lo = run_loss(eb, tc, model.siglip_bias);
    HeadGradients gseq = HeadGradients::zeros_like(model.seq_head);
    HeadGradients gstruct = HeadGradients::zeros_like(model.struct_head);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        projector::backward_accumulate(model.seq_head, seq_tapes[i], lo.grad_p.row(i), gseq);
        projector::backward_accumulate(model.struct_head, struct_tapes[i], lo.grad_s.row(i),
                                       gstruct);
    }

    GradCheckReport report;
    const auto check_group = [&](const std::string& name, std::vector<double>& param,
                                 const std::vector<double>& analytic) {
        double max_rel = 0.0;
        const std::size_t n_coords = param.size();
        const std::size_t stride =
            cfg.max_coords_per_group > 0 && n_coords > cfg.max_coords_per_group
                ? n_coords / cfg.max_coords_per_group
                : 1;
        for (std::size_t i = 0; i < n_coords; i += stride) {
            const double saved = param[i];
            param[i] = saved + cfg.h;
            const double lp = eval_loss(model);
            param[i] = saved - cfg.h;
            const double lm = eval_loss(model);
            param[i] = saved;
            const double fd = (lp - lm) / (2.0 * cfg.h);
            // The 1e-4 floor keeps coordinates below the finite-difference
            // resolution (ulp(loss)/2h) from registering as disagreement.
            const double rel = std::abs(analytic[i] - fd) /
                               std::max({std::abs(analytic[i]), std::abs(fd), 1e-4});
            max_rel = std::max(max_rel, rel);
        }
        report.groups.push_back({name, max_rel});
        report.max_rel_err = std::max(report.max_rel_err, max_rel);
    };

    for (auto& ref : head_param_refs(model.seq_head, &gseq, "seq.")) {
        check_group(ref.name, *ref.param, *ref.grad);
    }
    for (auto& ref : head_param_refs(model.struct_head, &gstruct, "struct.")) {
        check_group(ref.name, *ref.param, *ref.grad);
    }
    if (cfg.loss == LossKind::Siglip && cfg.bias_learnable) {
        std::vector<double> bias_param = {model.siglip_bias};
        const double saved = model.siglip_bias;
        model.siglip_bias = saved + cfg.h;
        const double lp = eval_loss(model);
        model.siglip_bias = saved - cfg.h;
        const double lm = eval_loss(model);
        model.siglip_bias = saved;
        const double fd = (lp - lm) / (2.0 * cfg.h);
        const double rel = std::abs(lo.grad_bias - fd) /
                           std::max({std::abs(lo.grad_bias), std::abs(fd), 1e-4});
        report.groups.push_back({"siglip_bias", rel});
        report.max_rel_err = std::max(report.max_rel_err, rel);
    }
    return report;
}

namespace {

constexpr char kCheckpointMagic[4] = {'P', 'A', 'C', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }
}

void put_f64(std::string& out, double v) {
    put_le(out, std::bit_cast<std::uint64_t>(v));
}

struct CkptReader {
    std::ifstream in;
    std::string path;

    explicit CkptReader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw IoError("cannot open " + p);
    }

    void bytes(void* dst, std::size_t n) {
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n)) {
            throw CorruptionError("truncated checkpoint: " + path);
        }
    }

    template <typename T>
    T get_le() {
        unsigned char buf[sizeof(T)];
        bytes(buf, sizeof(T));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        }
        return static_cast<T>(v);
    }

    double get_f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
};

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const CheckpointMeta& meta) {
    std::string buf;
    buf.append(kCheckpointMagic, 4);
    put_le<std::uint32_t>(buf, kCheckpointVersion);
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(meta.dim));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(meta.heads));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(meta.d_p));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(meta.d_s));
    put_le<std::uint32_t>(buf, meta.loss == LossKind::Clip ? 0u : 1u);
    put_le<std::uint32_t>(buf, meta.bias_learnable ? 1u : 0u);
    put_f64(buf, meta.tau);
    put_f64(buf, meta.siglip_bias);

    Model& m = const_cast<Model&>(model);  // read-only traversal
    for (auto& ref : head_param_refs(m.seq_head, nullptr, "seq.")) {
        for (double v : *ref.param) put_f64(buf, v);
    }
    for (auto& ref : head_param_refs(m.struct_head, nullptr, "struct.")) {
        for (double v : *ref.param) put_f64(buf, v);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    CkptReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw FormatError("bad checkpoint magic in " + path + " (expected PAC1)");
    }
    const auto version = r.get_le<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    auto& meta = ckpt.meta;
    meta.dim = r.get_le<std::uint32_t>();
    meta.heads = r.get_le<std::uint32_t>();
    meta.d_p = r.get_le<std::uint32_t>();
    meta.d_s = r.get_le<std::uint32_t>();
    const auto loss_tag = r.get_le<std::uint32_t>();
    if (loss_tag > 1) {
        throw CorruptionError("unknown loss tag in " + path);
    }
    meta.loss = loss_tag == 0 ? LossKind::Clip : LossKind::Siglip;
    meta.bias_learnable = r.get_le<std::uint32_t>() != 0;
    meta.tau = r.get_f64();
    meta.siglip_bias = r.get_f64();
    if (meta.dim == 0 || meta.heads == 0 || meta.dim % meta.heads != 0 || meta.d_p == 0 ||
        meta.d_s == 0) {
        throw CorruptionError("inconsistent checkpoint dimensions in " + path);
    }

    const auto make_head = [&](std::size_t d_in) {
        ProjectionHead h;
        h.dim = meta.dim;
        h.heads = meta.heads;
        h.input_proj = Matrix(d_in, meta.dim);
        h.query_token.assign(meta.dim, 0.0);
        h.wq = Matrix(meta.dim, meta.dim);
        h.wk = Matrix(meta.dim, meta.dim);
        h.wv = Matrix(meta.dim, meta.dim);
        h.wo = Matrix(meta.dim, meta.dim);
        h.ln_gain.assign(meta.dim, 0.0);
        h.ln_bias.assign(meta.dim, 0.0);
        return h;
    };
    ckpt.model.seq_head = make_head(meta.d_p);
    ckpt.model.struct_head = make_head(meta.d_s);
    ckpt.model.siglip_bias = meta.siglip_bias;

    for (auto& ref : head_param_refs(ckpt.model.seq_head, nullptr, "seq.")) {
        for (double& v : *ref.param) v = r.get_f64();
    }
    for (auto& ref : head_param_refs(ckpt.model.struct_head, nullptr, "struct.")) {
        for (double& v : *ref.param) v = r.get_f64();
    }
    if (r.in.peek() != std::char_traits<char>::eof()) {
        throw CorruptionError("trailing bytes in checkpoint " + path);
    }
    return ckpt;
}

}  // namespace protalign::trainer
