#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "protalign/dataio.hpp"
#include "protalign/losses.hpp"
#include "protalign/projector.hpp"

namespace protalign::trainer {

using dataio::PairedRecord;

enum class LossKind { Clip, Siglip };

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<double> m, v;
};

// Bias-corrected Adam update, theta -= lr * m_hat / (sqrt(v_hat) + eps).
// step is 1-based. An empty state is initialized to zeros.
void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state,
               const AdamConfig& cfg, std::uint64_t step);

// The trainable state: one projection head per modality plus SigLIP's bias.
struct Model {
    projector::ProjectionHead seq_head;
    projector::ProjectionHead struct_head;
    double siglip_bias = -10.0;
};

struct TrainConfig {
    LossKind loss = LossKind::Clip;
    double tau = 0.07;
    double siglip_bias = -10.0;
    bool bias_learnable = false;
    std::size_t batch_size = 64;
    std::size_t epochs = 200;
    std::uint64_t seed = 7;
    std::size_t dim = 128;
    std::size_t heads = 4;
    AdamConfig adam;
    std::size_t eval_every = 10;  // 0 disables validation evals
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;      // mean batch loss
    std::optional<double> recall_at_1;
    std::optional<double> recall_at_5;
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochLog> epochs;
    std::string checkpoint_path;
};

// CSV columns: epoch,loss,recall_at_1,recall_at_5 (recall cells empty on
// non-eval epochs). Wall-clock is deliberately excluded so identical runs
// produce identical files.
void write_report_csv(const TrainReport& report, const std::string& path);

struct TrainResult {
    TrainReport report;
    Model model;
};

// Full optimization loop. Batch order is drawn from a generator reseeded
// with cfg.seed at the start of every epoch, so the whole run is a pure
// function of (seed, config, dataset). Throws DivergenceError on NaN loss.
// Writes a checkpoint to checkpoint_path when non-empty.
TrainResult train(const std::vector<PairedRecord>& train_set,
                  const std::vector<PairedRecord>& val_set, const TrainConfig& cfg,
                  const std::string& checkpoint_path = "");

struct GradCheckConfig {
    std::size_t n = 4;
    std::size_t t_max = 5;
    std::size_t dim = 16;
    std::size_t heads = 4;
    std::size_t d_p = 8;
    std::size_t d_s = 8;
    LossKind loss = LossKind::Clip;
    double tau = 0.07;
    double siglip_bias = -10.0;
    bool bias_learnable = false;
    double h = 1e-5;
    std::size_t max_coords_per_group = 0;  // 0 = every coordinate
};

struct GradCheckReport {
    struct Group {
        std::string name;
        double max_rel_err = 0.0;
    };
    std::vector<Group> groups;
    double max_rel_err = 0.0;
};

// Compares analytic gradients of the full pipeline (input projection ->
// attention -> LayerNorm -> L2 normalize -> loss) against central finite
// differences on every parameter coordinate.
GradCheckReport grad_check(const GradCheckConfig& cfg, numkit::Rng& rng);

// Checkpoint container "PAC1" v1: dims, loss selection, tau/bias, then all
// head parameters as little-endian f64 (bitwise round-trip).
struct CheckpointMeta {
    std::size_t dim = 0, heads = 0, d_p = 0, d_s = 0;
    LossKind loss = LossKind::Clip;
    double tau = 0.07;
    double siglip_bias = -10.0;
    bool bias_learnable = false;
};

void save_checkpoint(const std::string& path, const Model& model, const CheckpointMeta& meta);

struct Checkpoint {
    Model model;
    CheckpointMeta meta;
};

Checkpoint load_checkpoint(const std::string& path);

// Named views over every trainable tensor of a head; grads may be null.
struct ParamRef {
    std::string name;
    std::vector<double>* param;
    std::vector<double>* grad;
};

std::vector<ParamRef> head_param_refs(projector::ProjectionHead& head,
                                      projector::HeadGradients* grads,
                                      const std::string& prefix);

}  // namespace protalign::trainer
