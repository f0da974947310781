#include "protalign/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "protalign/dataio.hpp"
#include "protalign/retrieval.hpp"
#include "protalign/trainer.hpp"

namespace protalign::cli {

namespace {

namespace fs = std::filesystem;

struct GenOptions {
    std::string out;
    std::string config;
    dataio::SynthSpec spec;
};

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Flat key=value config merge. CLI11's set_config only fires on the app that
// parse() is called on, never on a subcommand, so the file is applied by hand:
// each key must name one of the subcommand's long options, and values from
// the file fill in only options absent from the command line.
void apply_config_file(CLI::App& cmd, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        CLI::Option* opt = cmd.get_option_no_throw("--" + key);
        if (opt == nullptr || key == "config") {
            throw ConfigError(path + ": unknown config key '" + key + "'");
        }
        if (opt->count() > 0) continue;  // command-line value wins
        try {
            opt->add_result(value);
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw ConfigError(path + ": bad value for '" + key + "': " + e.what());
        }
    }
}

// Required-option check deferred until after the config merge.
void require_opt(const CLI::App& cmd, const char* name) {
    if (cmd.get_option(name)->count() == 0) {
        throw ConfigError(std::string(name) + " is required");
    }
}

// Options shared by train/eval/ablate: dataset location, split protocol,
// and the training hyperparameters.
struct RunOptions {
    std::string data;
    std::string config;
    std::string out_dir = "run";
    double f_train = 0.75;
    double f_val = 0.0;
    double f_test = 0.25;
    std::uint64_t split_seed = 7;
    std::string loss = "clip";
    trainer::TrainConfig train;
};

void add_run_options(CLI::App& cmd, RunOptions& opt) {
    cmd.add_option("--data", opt.data, "PAE1 dataset path");
    cmd.add_option("--out", opt.out_dir, "output directory");
    cmd.add_option("--train-frac", opt.f_train, "train split fraction");
    cmd.add_option("--val-frac", opt.f_val, "validation split fraction");
    cmd.add_option("--test-frac", opt.f_test, "test split fraction");
    cmd.add_option("--split-seed", opt.split_seed, "seed for the split shuffle");
    cmd.add_option("--loss", opt.loss, "loss function: clip or siglip")
        ->check(CLI::IsMember({"clip", "siglip"}));
    cmd.add_option("--tau", opt.train.tau, "loss temperature");
    cmd.add_option("--bias", opt.train.siglip_bias, "SigLIP bias b");
    cmd.add_flag("--bias-learnable", opt.train.bias_learnable,
                 "update SigLIP's bias during training");
    cmd.add_option("--batch", opt.train.batch_size, "batch size N");
    cmd.add_option("--epochs", opt.train.epochs, "training epochs");
    cmd.add_option("--seed", opt.train.seed, "training seed (init + batch order)");
    cmd.add_option("--dim", opt.train.dim, "alignment dimension D");
    cmd.add_option("--heads", opt.train.heads, "attention heads L");
    cmd.add_option("--lr", opt.train.adam.lr, "Adam learning rate");
    cmd.add_option("--eval-every", opt.train.eval_every,
                   "epochs between validation recall evaluations (0 = never)");
    cmd.add_option("--config", opt.config, "flat key=value config file; flags override");
}

void finalize_train_config(RunOptions& opt) {
    opt.train.loss = opt.loss == "clip" ? trainer::LossKind::Clip : trainer::LossKind::Siglip;
}

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

dataio::Splits load_and_split(const RunOptions& opt) {
    const auto records = dataio::read_dataset(opt.data);
    return dataio::split(records, opt.f_train, opt.f_val, opt.f_test, opt.split_seed);
}

int cmd_gen(const GenOptions& opt) {
    const auto records = dataio::generate_synthetic(opt.spec);
    dataio::write_dataset(opt.out, records);
    std::cout << "wrote " << records.size() << " pairs (d_p=" << opt.spec.d_p
              << ", d_s=" << opt.spec.d_s << ") to " << opt.out << "\n";
    return kExitOk;
}

int cmd_train(RunOptions& opt) {
    finalize_train_config(opt);
    ensure_out_dir(opt.out_dir);
    const auto splits = load_and_split(opt);
    const std::string ckpt_path = opt.out_dir + "/checkpoint.pac1";

    const auto result = trainer::train(splits.train, splits.val, opt.train, ckpt_path);
    trainer::write_report_csv(result.report, opt.out_dir + "/loss_curve.csv");

    double total_seconds = 0.0;
    for (const auto& e : result.report.epochs) {
        total_seconds += e.seconds;
        if (e.recall_at_1) {
            std::printf("epoch %zu loss %.6f recall@1 %.4f recall@5 %.4f\n", e.epoch, e.loss,
                        *e.recall_at_1, *e.recall_at_5);
        }
    }
    if (!result.report.epochs.empty()) {
        std::printf("final loss %.6f after %zu epochs (%.1f s)\n",
                    result.report.epochs.back().loss, result.report.epochs.size(),
                    total_seconds);
    }
    std::cout << "checkpoint: " << ckpt_path << "\n";
    return kExitOk;
}

std::vector<std::size_t> parse_k_list(const std::string& s) {
    std::vector<std::size_t> ks;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const long v = std::stol(item);
        if (v < 1) throw ConfigError("k values must be positive: " + item);
        ks.push_back(static_cast<std::size_t>(v));
    }
    if (ks.empty()) throw ConfigError("empty k list");
    return ks;
}

struct EvalArtifacts {
    retrieval::RecallReport recall;
    retrieval::SimilaritySummary similarity;
};

EvalArtifacts run_eval(const trainer::Checkpoint& ckpt,
                       const std::vector<dataio::PairedRecord>& test_set,
                       const std::vector<std::size_t>& k_values, const std::string& out_dir) {
    if (test_set.empty()) {
        throw ValidationError("eval: test split is empty");
    }
    const auto queries =
        retrieval::embed_bank(ckpt.model.seq_head, test_set, retrieval::Side::Sequence);
    const auto corpus =
        retrieval::embed_bank(ckpt.model.struct_head, test_set, retrieval::Side::Structure);

    EvalArtifacts art;
    art.recall = retrieval::recall_at_k(queries, corpus, k_values);
    retrieval::write_recall_csv(art.recall, out_dir + "/recall.csv");
    art.similarity =
        retrieval::export_similarity(queries, corpus, out_dir + "/similarity.csv");
    retrieval::export_embeddings({&queries, &corpus}, out_dir + "/embeddings.csv");
    return art;
}

int cmd_eval(RunOptions& opt, const std::string& checkpoint, const std::string& k_list) {
    ensure_out_dir(opt.out_dir);
    const auto ckpt = trainer::load_checkpoint(checkpoint);
    const auto splits = load_and_split(opt);
    const auto art = run_eval(ckpt, splits.test, parse_k_list(k_list), opt.out_dir);

    for (std::size_t i = 0; i < art.recall.k_values.size(); ++i) {
        std::printf("Recall@%zu %.1f%%\n", art.recall.k_values[i],
                    100.0 * art.recall.recall_at_k[i]);
    }
    std::printf("diagonal %.4f off-diagonal %.4f margin %.4f\n",
                art.similarity.mean_diagonal, art.similarity.mean_off_diagonal,
                art.similarity.margin);
    return kExitOk;
}

int cmd_retrieve(const std::string& data, const std::string& checkpoint,
                 const std::string& id, std::size_t k) {
    const auto ckpt = trainer::load_checkpoint(checkpoint);
    const auto records = dataio::read_dataset(data);

    const auto query_rec =
        std::find_if(records.begin(), records.end(),
                     [&](const dataio::PairedRecord& r) { return r.id == id; });
    if (query_rec == records.end()) {
        throw ValidationError("unknown id: " + id);
    }
    if (k > records.size()) {
        std::cerr << "warning: k=" << k << " clamped to corpus size " << records.size()
                  << "\n";
    }
    const auto query = projector::forward(ckpt.model.seq_head, query_rec->seq_tokens);
    const auto corpus =
        retrieval::embed_bank(ckpt.model.struct_head, records, retrieval::Side::Structure);
    const auto hits = retrieval::top_k(query.vector, corpus, k);
    for (std::size_t i = 0; i < hits.size(); ++i) {
        std::printf("%zu %s %.6f\n", i + 1, hits[i].id.c_str(), hits[i].score);
    }
    return kExitOk;
}

int cmd_ablate(RunOptions& opt, const std::string& axis, const std::string& values_csv) {
    finalize_train_config(opt);
    ensure_out_dir(opt.out_dir);
    const auto splits = load_and_split(opt);

    std::vector<std::string> values;
    {
        std::stringstream ss(values_csv);
        std::string item;
        while (std::getline(ss, item, ',')) values.push_back(item);
    }
    if (values.size() < 2) {
        throw ConfigError("ablate: need at least 2 values");
    }

    std::ofstream table(opt.out_dir + "/ablation.csv", std::ios::trunc);
    if (!table) throw IoError("cannot open ablation table for writing");
    table << "axis,value,status,final_loss,recall_at_1,recall_at_5,epochs_to_best\n";

    for (const auto& value : values) {
        trainer::TrainConfig tc = opt.train;
        if (axis == "tau") {
            tc.tau = std::stod(value);
        } else if (axis == "loss") {
            if (value != "clip" && value != "siglip") {
                throw ConfigError("ablate: bad loss value " + value);
            }
            tc.loss = value == "clip" ? trainer::LossKind::Clip : trainer::LossKind::Siglip;
        } else if (axis == "bias") {
            tc.loss = trainer::LossKind::Siglip;
            tc.siglip_bias = std::stod(value);
        } else {
            throw ConfigError("ablate: unknown axis " + axis);
        }

        const std::string run_dir = opt.out_dir + "/" + axis + "_" + value;
        ensure_out_dir(run_dir);
        std::string status = "ok";
        char final_loss[40] = "";
        char r1[16] = "", r5[16] = "";
        std::string epochs_to_best;
        try {
            const auto result =
                trainer::train(splits.train, splits.val, tc, run_dir + "/checkpoint.pac1");
            trainer::write_report_csv(result.report, run_dir + "/loss_curve.csv");
            std::snprintf(final_loss, sizeof(final_loss), "%.6f",
                          result.report.epochs.empty() ? 0.0
                                                       : result.report.epochs.back().loss);
            // Best validation Recall@5 epoch, when evals happened.
            double best = -1.0;
            for (const auto& e : result.report.epochs) {
                if (e.recall_at_5 && *e.recall_at_5 > best) {
                    best = *e.recall_at_5;
                    epochs_to_best = std::to_string(e.epoch);
                }
            }
            trainer::Checkpoint ckpt{result.model,
                                     trainer::CheckpointMeta{tc.dim, tc.heads, 0, 0, tc.loss,
                                                             tc.tau, result.model.siglip_bias,
                                                             tc.bias_learnable}};
            const auto art = run_eval(ckpt, splits.test, {1, 5}, run_dir);
            std::snprintf(r1, sizeof(r1), "%.6f", art.recall.recall_at_k[0]);
            std::snprintf(r5, sizeof(r5), "%.6f", art.recall.recall_at_k[1]);
        } catch (const DivergenceError& e) {
            status = "diverged";
            std::cerr << axis << "=" << value << ": " << e.what() << "\n";
        } catch (const Error& e) {
            status = "failed";
            std::cerr << axis << "=" << value << ": " << e.what() << "\n";
        }
        table << axis << ',' << value << ',' << status << ',' << final_loss << ',' << r1
              << ',' << r5 << ',' << epochs_to_best << '\n';
        std::cout << axis << "=" << value << " " << status << " recall@1=" << r1
                  << " recall@5=" << r5 << "\n";
    }
    if (!table) throw IoError("write failed: ablation table");
    std::cout << "table: " << opt.out_dir << "/ablation.csv\n";
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"protalign: cross-modal contrastive alignment on paired token embeddings"};
    app.require_subcommand(1);

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic PAE1 dataset");
    gen_cmd->add_option("--out", gen.out, "output PAE1 path");
    gen_cmd->add_option("--pairs", gen.spec.n_pairs, "number of paired records");
    gen_cmd->add_option("--latent", gen.spec.latent_dim, "shared latent dimension");
    gen_cmd->add_option("--dp", gen.spec.d_p, "sequence token width");
    gen_cmd->add_option("--ds", gen.spec.d_s, "structure token width");
    gen_cmd->add_option("--tmin", gen.spec.t_min, "minimum token count");
    gen_cmd->add_option("--tmax", gen.spec.t_max, "maximum token count");
    gen_cmd->add_option("--noise", gen.spec.noise_sigma, "per-entry noise sigma");
    gen_cmd->add_option("--seed", gen.spec.seed, "generator seed");
    gen_cmd->add_option("--config", gen.config, "flat key=value config file; flags override");

    RunOptions train_opt;
    auto* train_cmd = app.add_subcommand("train", "train projection heads");
    add_run_options(*train_cmd, train_opt);

    RunOptions eval_opt;
    std::string eval_checkpoint;
    std::string eval_k = "1,5";
    auto* eval_cmd = app.add_subcommand("eval", "evaluate retrieval on the test split");
    add_run_options(*eval_cmd, eval_opt);
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint path");
    eval_cmd->add_option("--k", eval_k, "comma-separated recall cutoffs");

    std::string ret_data, ret_checkpoint, ret_id;
    std::size_t ret_k = 5;
    auto* ret_cmd = app.add_subcommand("retrieve", "rank structures for one sequence id");
    ret_cmd->add_option("--data", ret_data, "PAE1 dataset path")->required();
    ret_cmd->add_option("--checkpoint", ret_checkpoint, "checkpoint path")->required();
    ret_cmd->add_option("--id", ret_id, "query record id")->required();
    ret_cmd->add_option("--k", ret_k, "number of results");

    RunOptions abl_opt;
    std::string abl_axis, abl_values;
    auto* abl_cmd = app.add_subcommand("ablate", "sweep one axis, emit a comparison table");
    add_run_options(*abl_cmd, abl_opt);
    abl_cmd->add_option("--axis", abl_axis, "sweep axis: tau, loss, or bias")
        ->check(CLI::IsMember({"tau", "loss", "bias"}));
    abl_cmd->add_option("--values", abl_values, "comma-separated axis values");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (gen_cmd->parsed()) {
            if (!gen.config.empty()) apply_config_file(*gen_cmd, gen.config);
            require_opt(*gen_cmd, "--out");
            return cmd_gen(gen);
        }
        if (train_cmd->parsed()) {
            if (!train_opt.config.empty()) apply_config_file(*train_cmd, train_opt.config);
            require_opt(*train_cmd, "--data");
            return cmd_train(train_opt);
        }
        if (eval_cmd->parsed()) {
            if (!eval_opt.config.empty()) apply_config_file(*eval_cmd, eval_opt.config);
            require_opt(*eval_cmd, "--data");
            require_opt(*eval_cmd, "--checkpoint");
            return cmd_eval(eval_opt, eval_checkpoint, eval_k);
        }
        if (ret_cmd->parsed()) return cmd_retrieve(ret_data, ret_checkpoint, ret_id, ret_k);
        if (abl_cmd->parsed()) {
            if (!abl_opt.config.empty()) apply_config_file(*abl_cmd, abl_opt.config);
            require_opt(*abl_cmd, "--data");
            require_opt(*abl_cmd, "--axis");
            require_opt(*abl_cmd, "--values");
            return cmd_ablate(abl_opt, abl_axis, abl_values);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitFormat;
    } catch (const CorruptionError& e) {
        std::cerr << "corrupt file: " << e.what() << "\n";
        return kExitFormat;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitInternal;
}

int run(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.push_back("protalign");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const auto& a : full) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace protalign::cli
