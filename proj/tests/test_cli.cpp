#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "protalign/commands.hpp"

namespace fs = std::filesystem;
using protalign::cli::run;

namespace {

struct WorkDir {
    fs::path dir;
    WorkDir() {
        dir = fs::temp_directory_path() / "protalign_cli_test";
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~WorkDir() { fs::remove_all(dir); }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small-but-trainable dataset flags shared by the workflow tests.
std::vector<std::string> gen_args(const std::string& out) {
    return {"gen",   "--out", out,  "--pairs", "48",      "--latent", "4",
            "--dp",  "12",    "--ds", "10",    "--noise", "0.05",     "--seed", "21"};
}

}  // namespace

TEST_CASE("gen is deterministic and validates flags") {
    WorkDir wd;
    CHECK(run(gen_args(wd.path("a.pae1"))) == 0);
    CHECK(run(gen_args(wd.path("b.pae1"))) == 0);
    CHECK(slurp(wd.path("a.pae1")) == slurp(wd.path("b.pae1")));

    CHECK(run({"gen", "--out", wd.path("c.pae1"), "--pairs", "0"}) ==
          protalign::cli::kExitConfig);
    CHECK_FALSE(fs::exists(wd.path("c.pae1")));
}

TEST_CASE("unknown flags and missing subcommand are usage errors") {
    CHECK(run({"gen", "--out", "x", "--frobnicate", "1"}) == protalign::cli::kExitConfig);
    CHECK(run({}) == protalign::cli::kExitConfig);
    CHECK(run({"--help"}) == 0);
    CHECK(run({"train", "--help"}) == 0);
}

TEST_CASE("train / eval / retrieve workflow") {
    WorkDir wd;
    REQUIRE(run(gen_args(wd.path("d.pae1"))) == 0);

    const std::vector<std::string> train_args = {
        "train",   "--data", wd.path("d.pae1"), "--out",  wd.path("run"),
        "--epochs", "6",     "--batch", "16",   "--dim",  "16",
        "--heads",  "4",     "--seed",  "3",    "--eval-every", "0"};
    CHECK(run(train_args) == 0);
    CHECK(fs::exists(wd.path("run/checkpoint.pac1")));
    CHECK(fs::exists(wd.path("run/loss_curve.csv")));

    CHECK(run({"eval", "--data", wd.path("d.pae1"), "--checkpoint",
               wd.path("run/checkpoint.pac1"), "--out", wd.path("eval"), "--k", "1,5,10"}) ==
          0);
    const std::string recall = slurp(wd.path("eval/recall.csv"));
    CHECK(recall.rfind("k,recall,n_queries\n", 0) == 0);
    CHECK(std::count(recall.begin(), recall.end(), '\n') == 4);  // header + 3 k rows
    CHECK(fs::exists(wd.path("eval/similarity.csv")));
    CHECK(fs::exists(wd.path("eval/embeddings.csv")));

    CHECK(run({"retrieve", "--data", wd.path("d.pae1"), "--checkpoint",
               wd.path("run/checkpoint.pac1"), "--id", "synth000003", "--k", "999"}) == 0);
    CHECK(run({"retrieve", "--data", wd.path("d.pae1"), "--checkpoint",
               wd.path("run/checkpoint.pac1"), "--id", "nosuch", "--k", "1"}) ==
          protalign::cli::kExitConfig);
}

TEST_CASE("train rejects tau=0; eval rejects corrupted checkpoint") {
    WorkDir wd;
    REQUIRE(run(gen_args(wd.path("e.pae1"))) == 0);
    CHECK(run({"train", "--data", wd.path("e.pae1"), "--out", wd.path("run"), "--tau", "0",
               "--epochs", "1", "--dim", "16"}) == protalign::cli::kExitConfig);

    std::ofstream bad(wd.path("bad.pac1"), std::ios::binary);
    bad << "PAC1junk";
    bad.close();
    CHECK(run({"eval", "--data", wd.path("e.pae1"), "--checkpoint", wd.path("bad.pac1"),
               "--out", wd.path("eval")}) == protalign::cli::kExitFormat);

    CHECK(run({"train", "--data", wd.path("missing.pae1"), "--out", wd.path("run"),
               "--epochs", "1"}) == protalign::cli::kExitIo);
}

TEST_CASE("config file supplies defaults, flags override, unknown keys rejected") {
    WorkDir wd;
    REQUIRE(run(gen_args(wd.path("f.pae1"))) == 0);

    {
        std::ofstream cfg(wd.path("run.cfg"));
        cfg << "data=" << wd.path("f.pae1") << "\n"
            << "epochs=2\nbatch=16\ndim=16\nheads=4\neval-every=0\n"
            << "out=" << wd.path("cfg_run") << "\n";
    }
    CHECK(run({"train", "--config", wd.path("run.cfg")}) == 0);
    CHECK(fs::exists(wd.path("cfg_run/checkpoint.pac1")));

    // flag overrides the file value
    CHECK(run({"train", "--config", wd.path("run.cfg"), "--out", wd.path("cfg_run2")}) == 0);
    CHECK(fs::exists(wd.path("cfg_run2/checkpoint.pac1")));

    {
        std::ofstream cfg(wd.path("bad.cfg"));
        cfg << "data=" << wd.path("f.pae1") << "\nnot_a_key=1\n";
    }
    CHECK(run({"train", "--config", wd.path("bad.cfg")}) == protalign::cli::kExitConfig);
}

TEST_CASE("ablate emits a table and keeps going on per-run failure") {
    WorkDir wd;
    REQUIRE(run(gen_args(wd.path("g.pae1"))) == 0);
    // -1 is an invalid temperature: that sweep point must fail as a row.
    CHECK(run({"ablate", "--data", wd.path("g.pae1"), "--out", wd.path("abl"), "--axis",
               "tau", "--values", "0.07,-1", "--epochs", "2", "--batch", "16", "--dim",
               "16", "--heads", "4", "--eval-every", "0"}) == 0);
    const std::string table = slurp(wd.path("abl/ablation.csv"));
    CHECK(table.rfind("axis,value,status,final_loss,recall_at_1,recall_at_5,epochs_to_best\n",
                      0) == 0);
    CHECK(table.find("tau,0.07,ok") != std::string::npos);
    CHECK(table.find("tau,-1,failed") != std::string::npos);
}
