// Exercises the flowbench binary end to end. The test runner passes the
// binary path through FLOWBENCH_BIN.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "flowbench/manifest.hpp"

namespace fs = std::filesystem;

namespace {

std::string binary() {
    const char* env = std::getenv("FLOWBENCH_BIN");
    REQUIRE_MESSAGE(env != nullptr, "FLOWBENCH_BIN must point at the flowbench binary");
    return env;
}

int run(const std::string& args, const std::string& env_prefix = "") {
    const std::string cmd =
        env_prefix + (env_prefix.empty() ? "" : " ") + binary() + " " + args +
        " >cli_stdout.txt 2>cli_stderr.txt";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const char* leaf) const { return (path / leaf).string(); }
};

} // namespace

TEST_CASE("generate writes the documented file size and is seed-stable") {
    TempDir dir("flowbench_cli_generate");
    const std::string out = dir / "flow.dat";

    CHECK(run("generate --height 16 --width 32 --frames 151 --seed 7 --out " + out) == 0);
    CHECK(fs::file_size(out) == 20 + 151 * 512 * 8);

    const std::string again = dir / "flow2.dat";
    CHECK(run("generate --height 16 --width 32 --frames 151 --seed 7 --out " + again) == 0);
    CHECK(slurp(out) == slurp(again));
}

TEST_CASE("generate rejects --frames 2 with a machine-parseable error") {
    TempDir dir("flowbench_cli_badframes");
    CHECK(run("generate --frames 2 --out " + (dir / "x.dat")) != 0);
    const std::string err = slurp("cli_stderr.txt");
    CHECK(err.rfind("error:", 0) == 0);
}

TEST_CASE("train writes csvs, checkpoints and a manifest; eval renders frames") {
    TempDir dir("flowbench_cli_train");
    const std::string data = dir / "flow.dat";
    REQUIRE(run("generate --height 8 --width 8 --frames 41 --seed 7 --out " + data) == 0);

    const std::string outdir = dir / "run1";
    REQUIRE(run("train --model conv --data " + data + " --epochs 2 --batch 12 --seed 7 --outdir " +
                outdir) == 0);

    for (const char* f :
         {"Train_step_loss.csv", "PSNR_training.csv", "SSIM_training.csv", "manifest.json",
          "FlowConvAutoencoder.ckpt"}) {
        CAPTURE(f);
        CHECK(fs::exists(fs::path(outdir) / f));
    }

    // Header pinned, conv column filled, other columns empty.
    std::ifstream csv(fs::path(outdir) / "Train_step_loss.csv");
    std::string header, row;
    std::getline(csv, header);
    std::getline(csv, row);
    CHECK(header == "step,FlowTransformerValues,FlowConvValues,FlowAutoencoderValues");
    CHECK(row.rfind("1,,", 0) == 0);
    CHECK(row.back() == ',');

    const std::string evaldir = dir / "eval1";
    REQUIRE(run("eval --model-checkpoint " + (outdir + "/FlowConvAutoencoder.ckpt") + " --data " +
                data + " --render 1 --outdir " + evaldir) == 0);
    CHECK(fs::exists(fs::path(evaldir) / "test_results.csv"));
    CHECK(fs::exists(fs::path(evaldir) / "pred_000.pgm"));
    CHECK(fs::exists(fs::path(evaldir) / "truth_000.pgm"));

    std::ifstream res(fs::path(evaldir) / "test_results.csv");
    std::getline(res, header);
    std::getline(res, row);
    CHECK(header == "model,test_loss,psnr,ssim");
    CHECK(row.rfind("FlowConvAutoencoder,", 0) == 0);
}

TEST_CASE("eval fails loudly on a corrupted checkpoint") {
    TempDir dir("flowbench_cli_badckpt");
    const std::string data = dir / "flow.dat";
    REQUIRE(run("generate --height 8 --width 8 --frames 21 --seed 7 --out " + data) == 0);

    const std::string ckpt = dir / "bad.ckpt";
    std::ofstream out(ckpt, std::ios::binary);
    out << "NOTMAGICxxxxxxxxxxxxxxxxxxxxxxxx";
    out.close();

    CHECK(run("eval --model-checkpoint " + ckpt + " --data " + data) != 0);
    const std::string err = slurp("cli_stderr.txt");
    CHECK(err.rfind("error:", 0) == 0);
    CHECK(err.find("magic") != std::string::npos);
}

TEST_CASE("unknown model tag is rejected") {
    TempDir dir("flowbench_cli_badmodel");
    const std::string data = dir / "flow.dat";
    REQUIRE(run("generate --height 8 --width 8 --frames 21 --seed 7 --out " + data) == 0);
    CHECK(run("train --model mlp --data " + data + " --outdir " + (dir / "run")) != 0);
    CHECK(slurp("cli_stderr.txt").rfind("error:", 0) == 0);
}

TEST_CASE("FLOWBENCH_THREADS=1 produces the same bytes as the default pool") {
    TempDir dir("flowbench_cli_threads");
    const std::string data = dir / "flow.dat";
    REQUIRE(run("generate --height 8 --width 8 --frames 21 --seed 5 --out " + data) == 0);

    const std::string multi = dir / "multi";
    REQUIRE(run("train --model all --data " + data + " --epochs 1 --seed 5 --outdir " + multi) ==
            0);
    const std::string single = dir / "single";
    REQUIRE(run("train --model all --data " + data + " --epochs 1 --seed 5 --outdir " + single,
                "FLOWBENCH_THREADS=1") == 0);

    for (const char* f : {"Train_step_loss.csv", "FlowTransformer.ckpt",
                          "FlowConvAutoencoder.ckpt", "FlowAutoencoder.ckpt"}) {
        CAPTURE(f);
        const std::string a = slurp((fs::path(multi) / f).string());
        CHECK(!a.empty());
        CHECK(a == slurp((fs::path(single) / f).string()));
    }
}

TEST_CASE("rerunning from a manifest reproduces outputs byte for byte") {
    TempDir dir("flowbench_cli_manifest");
    const std::string data = dir / "flow.dat";
    REQUIRE(run("generate --height 8 --width 8 --frames 41 --seed 3 --out " + data) == 0);

    const std::string run_a = dir / "runA";
    REQUIRE(run("train --model ae --data " + data + " --epochs 2 --seed 3 --outdir " + run_a) ==
            0);
    const std::string run_b = dir / "runB";
    REQUIRE(run("train --from-manifest " + (run_a + "/manifest.json") + " --outdir " + run_b) ==
            0);

    for (const char* f : {"Train_step_loss.csv", "PSNR_training.csv", "SSIM_training.csv",
                          "FlowAutoencoder.ckpt"}) {
        CAPTURE(f);
        CHECK(slurp((fs::path(run_a) / f).string()) == slurp((fs::path(run_b) / f).string()));
    }

    const flowbench::RunManifest m = flowbench::load_manifest(run_a + "/manifest.json");
    CHECK(m.seed == 3);
    CHECK(m.epochs == 2);
    CHECK(m.models == std::vector<std::string>{"ae"});
    CHECK(m.data_digest == flowbench::fnv1a64_file_digest(data));
}
