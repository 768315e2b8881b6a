// flowbench: generate synthetic flow data, train the three next-frame models,
// evaluate checkpoints, and emit the metric CSVs / renders.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <limits>

#include <CLI11.hpp>

#include "flowbench/dataset.hpp"
#include "flowbench/manifest.hpp"
#include "flowbench/metrics.hpp"
#include "flowbench/models.hpp"
#include "flowbench/train.hpp"

namespace fs = std::filesystem;
using namespace flowbench;

namespace {

unsigned thread_cap() {
    if (const char* env = std::getenv("FLOWBENCH_THREADS")) {
        const long v = std::atol(env);
        if (v >= 1) {
            return static_cast<unsigned>(v);
        }
    }
    return 3;
}

std::vector<ModelKind> kinds_from_tag(const std::string& tag) {
    if (tag == "all") {
        return {ModelKind::FlowTransformer, ModelKind::FlowConvAutoencoder,
                ModelKind::FlowAutoencoder};
    }
    return {model_kind_from_tag(tag)};
}

std::string tag_from_kind(ModelKind kind) {
    switch (kind) {
    case ModelKind::FlowAutoencoder:
        return "ae";
    case ModelKind::FlowConvAutoencoder:
        return "conv";
    case ModelKind::FlowTransformer:
        return "transformer";
    }
    return "?";
}

struct GenerateArgs {
    std::size_t height = 16;
    std::size_t width = 32;
    std::size_t frames = 151;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_generate(const GenerateArgs& args) {
    FrameDataset ds = generate_synthetic(FrameGeometry{args.height, args.width}, args.frames,
                                         args.seed);
    save_raw(ds, args.out);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const Tensor& frame : ds.frames) {
        for (std::size_t i = 0; i < frame.size(); ++i) {
            lo = std::min(lo, frame.at(i));
            hi = std::max(hi, frame.at(i));
        }
    }
    std::cout << "wrote " << ds.n_frames() << " frames of " << args.height << "x" << args.width
              << " to " << args.out << " (value range [" << lo << ", " << hi << "])\n";
    return 0;
}

struct TrainArgs {
    std::string model = "all";
    std::string data;
    std::size_t epochs = 20;
    std::size_t batch = 12;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    double dropout = 0.1;
    bool no_shuffle = false;
    bool row_tokens = false;
    std::string outdir;
    std::string from_manifest;
};

int cmd_train(TrainArgs args) {
    if (!args.from_manifest.empty()) {
        const RunManifest m = load_manifest(args.from_manifest);
        args.model = m.models.size() == 1 ? m.models.front() : "all";
        args.data = m.data_path;
        args.epochs = m.epochs;
        args.batch = m.batch_size;
        args.lr = m.lr;
        args.seed = m.seed;
        args.dropout = m.dropout_p;
        args.no_shuffle = !m.shuffle;
        args.row_tokens = m.row_tokens;
        if (args.outdir.empty()) {
            args.outdir = m.outdir;
        }
    }
    if (args.data.empty() || args.outdir.empty()) {
        throw ParameterError("train requires --data and --outdir");
    }

    const FrameDataset raw = load_raw(args.data);
    const FrameDataset ds = normalize(raw);
    const std::vector<ModelKind> kinds = kinds_from_tag(args.model);

    TrainConfig cfg;
    cfg.batch_size = args.batch;
    cfg.epochs = args.epochs;
    cfg.lr = args.lr;
    cfg.seed = args.seed;
    cfg.dropout_p = args.dropout;
    cfg.shuffle = !args.no_shuffle;
    cfg.geometry = ds.geometry;

    fs::create_directories(args.outdir);
    BenchmarkResult result = run_benchmark(ds, cfg, kinds, thread_cap(), args.row_tokens);

    write_training_csvs(args.outdir, result.training);
    for (const auto& [kind, model] : result.models) {
        save_checkpoint(*model, args.outdir + "/" + std::string(model_name(kind)) + ".ckpt");
    }

    RunManifest manifest;
    for (ModelKind kind : kinds) {
        manifest.models.push_back(tag_from_kind(kind));
    }
    manifest.seed = args.seed;
    manifest.epochs = args.epochs;
    manifest.batch_size = args.batch;
    manifest.lr = args.lr;
    manifest.dropout_p = args.dropout;
    manifest.shuffle = !args.no_shuffle;
    manifest.row_tokens = args.row_tokens;
    manifest.data_path = args.data;
    manifest.data_digest = fnv1a64_file_digest(args.data);
    manifest.n_frames = ds.n_frames();
    manifest.height = ds.geometry.height;
    manifest.width = ds.geometry.width;
    manifest.outdir = args.outdir;
    save_manifest(manifest, args.outdir + "/manifest.json");

    for (const MetricsRecord& rec : result.test) {
        std::cout << model_name(rec.model) << ": test loss " << format_metric_value(rec.mse)
                  << ", psnr " << format_metric_value(rec.psnr) << ", ssim "
                  << format_metric_value(rec.ssim) << "\n";
    }
    std::cout << "outputs written to " << args.outdir << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::size_t render = 0;
    std::string outdir = ".";
};

int cmd_eval(const EvalArgs& args) {
    std::unique_ptr<FlowModel> model = load_checkpoint(args.checkpoint);
    const FrameDataset ds = normalize(load_raw(args.data));
    if (ds.geometry != model->config().geometry) {
        throw DimensionError("dataset frames are " + std::to_string(ds.geometry.height) + "x" +
                             std::to_string(ds.geometry.width) + " but the checkpoint expects " +
                             std::to_string(model->config().geometry.height) + "x" +
                             std::to_string(model->config().geometry.width));
    }

    const MetricsRecord rec = evaluate(*model, ds);
    fs::create_directories(args.outdir);
    write_test_results_csv(args.outdir + "/test_results.csv", {rec});
    std::cout << model_name(rec.model) << ": test loss " << format_metric_value(rec.mse)
              << ", psnr " << format_metric_value(rec.psnr) << ", ssim "
              << format_metric_value(rec.ssim) << "\n";

    if (args.render > 0) {
        const std::vector<SamplePair> pairs = make_pairs(ds, Split::Test);
        const std::size_t n = std::min(args.render, pairs.size());
        const std::size_t flat = ds.geometry.flat_len();
        for (std::size_t i = 0; i < n; ++i) {
            Tensor prev(Shape{1, ds.geometry.height, ds.geometry.width});
            Tensor curr(Shape{1, ds.geometry.height, ds.geometry.width});
            for (std::size_t j = 0; j < flat; ++j) {
                prev.at(j) = pairs[i].prev.at(j);
                curr.at(j) = pairs[i].curr.at(j);
            }
            Tape tape(/*recording=*/false);
            Tensor pred = model->forward(tape, prev, curr);
            Tensor frame(Shape{ds.geometry.height, ds.geometry.width});
            for (std::size_t j = 0; j < flat; ++j) {
                frame.at(j) = pred.at(j);
            }
            char name[32];
            std::snprintf(name, sizeof(name), "pred_%03zu.pgm", i);
            render_frame_pgm(frame, args.outdir + "/" + name);
            std::snprintf(name, sizeof(name), "truth_%03zu.pgm", i);
            render_frame_pgm(pairs[i].target, args.outdir + "/" + name);
        }
        std::cout << "rendered " << n << " frame pair(s) to " << args.outdir << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowbench: next-frame prediction benchmark for 2D laminar flow"};
    app.require_subcommand(1);

    GenerateArgs gen;
    CLI::App* generate = app.add_subcommand("generate", "write a synthetic FLOWDAT1 dataset");
    generate->add_option("--height", gen.height, "frame height")->capture_default_str();
    generate->add_option("--width", gen.width, "frame width")->capture_default_str();
    generate->add_option("--frames", gen.frames, "number of frames")->capture_default_str();
    generate->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
    generate->add_option("--out", gen.out, "output file")->required();

    TrainArgs tr;
    CLI::App* train_cmd = app.add_subcommand("train", "train one or all models");
    train_cmd->add_option("--model", tr.model, "ae | conv | transformer | all")
        ->capture_default_str();
    train_cmd->add_option("--data", tr.data, "FLOWDAT1 dataset file");
    train_cmd->add_option("--epochs", tr.epochs, "training epochs")->capture_default_str();
    train_cmd->add_option("--batch", tr.batch, "batch size")->capture_default_str();
    train_cmd->add_option("--lr", tr.lr, "learning rate")->capture_default_str();
    train_cmd->add_option("--seed", tr.seed, "run seed")->capture_default_str();
    train_cmd->add_option("--dropout", tr.dropout, "transformer dropout probability")
        ->capture_default_str();
    train_cmd->add_flag("--no-shuffle", tr.no_shuffle, "disable epoch shuffling");
    train_cmd->add_flag("--row-tokens", tr.row_tokens,
                        "tokenize frames as H rows instead of one token");
    train_cmd->add_option("--outdir", tr.outdir, "output directory");
    train_cmd->add_option("--from-manifest", tr.from_manifest,
                          "rerun an earlier run from its manifest.json");

    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval_cmd->add_option("--model-checkpoint", ev.checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--data", ev.data, "FLOWDAT1 dataset file")->required();
    eval_cmd->add_option("--render", ev.render, "render N predicted/truth frame pairs")
        ->capture_default_str();
    eval_cmd->add_option("--outdir", ev.outdir, "output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
        if (generate->parsed()) {
            return cmd_generate(gen);
        }
        if (train_cmd->parsed()) {
            return cmd_train(tr);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(ev);
        }
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e); // --help
        }
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
