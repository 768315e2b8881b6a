#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "flowbench/dataset.hpp"
#include "flowbench/ops.hpp"
#include "flowbench/train.hpp"
#include "oracles.hpp"

using namespace flowbench;

namespace {

std::vector<NamedParam> single_param(const char* name, Tensor t) {
    t.set_requires_grad(true);
    return {NamedParam{name, t}};
}

// Identity predictor: returns the current frame. A dataset whose frames are
// constant in time makes it a perfect model by construction.
class IdentityModel final : public FlowModel {
public:
    explicit IdentityModel(FrameGeometry geo) { cfg_.geometry = geo; }

    ModelKind kind() const override { return ModelKind::FlowAutoencoder; }
    const ModelConfig& config() const override { return cfg_; }
    Tensor forward(Tape& tape, const Tensor&, const Tensor& curr, bool, Rng*) override {
        return reshape(tape, curr, curr.shape());
    }
    std::vector<NamedParam> parameters() const override { return {}; }

private:
    ModelConfig cfg_;
};

FrameDataset time_constant_dataset(std::size_t n_frames) {
    FrameDataset ds;
    ds.geometry = FrameGeometry{16, 32};
    Rng rng(5);
    Tensor pattern = random_uniform({16, 32}, -1.0, 1.0, rng);
    for (std::size_t t = 0; t < n_frames; ++t) {
        ds.frames.push_back(pattern.clone_values());
    }
    ds.split_index = static_cast<std::size_t>(static_cast<double>(n_frames) * 0.8);
    return ds;
}

} // namespace

TEST_CASE("adam first step moves parameters by about -lr") {
    Tensor p(Shape{5}, 0.3);
    AdamOptimizer adam(single_param("p", p), 1e-3);
    auto& g = p.ensure_grad();
    std::fill(g.begin(), g.end(), 1.0);
    adam.step();
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(std::abs(p.at(i) - (0.3 - 1e-3)) < 1e-9);
    }
    CHECK(adam.step_count() == 1);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged but counts the step") {
    Tensor p(Shape{4}, 0.7);
    AdamOptimizer adam(single_param("p", p), 1e-3);
    p.ensure_grad(); // zeros
    adam.step();
    CHECK(adam.step_count() == 1);
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(p.at(i) == 0.7);
    }
}

TEST_CASE("adam requires populated gradients") {
    Tensor p(Shape{4}, 0.7);
    AdamOptimizer adam(single_param("p", p), 1e-3);
    CHECK_THROWS_AS(adam.step(), ContractError);
}

TEST_CASE("adam on a quadratic matches the scalar reference trace") {
    // f(p) = p^2, so g = 2p. Every parameter follows the same scalar path.
    Tensor p(Shape{3}, 1.0);
    AdamOptimizer adam(single_param("p", p), 1e-3);

    oracles::AdamTrace trace;
    double ref = 1.0;
    double prev = 1.0;
    bool monotone = true;
    for (int step = 0; step < 100; ++step) {
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < p.size(); ++i) {
            g[i] = 2.0 * p.at(i);
        }
        adam.step();
        p.zero_grad();
        ref = trace.step(ref, 2.0 * ref);
        for (std::size_t i = 0; i < p.size(); ++i) {
            REQUIRE(std::abs(p.at(i) - ref) < 1e-12);
        }
        monotone = monotone && p.at(0) < prev;
        prev = p.at(0);
    }
    CHECK(monotone);
    // The oracle trace lands at ~0.9017 after 100 steps.
    CHECK(p.at(0) == doctest::Approx(0.901743598078609).epsilon(1e-12));
    CHECK(p.at(0) < 0.91);
}

TEST_CASE("adam trajectories are independent of enumeration order") {
    Rng rng(11);
    Tensor a = random_uniform({4}, -1.0, 1.0, rng);
    Tensor b = random_uniform({6}, -1.0, 1.0, rng);
    Tensor a2 = a.clone_values();
    Tensor b2 = b.clone_values();
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    a2.set_requires_grad(true);
    b2.set_requires_grad(true);

    AdamOptimizer fwd({{"a", a}, {"b", b}}, 1e-2);
    AdamOptimizer rev({{"b", b2}, {"a", a2}}, 1e-2);

    for (int step = 0; step < 20; ++step) {
        for (Tensor* t : {&a, &b, &a2, &b2}) {
            auto& g = t->ensure_grad();
            for (std::size_t i = 0; i < t->size(); ++i) {
                g[i] = std::sin(static_cast<double>(i + 1)) * t->at(i);
            }
        }
        fwd.step();
        rev.step();
        for (Tensor* t : {&a, &b, &a2, &b2}) {
            t->zero_grad();
        }
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a.at(i) == a2.at(i));
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        REQUIRE(b.at(i) == b2.at(i));
    }
}

TEST_CASE("training logs exactly epochs x ceil(pairs / batch) steps") {
    FrameDataset ds = normalize(generate_synthetic(FrameGeometry{16, 32}, 31, 7));
    REQUIRE(ds.split_index == 24);
    const auto pairs = make_pairs(ds, Split::Train);
    REQUIRE(pairs.size() == 22);

    ModelConfig mc;
    mc.geometry = ds.geometry;
    mc.mlp_bottleneck = 16;
    Rng rng(1);
    FlowAutoencoderModel model(mc, rng);

    TrainConfig cfg;
    cfg.batch_size = 12;
    cfg.epochs = 3;
    cfg.seed = 7;
    cfg.geometry = ds.geometry;

    VectorSink sink;
    train(model, ds, cfg, sink);
    CHECK(sink.records.size() == 3 * 2); // ceil(22/12) = 2 batches per epoch

    std::size_t expected_step = 1;
    for (const MetricsRecord& rec : sink.records) {
        CHECK(rec.step == expected_step++);
        CHECK(rec.model == ModelKind::FlowAutoencoder);
        CHECK(std::isfinite(rec.mse));
        CHECK(rec.mse >= 0.0);
        CHECK(std::abs(rec.psnr - 10.0 * std::log10(4.0 / rec.mse)) < 1e-9);
        CHECK(rec.ssim >= -1.0);
        CHECK(rec.ssim <= 1.0);
    }
}

TEST_CASE("training is bit-deterministic for a fixed seed") {
    FrameDataset ds = normalize(generate_synthetic(FrameGeometry{16, 32}, 31, 7));
    ModelConfig mc;
    mc.geometry = ds.geometry;
    mc.dropout_p = 0.1;

    auto run = [&]() {
        Rng rng = substream(99, "init:FlowTransformer");
        FlowTransformerModel model(mc, rng);
        TrainConfig cfg;
        cfg.batch_size = 12;
        cfg.epochs = 2;
        cfg.seed = 99;
        cfg.dropout_p = 0.1;
        cfg.geometry = ds.geometry;
        VectorSink sink;
        train(model, ds, cfg, sink);
        return sink.records;
    };

    const auto first = run();
    const auto second = run();
    REQUIRE(first.size() == second.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        REQUIRE(first[i].mse == second[i].mse);
        REQUIRE(first[i].psnr == second[i].psnr);
        REQUIRE(first[i].ssim == second[i].ssim);
    }
}

TEST_CASE("train validates config and geometry") {
    FrameDataset ds = normalize(generate_synthetic(FrameGeometry{16, 32}, 31, 7));
    ModelConfig mc;
    mc.geometry = FrameGeometry{8, 8};
    Rng rng(1);
    FlowAutoencoderModel model(mc, rng);
    TrainConfig cfg;
    cfg.geometry = ds.geometry;
    VectorSink sink;
    CHECK_THROWS_AS(train(model, ds, cfg, sink), DimensionError);

    FlowAutoencoderModel ok_model(
        [&] {
            ModelConfig c;
            c.geometry = ds.geometry;
            return c;
        }(),
        rng);
    TrainConfig bad;
    bad.epochs = 0;
    bad.geometry = ds.geometry;
    CHECK_THROWS_AS(train(ok_model, ds, bad, sink), ParameterError);
}

TEST_CASE("a perfect model evaluates to zero loss, infinite psnr, unit ssim") {
    FrameDataset ds = time_constant_dataset(31);
    IdentityModel model(ds.geometry);
    const MetricsRecord rec = evaluate(model, ds);
    CHECK(rec.mse == 0.0);
    CHECK(std::isinf(rec.psnr));
    CHECK(rec.psnr > 0);
    CHECK(rec.ssim == 1.0);
}

TEST_CASE("evaluate pools statistics over the whole test split") {
    FrameDataset ds = normalize(generate_synthetic(FrameGeometry{16, 32}, 61, 7));
    ModelConfig mc;
    mc.geometry = ds.geometry;
    Rng rng(3);
    FlowAutoencoderModel model(mc, rng);

    const MetricsRecord rec = evaluate(model, ds);
    CHECK(std::isfinite(rec.mse));
    CHECK(rec.mse >= 0.0);
    CHECK(std::abs(rec.psnr - 10.0 * std::log10(4.0 / rec.mse)) < 1e-9);

    // Independent pooled pass over the same pairs.
    const auto pairs = make_pairs(ds, Split::Test);
    double sq = 0.0;
    std::size_t count = 0;
    Tape tape(false);
    for (const SamplePair& p : pairs) {
        Tensor curr(Shape{1, 16, 32});
        Tensor prev(Shape{1, 16, 32});
        for (std::size_t i = 0; i < 512; ++i) {
            curr.at(i) = p.curr.at(i);
            prev.at(i) = p.prev.at(i);
        }
        Tensor pred = model.forward(tape, prev, curr, false, nullptr);
        for (std::size_t i = 0; i < 512; ++i) {
            const double d = pred.at(i) - p.target.at(i);
            sq += d * d;
        }
        count += 512;
    }
    CHECK(rec.mse == doctest::Approx(sq / static_cast<double>(count)).epsilon(1e-14));
}

TEST_CASE("evaluate requires a usable test split") {
    FrameDataset ds = normalize(generate_synthetic(FrameGeometry{16, 32}, 4, 7));
    ModelConfig mc;
    mc.geometry = ds.geometry;
    Rng rng(3);
    FlowAutoencoderModel model(mc, rng);
    CHECK_THROWS_AS(evaluate(model, ds), ParameterError);
}

TEST_CASE("pgm rendering quantizes the [-1, 1] range") {
    Tensor low(Shape{8, 8}, -1.0);
    Tensor high(Shape{8, 8}, 1.0);
    render_frame_pgm(low, "test_render_low.pgm");
    render_frame_pgm(high, "test_render_high.pgm");

    auto parse = [](const std::string& path) {
        std::ifstream in(path);
        REQUIRE(in.good());
        std::string magic;
        std::size_t w = 0, h = 0;
        int maxval = 0;
        in >> magic >> w >> h >> maxval;
        REQUIRE(magic == "P2");
        REQUIRE(w == 8);
        REQUIRE(h == 8);
        REQUIRE(maxval == 255);
        std::vector<int> px;
        int v;
        while (in >> v) {
            px.push_back(v);
        }
        REQUIRE(px.size() == 64);
        return px;
    };

    for (int v : parse("test_render_low.pgm")) {
        CHECK(v == 0);
    }
    for (int v : parse("test_render_high.pgm")) {
        CHECK(v == 255);
    }

    // Parse-back of arbitrary values recovers the quantization exactly.
    Rng rng(17);
    Tensor frame = random_uniform({8, 8}, -1.2, 1.2, rng);
    render_frame_pgm(frame, "test_render_rand.pgm");
    const auto px = parse("test_render_rand.pgm");
    for (std::size_t i = 0; i < 64; ++i) {
        const double v = std::clamp((frame.at(i) + 1.0) * 0.5 * 255.0, 0.0, 255.0);
        CHECK(px[i] == static_cast<int>(std::lround(v)));
    }

    for (const char* f : {"test_render_low.pgm", "test_render_high.pgm", "test_render_rand.pgm"}) {
        std::remove(f);
    }
}

TEST_CASE("autoencoder overfits a single frame pair to below 1e-2") {
    FrameDataset ds = normalize(generate_synthetic(FrameGeometry{16, 32}, 151, 7));
    const SamplePair pair = make_pairs(ds, Split::Train).front();
    Tensor curr(Shape{1, 16, 32});
    Tensor target(Shape{1, 16, 32});
    for (std::size_t i = 0; i < 512; ++i) {
        curr.at(i) = pair.curr.at(i);
        target.at(i) = pair.target.at(i);
    }

    ModelConfig cfg;
    cfg.geometry = ds.geometry;
    Rng init = substream(7, "init:FlowAutoencoder");
    FlowAutoencoderModel model(cfg, init);
    AdamOptimizer adam(model.parameters(), 1e-3);

    double best = 1e30;
    for (int step = 0; step < 500 && best >= 1e-2; ++step) {
        Tape tape;
        Tensor pred = model.forward(tape, curr, curr, true, nullptr);
        Tensor loss = mse_loss(tape, pred, target);
        tape.backward(loss);
        adam.step();
        adam.zero_grad();
        best = std::min(best, loss.at(0));
    }
    CHECK(best < 1e-2);
}

TEST_CASE("run_benchmark trains the requested models and keeps losses learning") {
    FrameDataset ds = normalize(generate_synthetic(FrameGeometry{16, 32}, 31, 7));
    TrainConfig cfg;
    cfg.batch_size = 12;
    cfg.epochs = 4;
    cfg.seed = 7;
    cfg.dropout_p = 0.0;
    cfg.geometry = ds.geometry;

    BenchmarkResult result = run_benchmark(
        ds, cfg, {ModelKind::FlowConvAutoencoder, ModelKind::FlowAutoencoder}, 2);
    REQUIRE(result.training.size() == 2);
    REQUIRE(result.test.size() == 2);

    for (const auto& [kind, records] : result.training) {
        REQUIRE(records.size() == 4 * 2);
        // Statistical trend on the tiny run: the last epoch should not be
        // worse than the first.
        double first_epoch = 0.0, last_epoch = 0.0;
        for (std::size_t i = 0; i < 2; ++i) {
            first_epoch += records[i].mse;
            last_epoch += records[records.size() - 2 + i].mse;
        }
        CHECK(last_epoch < first_epoch);
    }

    // Parallel and sequential execution produce identical metrics.
    BenchmarkResult serial = run_benchmark(
        ds, cfg, {ModelKind::FlowConvAutoencoder, ModelKind::FlowAutoencoder}, 1);
    for (const auto& [kind, records] : result.training) {
        const auto& other = serial.training.at(kind);
        REQUIRE(other.size() == records.size());
        for (std::size_t i = 0; i < records.size(); ++i) {
            REQUIRE(records[i].mse == other[i].mse);
        }
    }
}
