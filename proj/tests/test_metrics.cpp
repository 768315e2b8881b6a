#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "flowbench/metrics.hpp"
#include "flowbench/ops.hpp"
#include "flowbench/train.hpp"
#include "oracles.hpp"

using namespace flowbench;

TEST_CASE("mse_loss closed forms") {
    Tape tape;
    Rng rng(1);
    Tensor a = random_uniform({3, 4}, -1.0, 1.0, rng);
    CHECK(mse_loss(tape, a, a).at(0) == 0.0);

    Tensor shifted(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        shifted.at(i) = a.at(i) + 0.5;
    }
    CHECK(mse_loss(tape, shifted, a).at(0) == doctest::Approx(0.25).epsilon(1e-12));

    Tensor wrong(Shape{4, 3}, 0.0);
    CHECK_THROWS_AS(mse_loss(tape, a, wrong), DimensionError);
}

TEST_CASE("mse_loss matches the naive summation oracle") {
    Rng rng(2);
    Tape tape(false);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor pred = random_uniform({12, 512}, -1.0, 1.0, rng);
        Tensor target = random_uniform({12, 512}, -1.0, 1.0, rng);
        const double expected = oracles::mse_direct(pred, target);
        CHECK(std::abs(mse_loss(tape, pred, target).at(0) - expected) < 1e-12);
    }
}

TEST_CASE("mse_loss is differentiable w.r.t. predictions") {
    Rng rng(3);
    Tensor pred = random_uniform({2, 5}, -1.0, 1.0, rng);
    Tensor target = random_uniform({2, 5}, -1.0, 1.0, rng);
    pred.set_requires_grad(true);

    Tape tape;
    tape.backward(mse_loss(tape, pred, target));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double expected = 2.0 * (pred.at(i) - target.at(i)) / 10.0;
        CHECK(pred.grad()[i] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("psnr closed forms and sentinel") {
    Rng rng(4);
    Tensor x = random_uniform({16, 32}, -1.0, 1.0, rng);
    CHECK(std::isinf(psnr(x, x, 2.0)));
    CHECK(psnr(x, x, 2.0) > 0);

    // mse 0.04 at range 2 -> 10*log10(4/0.04) = 20 dB.
    Tensor shifted(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        shifted.at(i) = x.at(i) + 0.2;
    }
    CHECK(psnr(shifted, x, 2.0) == doctest::Approx(20.0).epsilon(1e-9));

    CHECK_THROWS_AS(psnr_from_mse(0.1, 0.0), ParameterError);
    CHECK_THROWS_AS(psnr_from_mse(0.1, -2.0), ParameterError);
}

TEST_CASE("psnr matches the direct-formula oracle on random frames") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor a = random_uniform({16, 32}, -1.0, 1.0, rng);
        Tensor b = random_uniform({16, 32}, -1.0, 1.0, rng);
        CHECK(std::abs(psnr(a, b, 2.0) - oracles::psnr_direct(a, b, 2.0)) < 1e-9);
    }
}

TEST_CASE("ssim is one exactly for identical frames and below one otherwise") {
    Rng rng(6);
    Tensor x = random_uniform({16, 32}, -1.0, 1.0, rng);
    CHECK(ssim(x, x, 2.0) == 1.0);

    Tensor nudged = x.clone_values();
    nudged.at(100) += 1e-3;
    CHECK(ssim(nudged, x, 2.0) < 1.0);
}

TEST_CASE("ssim constant-offset closed form") {
    // target constant c0, pred constant c0 + c: all variances vanish and each
    // window reduces to (2*mu_x*mu_y + C1) / (mu_x^2 + mu_y^2 + C1).
    const double c0 = 0.25, c = 0.4;
    Tensor target(Shape{16, 32}, c0);
    Tensor pred(Shape{16, 32}, c0 + c);
    const double c1 = (0.01 * 2.0) * (0.01 * 2.0);
    const double mu_x = c0 + c, mu_y = c0;
    const double expected = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1);
    CHECK(ssim(pred, target, 2.0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ssim matches the brute-force window oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor a = random_uniform({16, 32}, -1.0, 1.0, rng);
        Tensor b = random_uniform({16, 32}, -1.0, 1.0, rng);
        const double value = ssim(a, b, 2.0);
        CHECK(std::abs(value - oracles::ssim_direct(a, b, 2.0)) < 1e-10);
        CHECK(value >= -1.0);
        CHECK(value <= 1.0);
    }
}

TEST_CASE("ssim rejects frames smaller than the window") {
    Tensor small(Shape{6, 6}, 0.0);
    CHECK_THROWS_AS(ssim(small, small, 2.0), DimensionError);
}

TEST_CASE("batch ssim averages per-frame values") {
    Rng rng(8);
    Tensor a = random_uniform({3, 16, 32}, -1.0, 1.0, rng);
    Tensor b = random_uniform({3, 16, 32}, -1.0, 1.0, rng);
    double expected = 0.0;
    for (std::size_t f = 0; f < 3; ++f) {
        Tensor af(Shape{16, 32});
        Tensor bf(Shape{16, 32});
        for (std::size_t i = 0; i < 512; ++i) {
            af.at(i) = a.at(f * 512 + i);
            bf.at(i) = b.at(f * 512 + i);
        }
        expected += ssim(af, bf, 2.0);
    }
    CHECK(batch_ssim(a, b, 2.0) == doctest::Approx(expected / 3.0).epsilon(1e-14));
}

TEST_CASE("metric formatting uses 6 significant digits and an inf sentinel") {
    CHECK(format_metric_value(0.123456789) == "0.123457");
    CHECK(format_metric_value(33.732) == "33.732");
    CHECK(format_metric_value(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(format_metric_value(0.0001234567) == "0.000123457");
}

TEST_CASE("training csvs have the pinned header and empty columns for absent models") {
    std::map<ModelKind, std::vector<MetricsRecord>> by_model;
    by_model[ModelKind::FlowConvAutoencoder] = {
        MetricsRecord{1, ModelKind::FlowConvAutoencoder, 0.5, 9.0309, 0.25},
        MetricsRecord{2, ModelKind::FlowConvAutoencoder, 0.25, 12.0412, 0.5},
    };
    write_training_csvs(".", by_model);

    std::ifstream in("Train_step_loss.csv");
    REQUIRE(in.good());
    std::string header, row1, row2;
    std::getline(in, header);
    std::getline(in, row1);
    std::getline(in, row2);
    CHECK(header == "step,FlowTransformerValues,FlowConvValues,FlowAutoencoderValues");
    CHECK(row1 == "1,,0.5,");
    CHECK(row2 == "2,,0.25,");
    in.close();

    for (const char* name : {"Train_step_loss.csv", "PSNR_training.csv", "SSIM_training.csv"}) {
        std::remove(name);
    }
}

TEST_CASE("emitted records keep psnr consistent with mse") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const double mse = rng.uniform(1e-6, 1.0);
        const double p = psnr_from_mse(mse, 2.0);
        CHECK(std::abs(p - 10.0 * std::log10(4.0 / mse)) < 1e-9);
    }
}

TEST_CASE("test results csv layout") {
    std::vector<MetricsRecord> rows = {
        MetricsRecord{0, ModelKind::FlowTransformer, 0.0094, 33.732, 0.9985},
        MetricsRecord{0, ModelKind::FlowAutoencoder, 0.0, std::numeric_limits<double>::infinity(),
                      1.0},
    };
    write_test_results_csv("test_results_layout.csv", rows);
    std::ifstream in("test_results_layout.csv");
    std::string header, row1, row2;
    std::getline(in, header);
    std::getline(in, row1);
    std::getline(in, row2);
    CHECK(header == "model,test_loss,psnr,ssim");
    CHECK(row1 == "FlowTransformer,0.0094,33.732,0.9985");
    CHECK(row2 == "FlowAutoencoder,0,inf,1");
    in.close();
    std::remove("test_results_layout.csv");
}
