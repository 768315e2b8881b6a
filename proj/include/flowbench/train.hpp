#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "flowbench/dataset.hpp"
#include "flowbench/metrics.hpp"
#include "flowbench/models.hpp"

namespace flowbench {

// PSNR/SSIM of [-1, 1]-normalized frames use the full span of that range.
inline constexpr double kNormalizedDataRange = 2.0;

struct TrainConfig {
    std::size_t batch_size = 12;
    std::size_t epochs = 20;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    double dropout_p = 0.1;
    bool shuffle = true;
    FrameGeometry geometry;
};

// Mean over all elements of (pred - target)^2, differentiable w.r.t. pred.
Tensor mse_loss(Tape& tape, const Tensor& pred, const Tensor& target);

// Adam with bias correction: p <- p - lr * mhat / (sqrt(vhat) + eps).
// First/second moment state is kept per parameter tensor.
class AdamOptimizer {
public:
    explicit AdamOptimizer(std::vector<NamedParam> params, double lr = 1e-3,
                           double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // Consumes the gradients currently stored on the parameters; throws
    // ContractError if any parameter has no gradient populated.
    void step();
    void zero_grad();
    long step_count() const { return t_; }

private:
    std::vector<NamedParam> params_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

class MetricsSink {
public:
    virtual ~MetricsSink() = default;
    virtual void record(const MetricsRecord& rec) = 0;
};

struct VectorSink final : MetricsSink {
    std::vector<MetricsRecord> records;
    void record(const MetricsRecord& rec) override { records.push_back(rec); }
};

// Trains a model on the dataset's training pairs: per batch forward (the
// transformer reads prev and curr, the others curr only), MSE loss, backward,
// Adam step, then one MetricsRecord on that batch. Deterministic for a given
// config seed: shuffling and dropout draw from per-model named substreams.
void train(FlowModel& model, const FrameDataset& ds, const TrainConfig& cfg, MetricsSink& sink);

// Pooled test metrics over all test pairs: mean MSE over every element, PSNR
// from the pooled MSE, SSIM averaged per frame. Gradient-free.
MetricsRecord evaluate(FlowModel& model, const FrameDataset& ds);

// Plain-text PGM (P2), values mapped from [-1, 1] to 0..255.
void render_frame_pgm(const Tensor& frame, const std::string& path);

struct BenchmarkResult {
    std::map<ModelKind, std::vector<MetricsRecord>> training;
    std::vector<MetricsRecord> test; // one record per model, column order
    std::map<ModelKind, std::shared_ptr<FlowModel>> models;
};

// Builds, trains and evaluates the requested models on one dataset. Models
// run in parallel worker threads (capped by max_threads) but draw all
// randomness from per-model substreams of cfg.seed, so results do not depend
// on scheduling.
BenchmarkResult run_benchmark(const FrameDataset& ds, const TrainConfig& cfg,
                              std::vector<ModelKind> kinds, unsigned max_threads,
                              bool row_tokens = false);

} // namespace flowbench
