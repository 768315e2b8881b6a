#include "flowbench/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "flowbench/ops.hpp"

namespace flowbench {

Tensor mse_loss(Tape& tape, const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("mse_loss: shapes differ, " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
    }
    Tensor diff = sub(tape, pred, target);
    return mean(tape, mul(tape, diff, diff));
}

AdamOptimizer::AdamOptimizer(std::vector<NamedParam> params, double lr, double beta1,
                             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const NamedParam& p : params_) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
    }
}

void AdamOptimizer::step() {
    for (const NamedParam& p : params_) {
        if (!p.value.has_grad()) {
            throw ContractError("adam step: parameter \"" + p.name +
                                "\" has no gradient populated");
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi].value;
        const std::vector<double>& g = p.grad();
        std::vector<double>& m = m_[pi];
        std::vector<double>& v = v_[pi];
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.at(i) -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (NamedParam& p : params_) {
        p.value.zero_grad();
    }
}

namespace {

// Copies the pair fields of one batch into fresh [B x H x W] leaf tensors.
struct BatchTensors {
    Tensor prev, curr, target;
};

BatchTensors assemble_batch(const std::vector<SamplePair>& batch, const FrameGeometry& geo) {
    const std::size_t b = batch.size();
    const std::size_t flat = geo.flat_len();
    BatchTensors out{Tensor(Shape{b, geo.height, geo.width}),
                     Tensor(Shape{b, geo.height, geo.width}),
                     Tensor(Shape{b, geo.height, geo.width})};
    for (std::size_t i = 0; i < b; ++i) {
        const SamplePair& pair = batch[i];
        for (std::size_t j = 0; j < flat; ++j) {
            out.prev.at(i * flat + j) = pair.prev.at(j);
            out.curr.at(i * flat + j) = pair.curr.at(j);
            out.target.at(i * flat + j) = pair.target.at(j);
        }
    }
    return out;
}

} // namespace

void train(FlowModel& model, const FrameDataset& ds, const TrainConfig& cfg, MetricsSink& sink) {
    if (cfg.batch_size < 1 || cfg.epochs < 1 || cfg.lr <= 0.0) {
        throw ParameterError("train: batch size, epochs and learning rate must be positive");
    }
    if (ds.geometry != model.config().geometry) {
        throw DimensionError("train: dataset frames are " + std::to_string(ds.geometry.height) +
                             "x" + std::to_string(ds.geometry.width) + " but the model expects " +
                             std::to_string(model.config().geometry.height) + "x" +
                             std::to_string(model.config().geometry.width));
    }
    const std::vector<SamplePair> pairs = make_pairs(ds, Split::Train);

    const std::string tag(model_name(model.kind()));
    Rng shuffle_rng = substream(cfg.seed, "shuffle:" + tag);
    Rng dropout_rng = substream(cfg.seed, "dropout:" + tag);

    AdamOptimizer adam(model.parameters(), cfg.lr);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = batch_iter(pairs, cfg.batch_size, cfg.shuffle ? &shuffle_rng : nullptr);
        for (const auto& batch : batches) {
            BatchTensors tensors = assemble_batch(batch, ds.geometry);
            Tape tape;
            Tensor pred = model.forward(tape, tensors.prev, tensors.curr, /*training=*/true,
                                        &dropout_rng);
            Tensor loss = mse_loss(tape, pred, tensors.target);
            tape.backward(loss);
            adam.step();
            adam.zero_grad();

            ++step;
            const double mse = loss.at(0);
            sink.record(MetricsRecord{step, model.kind(), mse,
                                      psnr_from_mse(mse, kNormalizedDataRange),
                                      batch_ssim(pred, tensors.target, kNormalizedDataRange)});
        }
    }
}

MetricsRecord evaluate(FlowModel& model, const FrameDataset& ds) {
    if (ds.geometry != model.config().geometry) {
        throw DimensionError("evaluate: dataset geometry does not match the model");
    }
    const std::vector<SamplePair> pairs = make_pairs(ds, Split::Test);
    const std::size_t flat = ds.geometry.flat_len();

    double sq_sum = 0.0;
    double ssim_sum = 0.0;
    std::size_t n_values = 0;
    const std::size_t chunk = 12;
    for (std::size_t begin = 0; begin < pairs.size(); begin += chunk) {
        const std::size_t end = std::min(begin + chunk, pairs.size());
        std::vector<SamplePair> batch(pairs.begin() + static_cast<std::ptrdiff_t>(begin),
                                      pairs.begin() + static_cast<std::ptrdiff_t>(end));
        BatchTensors tensors = assemble_batch(batch, ds.geometry);
        Tape tape(/*recording=*/false);
        Tensor pred = model.forward(tape, tensors.prev, tensors.curr, /*training=*/false, nullptr);
        // Per-pair accumulation keeps the pooled result independent of how the
        // pairs were chunked.
        for (std::size_t i = 0; i < batch.size(); ++i) {
            double pair_sq = 0.0;
            for (std::size_t j = 0; j < flat; ++j) {
                const double d = pred.at(i * flat + j) - tensors.target.at(i * flat + j);
                pair_sq += d * d;
            }
            sq_sum += pair_sq;
            n_values += flat;

            Tensor pf(Shape{ds.geometry.height, ds.geometry.width});
            Tensor tf(Shape{ds.geometry.height, ds.geometry.width});
            for (std::size_t j = 0; j < flat; ++j) {
                pf.at(j) = pred.at(i * flat + j);
                tf.at(j) = tensors.target.at(i * flat + j);
            }
            ssim_sum += ssim(pf, tf, kNormalizedDataRange);
        }
    }

    const double mse = sq_sum / static_cast<double>(n_values);
    return MetricsRecord{0, model.kind(), mse, psnr_from_mse(mse, kNormalizedDataRange),
                         ssim_sum / static_cast<double>(pairs.size())};
}

void render_frame_pgm(const Tensor& frame, const std::string& path) {
    if (frame.ndim() != 2) {
        throw DimensionError("render_frame: expected an [H x W] frame, got " +
                             shape_str(frame.shape()));
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open " + path + " for writing");
    }
    const std::size_t h = frame.dim(0), w = frame.dim(1);
    out << "P2\n" << w << " " << h << "\n255\n";
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double v = (frame.at(y * w + x) + 1.0) * 0.5 * 255.0;
            const long q = std::lround(std::clamp(v, 0.0, 255.0));
            out << q << (x + 1 == w ? "" : " ");
        }
        out << "\n";
    }
    if (!out) {
        throw FormatError("failed writing " + path);
    }
}

BenchmarkResult run_benchmark(const FrameDataset& ds, const TrainConfig& cfg,
                              std::vector<ModelKind> kinds, unsigned max_threads,
                              bool row_tokens) {
    ModelConfig mc;
    mc.geometry = ds.geometry;
    mc.dropout_p = cfg.dropout_p;
    mc.row_tokens = row_tokens;

    struct Job {
        ModelKind kind;
        std::shared_ptr<FlowModel> model;
        VectorSink sink;
        MetricsRecord test{};
        std::exception_ptr error;
    };
    std::vector<Job> jobs;
    for (ModelKind kind : kinds) {
        jobs.push_back(Job{kind, nullptr, {}, {}, nullptr});
    }

    auto run_one = [&](Job& job) {
        try {
            Rng init_rng = substream(cfg.seed, "init:" + std::string(model_name(job.kind)));
            job.model = make_model(job.kind, mc, init_rng);
            train(*job.model, ds, cfg, job.sink);
            job.test = evaluate(*job.model, ds);
        } catch (...) {
            job.error = std::current_exception();
        }
    };

    const unsigned workers = std::max(1u, max_threads);
    if (workers == 1 || jobs.size() == 1) {
        for (Job& job : jobs) {
            run_one(job);
        }
    } else {
        for (std::size_t begin = 0; begin < jobs.size(); begin += workers) {
            std::vector<std::thread> pool;
            const std::size_t end = std::min(begin + workers, jobs.size());
            for (std::size_t i = begin; i < end; ++i) {
                pool.emplace_back(run_one, std::ref(jobs[i]));
            }
            for (std::thread& t : pool) {
                t.join();
            }
        }
    }

    BenchmarkResult result;
    for (Job& job : jobs) {
        if (job.error) {
            std::rethrow_exception(job.error);
        }
        result.training[job.kind] = std::move(job.sink.records);
        result.test.push_back(job.test);
        result.models[job.kind] = std::move(job.model);
    }
    return result;
}

} // namespace flowbench
