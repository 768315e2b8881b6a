#include "flowbench/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace flowbench {

double psnr_from_mse(double mse, double data_range) {
    if (data_range <= 0.0) {
        throw ParameterError("psnr: data range must be positive, got " +
                             std::to_string(data_range));
    }
    if (mse < 0.0) {
        throw ParameterError("psnr: mse must be nonnegative");
    }
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(data_range * data_range / mse);
}

double psnr(const Tensor& pred, const Tensor& target, double data_range) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("psnr: shapes differ, " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.at(i) - target.at(i);
        acc += d * d;
    }
    return psnr_from_mse(acc / static_cast<double>(pred.size()), data_range);
}

double ssim(const Tensor& pred, const Tensor& target, double data_range) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("ssim: shapes differ, " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
    }
    if (pred.ndim() != 2) {
        throw DimensionError("ssim: expected a single [H x W] frame, got " +
                             shape_str(pred.shape()));
    }
    if (data_range <= 0.0) {
        throw ParameterError("ssim: data range must be positive");
    }
    const std::size_t h = pred.dim(0), w = pred.dim(1);
    if (h < kSsimWindow || w < kSsimWindow) {
        throw DimensionError("ssim: frame " + shape_str(pred.shape()) +
                             " is smaller than the " + std::to_string(kSsimWindow) + "x" +
                             std::to_string(kSsimWindow) + " window");
    }

    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    const double inv_n = 1.0 / static_cast<double>(kSsimWindow * kSsimWindow);

    double total = 0.0;
    std::size_t windows = 0;
    for (std::size_t y0 = 0; y0 + kSsimWindow <= h; ++y0) {
        for (std::size_t x0 = 0; x0 + kSsimWindow <= w; ++x0) {
            double sum_x = 0.0, sum_y = 0.0, sum_xx = 0.0, sum_yy = 0.0, sum_xy = 0.0;
            for (std::size_t dy = 0; dy < kSsimWindow; ++dy) {
                for (std::size_t dx = 0; dx < kSsimWindow; ++dx) {
                    const double a = pred.at((y0 + dy) * w + (x0 + dx));
                    const double b = target.at((y0 + dy) * w + (x0 + dx));
                    sum_x += a;
                    sum_y += b;
                    sum_xx += a * a;
                    sum_yy += b * b;
                    sum_xy += a * b;
                }
            }
            const double mu_x = sum_x * inv_n;
            const double mu_y = sum_y * inv_n;
            const double var_x = sum_xx * inv_n - mu_x * mu_x;
            const double var_y = sum_yy * inv_n - mu_y * mu_y;
            const double cov = sum_xy * inv_n - mu_x * mu_y;
            total += ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) /
                     ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
            ++windows;
        }
    }
    return total / static_cast<double>(windows);
}

double batch_ssim(const Tensor& pred, const Tensor& target, double data_range) {
    if (pred.shape() != target.shape() || pred.ndim() != 3) {
        throw DimensionError("batch_ssim: expected matching [B x H x W] tensors, got " +
                             shape_str(pred.shape()) + " and " + shape_str(target.shape()));
    }
    const std::size_t batch = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        Tensor pf(Shape{h, w});
        Tensor tf(Shape{h, w});
        for (std::size_t i = 0; i < h * w; ++i) {
            pf.at(i) = pred.at(b * h * w + i);
            tf.at(i) = target.at(b * h * w + i);
        }
        total += ssim(pf, tf, data_range);
    }
    return total / static_cast<double>(batch);
}

std::string format_metric_value(double v) {
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

namespace {

constexpr ModelKind kColumnOrder[3] = {ModelKind::FlowTransformer,
                                       ModelKind::FlowConvAutoencoder,
                                       ModelKind::FlowAutoencoder};
constexpr char kCsvHeader[] = "step,FlowTransformerValues,FlowConvValues,FlowAutoencoderValues";

void write_one_metric_csv(const std::string& path,
                          const std::map<ModelKind, std::vector<MetricsRecord>>& by_model,
                          double MetricsRecord::* field) {
    std::size_t max_steps = 0;
    for (const auto& [kind, records] : by_model) {
        max_steps = std::max(max_steps, records.size());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open " + path + " for writing");
    }
    out << kCsvHeader << "\n";
    for (std::size_t step = 1; step <= max_steps; ++step) {
        out << step;
        for (ModelKind kind : kColumnOrder) {
            out << ",";
            auto it = by_model.find(kind);
            if (it != by_model.end() && step <= it->second.size()) {
                const MetricsRecord& rec = it->second[step - 1];
                out << format_metric_value(rec.*field);
            }
        }
        out << "\n";
    }
    if (!out) {
        throw FormatError("failed writing " + path);
    }
}

} // namespace

void write_training_csvs(const std::string& dir,
                         const std::map<ModelKind, std::vector<MetricsRecord>>& by_model) {
    write_one_metric_csv(dir + "/Train_step_loss.csv", by_model, &MetricsRecord::mse);
    write_one_metric_csv(dir + "/PSNR_training.csv", by_model, &MetricsRecord::psnr);
    write_one_metric_csv(dir + "/SSIM_training.csv", by_model, &MetricsRecord::ssim);
}

void write_test_results_csv(const std::string& path, const std::vector<MetricsRecord>& results) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open " + path + " for writing");
    }
    out << "model,test_loss,psnr,ssim\n";
    for (const MetricsRecord& rec : results) {
        out << model_name(rec.model) << "," << format_metric_value(rec.mse) << ","
            << format_metric_value(rec.psnr) << "," << format_metric_value(rec.ssim) << "\n";
    }
    if (!out) {
        throw FormatError("failed writing " + path);
    }
}

} // namespace flowbench
