#pragma once

#include <map>
#include <string>
#include <vector>

#include "flowbench/models.hpp"
#include "flowbench/tensor.hpp"

namespace flowbench {

// One emitted measurement: per training step during training (step is
// 1-based), or step 0 for the final test evaluation.
struct MetricsRecord {
    std::size_t step = 0;
    ModelKind model = ModelKind::FlowAutoencoder;
    double mse = 0.0;
    double psnr = 0.0; // dB, +infinity when mse == 0
    double ssim = 0.0;
};

// 10 * log10(range^2 / mse); +infinity sentinel when mse == 0.
double psnr_from_mse(double mse, double data_range);
double psnr(const Tensor& pred, const Tensor& target, double data_range);

// Mean SSIM over all valid 7x7 uniform windows of a single [H x W] frame;
// population variance, C1 = (0.01 * range)^2, C2 = (0.03 * range)^2.
double ssim(const Tensor& pred, const Tensor& target, double data_range);

// Mean per-frame SSIM over a [B x H x W] batch.
double batch_ssim(const Tensor& pred, const Tensor& target, double data_range);

inline constexpr std::size_t kSsimWindow = 7;

// Fixed CSV column layout, regardless of which models ran:
//   step,FlowTransformerValues,FlowConvValues,FlowAutoencoderValues
// Cells of models that did not run stay empty. Values are printed with 6
// significant digits; +infinity is serialized as "inf".
std::string format_metric_value(double v);
void write_training_csvs(const std::string& dir,
                         const std::map<ModelKind, std::vector<MetricsRecord>>& by_model);

// test_results.csv: model,test_loss,psnr,ssim
void write_test_results_csv(const std::string& path, const std::vector<MetricsRecord>& results);

} // namespace flowbench
