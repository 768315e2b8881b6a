#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "flowbench/geometry.hpp"
#include "flowbench/layers.hpp"

namespace flowbench {

enum class ModelKind : std::uint8_t {
    FlowAutoencoder = 0,
    FlowConvAutoencoder = 1,
    FlowTransformer = 2,
};

std::string_view model_name(ModelKind kind);
// Accepts the CLI tags ae | conv | transformer.
ModelKind model_kind_from_tag(std::string_view tag);

struct ModelConfig {
    FrameGeometry geometry;
    std::size_t mlp_bottleneck = 128;
    std::size_t d_model = 512;
    std::size_t num_heads = 8;
    std::size_t d_ff = 2048;
    double dropout_p = 0.1;
    // Optional transformer tokenization: H tokens of width W instead of one
    // flattened token per frame. Off by default.
    bool row_tokens = false;
};

// Uniform interface over the three architectures. All of them map a batch of
// frames [B x H x W] to predicted next frames of the same shape; only the
// transformer reads `prev`.
class FlowModel {
public:
    virtual ~FlowModel() = default;

    virtual ModelKind kind() const = 0;
    virtual const ModelConfig& config() const = 0;
    virtual Tensor forward(Tape& tape, const Tensor& prev, const Tensor& curr, bool training,
                           Rng* dropout_rng) = 0;
    Tensor forward(Tape& tape, const Tensor& prev, const Tensor& curr) {
        return forward(tape, prev, curr, false, nullptr);
    }
    // Stable enumeration: identical (name, shape) order on every call.
    virtual std::vector<NamedParam> parameters() const = 0;
};

// Three fully connected layers of flat_len, bottleneck and flat_len features,
// tanh after each.
class FlowAutoencoderModel final : public FlowModel {
public:
    FlowAutoencoderModel(const ModelConfig& cfg, Rng& rng);

    using FlowModel::forward;

    ModelKind kind() const override { return ModelKind::FlowAutoencoder; }
    const ModelConfig& config() const override { return cfg_; }
    Tensor forward(Tape& tape, const Tensor& prev, const Tensor& curr, bool training,
                   Rng* dropout_rng) override;
    std::vector<NamedParam> parameters() const override;

private:
    ModelConfig cfg_;
    LinearLayer layer1_, layer2_, layer3_;
};

// Fully convolutional: two conv+pool+tanh encoder stages (1->8->16 channels),
// two conv+upsample+tanh decoder stages (16->8->1), zero-padded back to the
// input geometry.
class FlowConvAutoencoderModel final : public FlowModel {
public:
    FlowConvAutoencoderModel(const ModelConfig& cfg, Rng& rng);

    using FlowModel::forward;

    ModelKind kind() const override { return ModelKind::FlowConvAutoencoder; }
    const ModelConfig& config() const override { return cfg_; }
    Tensor forward(Tape& tape, const Tensor& prev, const Tensor& curr, bool training,
                   Rng* dropout_rng) override;
    std::vector<NamedParam> parameters() const override;

private:
    ModelConfig cfg_;
    ConvLayer enc1_, enc2_, dec1_, dec2_;
};

// One encoder block fed the previous frame, one decoder block fed the current
// frame, 8 heads at d_model 512. Each frame embeds to a single token by
// default; positional encodings are added to both token sequences. The final
// projection is linear, so outputs are unbounded.
class FlowTransformerModel final : public FlowModel {
public:
    FlowTransformerModel(const ModelConfig& cfg, Rng& rng);

    using FlowModel::forward;

    ModelKind kind() const override { return ModelKind::FlowTransformer; }
    const ModelConfig& config() const override { return cfg_; }
    Tensor forward(Tape& tape, const Tensor& prev, const Tensor& curr, bool training,
                   Rng* dropout_rng) override;
    std::vector<NamedParam> parameters() const override;

    // Attention weights of the last forward pass, for inspection.
    const std::vector<Tensor>& last_encoder_attn() const { return last_encoder_attn_; }
    const std::vector<Tensor>& last_decoder_self_attn() const { return last_decoder_self_attn_; }
    const std::vector<Tensor>& last_decoder_cross_attn() const { return last_decoder_cross_attn_; }

private:
    std::size_t token_count() const;
    std::size_t token_width() const;

    ModelConfig cfg_;
    LinearLayer embed_prev_, embed_curr_;
    PositionalEncoding pe_;
    EncoderBlock encoder_;
    DecoderBlock decoder_;
    LinearLayer unembed_;
    std::vector<Tensor> last_encoder_attn_;
    std::vector<Tensor> last_decoder_self_attn_;
    std::vector<Tensor> last_decoder_cross_attn_;
};

std::unique_ptr<FlowModel> make_model(ModelKind kind, const ModelConfig& cfg, Rng& rng);

std::size_t parameter_count(const FlowModel& model);

// Versioned checkpoint: magic "FLOWBNCH", format version, model kind,
// geometry and hyperparameters, then the named parameter tensors as
// little-endian 64-bit floats in enumeration order.
void save_checkpoint(const FlowModel& model, const std::string& path);
std::unique_ptr<FlowModel> load_checkpoint(const std::string& path);

} // namespace flowbench
