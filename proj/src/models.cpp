#include "flowbench/models.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace flowbench {

std::string_view model_name(ModelKind kind) {
    switch (kind) {
    case ModelKind::FlowAutoencoder:
        return "FlowAutoencoder";
    case ModelKind::FlowConvAutoencoder:
        return "FlowConvAutoencoder";
    case ModelKind::FlowTransformer:
        return "FlowTransformer";
    }
    throw ParameterError("unknown model kind");
}

ModelKind model_kind_from_tag(std::string_view tag) {
    if (tag == "ae") {
        return ModelKind::FlowAutoencoder;
    }
    if (tag == "conv") {
        return ModelKind::FlowConvAutoencoder;
    }
    if (tag == "transformer") {
        return ModelKind::FlowTransformer;
    }
    throw ParameterError("unknown model tag \"" + std::string(tag) +
                         "\" (expected ae, conv or transformer)");
}

namespace {

void check_batch_geometry(const Tensor& frames, const FrameGeometry& geometry,
                          std::string_view model) {
    if (frames.ndim() != 3 || frames.dim(1) != geometry.height ||
        frames.dim(2) != geometry.width) {
        throw DimensionError(std::string(model) + " expects [batch x " +
                             std::to_string(geometry.height) + " x " +
                             std::to_string(geometry.width) + "] frames, got " +
                             shape_str(frames.shape()));
    }
}

} // namespace

// ---------------------------------------------------------------------------
// FlowAutoencoder
// ---------------------------------------------------------------------------

FlowAutoencoderModel::FlowAutoencoderModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    const std::size_t flat = cfg.geometry.flat_len();
    layer1_ = make_linear(flat, flat, rng);
    layer2_ = make_linear(flat, cfg.mlp_bottleneck, rng);
    layer3_ = make_linear(cfg.mlp_bottleneck, flat, rng);
}

Tensor FlowAutoencoderModel::forward(Tape& tape, const Tensor& /*prev*/, const Tensor& curr,
                                     bool /*training*/, Rng* /*dropout_rng*/) {
    check_batch_geometry(curr, cfg_.geometry, model_name(kind()));
    const std::size_t batch = curr.dim(0);
    const std::size_t flat = cfg_.geometry.flat_len();
    Tensor x = reshape(tape, curr, Shape{batch, flat});
    x = tanh(tape, linear_forward(tape, layer1_, x));
    x = tanh(tape, linear_forward(tape, layer2_, x));
    x = tanh(tape, linear_forward(tape, layer3_, x));
    return reshape(tape, x, Shape{batch, cfg_.geometry.height, cfg_.geometry.width});
}

std::vector<NamedParam> FlowAutoencoderModel::parameters() const {
    std::vector<NamedParam> params;
    layer1_.append_params("layer1", params);
    layer2_.append_params("layer2", params);
    layer3_.append_params("layer3", params);
    return params;
}

// ---------------------------------------------------------------------------
// FlowConvAutoencoder
// ---------------------------------------------------------------------------

FlowConvAutoencoderModel::FlowConvAutoencoderModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    enc1_ = make_conv(1, 8, 3, rng);
    enc2_ = make_conv(8, 16, 3, rng);
    dec1_ = make_conv(16, 8, 3, rng);
    dec2_ = make_conv(8, 1, 3, rng);
}

Tensor FlowConvAutoencoderModel::forward(Tape& tape, const Tensor& /*prev*/, const Tensor& curr,
                                         bool /*training*/, Rng* /*dropout_rng*/) {
    check_batch_geometry(curr, cfg_.geometry, model_name(kind()));
    const std::size_t h = cfg_.geometry.height, w = cfg_.geometry.width;
    if (h < 4 || w < 4) {
        throw DimensionError("FlowConvAutoencoder needs frames of at least 4x4 for two "
                             "pooling stages, got " +
                             std::to_string(h) + "x" + std::to_string(w));
    }
    const std::size_t batch = curr.dim(0);
    Tensor x = reshape(tape, curr, Shape{batch, 1, h, w});
    x = tanh(tape, maxpool2d(tape, conv2d(tape, x, enc1_.kernel, enc1_.bias, 1, 1), 2, 2).output);
    x = tanh(tape, maxpool2d(tape, conv2d(tape, x, enc2_.kernel, enc2_.bias, 1, 1), 2, 2).output);
    x = tanh(tape, upsample_nearest(tape, conv2d(tape, x, dec1_.kernel, dec1_.bias, 1, 1), 2));
    x = tanh(tape, upsample_nearest(tape, conv2d(tape, x, dec2_.kernel, dec2_.bias, 1, 1), 2));
    x = pad_crop2d(tape, x, h, w);
    return reshape(tape, x, Shape{batch, h, w});
}

std::vector<NamedParam> FlowConvAutoencoderModel::parameters() const {
    std::vector<NamedParam> params;
    enc1_.append_params("enc1", params);
    enc2_.append_params("enc2", params);
    dec1_.append_params("dec1", params);
    dec2_.append_params("dec2", params);
    return params;
}

// ---------------------------------------------------------------------------
// FlowTransformer
// ---------------------------------------------------------------------------

std::size_t FlowTransformerModel::token_count() const {
    return cfg_.row_tokens ? cfg_.geometry.height : 1;
}

std::size_t FlowTransformerModel::token_width() const {
    return cfg_.row_tokens ? cfg_.geometry.width : cfg_.geometry.flat_len();
}

FlowTransformerModel::FlowTransformerModel(const ModelConfig& cfg, Rng& rng)
    : cfg_(cfg),
      embed_prev_(make_linear(cfg.row_tokens ? cfg.geometry.width : cfg.geometry.flat_len(),
                              cfg.d_model, rng)),
      embed_curr_(make_linear(cfg.row_tokens ? cfg.geometry.width : cfg.geometry.flat_len(),
                              cfg.d_model, rng)),
      pe_(cfg.row_tokens ? cfg.geometry.height : 1, cfg.d_model),
      encoder_(make_encoder_block(
          TransformerBlockConfig{cfg.d_model, cfg.num_heads, cfg.d_ff, cfg.dropout_p}, rng)),
      decoder_(make_decoder_block(
          TransformerBlockConfig{cfg.d_model, cfg.num_heads, cfg.d_ff, cfg.dropout_p}, rng)),
      unembed_(make_linear(cfg.d_model,
                           cfg.row_tokens ? cfg.geometry.width : cfg.geometry.flat_len(), rng)) {}

Tensor FlowTransformerModel::forward(Tape& tape, const Tensor& prev, const Tensor& curr,
                                     bool training, Rng* dropout_rng) {
    check_batch_geometry(prev, cfg_.geometry, model_name(kind()));
    check_batch_geometry(curr, cfg_.geometry, model_name(kind()));
    if (prev.dim(0) != curr.dim(0)) {
        throw DimensionError("FlowTransformer prev/curr batch sizes differ: " +
                             shape_str(prev.shape()) + " vs " + shape_str(curr.shape()));
    }
    const std::size_t batch = curr.dim(0);
    const std::size_t flat = cfg_.geometry.flat_len();
    const std::size_t tokens = token_count();
    const std::size_t width = token_width();

    Tensor prev_flat = reshape(tape, prev, Shape{batch, flat});
    Tensor curr_flat = reshape(tape, curr, Shape{batch, flat});

    last_encoder_attn_.clear();
    last_decoder_self_attn_.clear();
    last_decoder_cross_attn_.clear();

    // Each batch item is its own token sequence; attention never crosses
    // samples.
    std::vector<Tensor> outputs;
    outputs.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        Tensor prev_tokens = slice_rows(tape, prev_flat, i, 1);
        Tensor curr_tokens = slice_rows(tape, curr_flat, i, 1);
        if (cfg_.row_tokens) {
            prev_tokens = reshape(tape, prev_tokens, Shape{tokens, width});
            curr_tokens = reshape(tape, curr_tokens, Shape{tokens, width});
        }
        Tensor enc_in = add_positional(tape, pe_, linear_forward(tape, embed_prev_, prev_tokens));
        Tensor dec_in = add_positional(tape, pe_, linear_forward(tape, embed_curr_, curr_tokens));

        BlockResult enc = encoder_forward(tape, encoder_, enc_in, training, dropout_rng);
        BlockResult dec =
            decoder_forward(tape, decoder_, dec_in, enc.output, training, dropout_rng);
        if (i == 0) {
            last_encoder_attn_ = enc.self_attn_weights;
            last_decoder_self_attn_ = dec.self_attn_weights;
            last_decoder_cross_attn_ = dec.cross_attn_weights;
        }

        Tensor y = linear_forward(tape, unembed_, dec.output); // [tokens x width]
        outputs.push_back(reshape(tape, y, Shape{1, flat}));
    }
    Tensor stacked = batch == 1 ? outputs.front() : concat_rows(tape, outputs);
    return reshape(tape, stacked, Shape{batch, cfg_.geometry.height, cfg_.geometry.width});
}

std::vector<NamedParam> FlowTransformerModel::parameters() const {
    std::vector<NamedParam> params;
    embed_prev_.append_params("embed_prev", params);
    embed_curr_.append_params("embed_curr", params);
    encoder_.append_params("encoder", params);
    decoder_.append_params("decoder", params);
    unembed_.append_params("unembed", params);
    return params;
}

std::unique_ptr<FlowModel> make_model(ModelKind kind, const ModelConfig& cfg, Rng& rng) {
    switch (kind) {
    case ModelKind::FlowAutoencoder:
        return std::make_unique<FlowAutoencoderModel>(cfg, rng);
    case ModelKind::FlowConvAutoencoder:
        return std::make_unique<FlowConvAutoencoderModel>(cfg, rng);
    case ModelKind::FlowTransformer:
        return std::make_unique<FlowTransformerModel>(cfg, rng);
    }
    throw ParameterError("unknown model kind");
}

std::size_t parameter_count(const FlowModel& model) {
    std::size_t total = 0;
    for (const NamedParam& p : model.parameters()) {
        total += p.value.size();
    }
    return total;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'F', 'L', 'O', 'W', 'B', 'N', 'C', 'H'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct ByteWriter {
    std::string bytes;

    void raw(const void* p, std::size_t n) {
        bytes.append(static_cast<const char*>(p), n);
    }
    void u8(std::uint8_t v) { bytes.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) {
            bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
        }
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
        }
    }
    void f64(double v) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) {
            bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
        }
    }
};

struct ByteReader {
    const unsigned char* p;
    std::size_t size;
    std::size_t pos = 0;
    std::string context;

    void need(std::size_t n) {
        if (pos + n > size) {
            throw FormatError("checkpoint " + context + " is truncated");
        }
    }
    void raw(void* out, std::size_t n) {
        need(n);
        std::memcpy(out, p + pos, n);
        pos += n;
    }
    std::uint8_t u8() {
        need(1);
        return p[pos++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | p[pos + static_cast<std::size_t>(i)];
        }
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 7; i >= 0; --i) {
            bits = (bits << 8) | p[pos + static_cast<std::size_t>(i)];
        }
        pos += 8;
        return std::bit_cast<double>(bits);
    }
};

} // namespace

void save_checkpoint(const FlowModel& model, const std::string& path) {
    const ModelConfig& cfg = model.config();
    ByteWriter w;
    w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
    w.u32(kCheckpointVersion);
    w.u8(static_cast<std::uint8_t>(model.kind()));
    w.u32(static_cast<std::uint32_t>(cfg.geometry.height));
    w.u32(static_cast<std::uint32_t>(cfg.geometry.width));
    w.u32(static_cast<std::uint32_t>(cfg.mlp_bottleneck));
    w.u32(static_cast<std::uint32_t>(cfg.d_model));
    w.u32(static_cast<std::uint32_t>(cfg.num_heads));
    w.u32(static_cast<std::uint32_t>(cfg.d_ff));
    w.f64(cfg.dropout_p);
    w.u8(cfg.row_tokens ? 1 : 0);

    const std::vector<NamedParam> params = model.parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const NamedParam& p : params) {
        w.u16(static_cast<std::uint16_t>(p.name.size()));
        w.raw(p.name.data(), p.name.size());
        w.u8(static_cast<std::uint8_t>(p.value.ndim()));
        for (std::size_t d : p.value.shape()) {
            w.u32(static_cast<std::uint32_t>(d));
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            w.f64(p.value.at(i));
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open " + path + " for writing");
    }
    out.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) {
        throw FormatError("failed writing checkpoint to " + path);
    }
}

std::unique_ptr<FlowModel> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open checkpoint file " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ByteReader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), 0, path};

    char magic[8];
    r.raw(magic, sizeof(magic));
    if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw FormatError("checkpoint " + path +
                          " has a bad magic (expected \"FLOWBNCH\"): wrong or corrupt file");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint " + path + " has unsupported version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint8_t kind_byte = r.u8();
    if (kind_byte > 2) {
        throw FormatError("checkpoint " + path + " names unknown model kind " +
                          std::to_string(kind_byte));
    }
    const ModelKind kind = static_cast<ModelKind>(kind_byte);

    ModelConfig cfg;
    cfg.geometry.height = r.u32();
    cfg.geometry.width = r.u32();
    cfg.mlp_bottleneck = r.u32();
    cfg.d_model = r.u32();
    cfg.num_heads = r.u32();
    cfg.d_ff = r.u32();
    cfg.dropout_p = r.f64();
    cfg.row_tokens = r.u8() != 0;

    Rng scratch_rng(0); // parameters are overwritten below
    std::unique_ptr<FlowModel> model = make_model(kind, cfg, scratch_rng);
    std::vector<NamedParam> params = model->parameters();

    const std::uint32_t n_tensors = r.u32();
    if (n_tensors != params.size()) {
        throw FormatError("checkpoint " + path + " stores " + std::to_string(n_tensors) +
                          " tensors, model expects " + std::to_string(params.size()));
    }
    for (NamedParam& p : params) {
        const std::uint16_t name_len = r.u16();
        std::string name(name_len, '\0');
        r.raw(name.data(), name_len);
        if (name != p.name) {
            throw FormatError("checkpoint " + path + " tensor \"" + name +
                              "\" does not match expected \"" + p.name + "\"");
        }
        const std::uint8_t ndim = r.u8();
        Shape shape(ndim);
        for (auto& d : shape) {
            d = r.u32();
        }
        if (shape != p.value.shape()) {
            throw FormatError("checkpoint " + path + " tensor \"" + name + "\" has shape " +
                              shape_str(shape) + ", expected " + shape_str(p.value.shape()));
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            p.value.at(i) = r.f64();
        }
    }
    if (r.pos != r.size) {
        throw FormatError("checkpoint " + path + " has " + std::to_string(r.size - r.pos) +
                          " trailing bytes");
    }
    return model;
}

} // namespace flowbench
