#include "flowbench/layers.hpp"

#include <cmath>

namespace flowbench {

Tensor xavier_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = random_uniform(shape, -bound, bound, rng);
    t.set_requires_grad(true);
    return t;
}

void LinearLayer::append_params(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

LinearLayer make_linear(std::size_t in, std::size_t out, Rng& rng) {
    LinearLayer layer;
    layer.weight = xavier_uniform(Shape{out, in}, in, out, rng);
    layer.bias = Tensor(Shape{out});
    layer.bias.set_requires_grad(true);
    return layer;
}

Tensor linear_forward(Tape& tape, const LinearLayer& layer, const Tensor& x) {
    if (x.ndim() != 2 || x.dim(1) != layer.in_features()) {
        throw DimensionError("linear layer with weight " + shape_str(layer.weight.shape()) +
                             " cannot take input " + shape_str(x.shape()));
    }
    return add_bias(tape, matmul_nt(tape, x, layer.weight), layer.bias);
}

void ConvLayer::append_params(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".kernel", kernel});
    out.push_back({prefix + ".bias", bias});
}

ConvLayer make_conv(std::size_t c_in, std::size_t c_out, std::size_t k, Rng& rng) {
    ConvLayer layer;
    layer.kernel = xavier_uniform(Shape{c_out, c_in, k, k}, c_in * k * k, c_out * k * k, rng);
    layer.bias = Tensor(Shape{c_out});
    layer.bias.set_requires_grad(true);
    return layer;
}

void LayerNormParams::append_params(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

LayerNormParams make_layer_norm(std::size_t d) {
    LayerNormParams params;
    params.gamma = Tensor(Shape{d}, 1.0);
    params.gamma.set_requires_grad(true);
    params.beta = Tensor(Shape{d});
    params.beta.set_requires_grad(true);
    return params;
}

void MultiHeadAttention::append_params(const std::string& prefix,
                                       std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".w_query", w_query});
    out.push_back({prefix + ".w_key", w_key});
    out.push_back({prefix + ".w_value", w_value});
    out.push_back({prefix + ".w_out", w_out});
}

MultiHeadAttention make_mha(std::size_t d_model, std::size_t num_heads, Rng& rng) {
    if (num_heads == 0 || d_model % num_heads != 0) {
        throw ParameterError("attention d_model " + std::to_string(d_model) +
                             " must be divisible by num_heads " + std::to_string(num_heads));
    }
    MultiHeadAttention att;
    att.num_heads = num_heads;
    att.d_model = d_model;
    att.d_head = d_model / num_heads;
    att.w_query = xavier_uniform(Shape{d_model, d_model}, d_model, d_model, rng);
    att.w_key = xavier_uniform(Shape{d_model, d_model}, d_model, d_model, rng);
    att.w_value = xavier_uniform(Shape{d_model, d_model}, d_model, d_model, rng);
    att.w_out = xavier_uniform(Shape{d_model, d_model}, d_model, d_model, rng);
    return att;
}

AttentionResult mha_forward(Tape& tape, const MultiHeadAttention& att, const Tensor& query,
                            const Tensor& key, const Tensor& value) {
    for (const Tensor* t : {&query, &key, &value}) {
        if (t->ndim() != 2 || t->dim(1) != att.d_model) {
            throw DimensionError("attention expects [L x " + std::to_string(att.d_model) +
                                 "] inputs, got " + shape_str(t->shape()));
        }
    }
    if (key.dim(0) != value.dim(0)) {
        throw DimensionError("attention key and value lengths differ: " +
                             shape_str(key.shape()) + " vs " + shape_str(value.shape()));
    }

    Tensor q = matmul_nt(tape, query, att.w_query);
    Tensor k = matmul_nt(tape, key, att.w_key);
    Tensor v = matmul_nt(tape, value, att.w_value);

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(att.d_head));
    std::vector<Tensor> head_outputs;
    std::vector<Tensor> head_weights;
    head_outputs.reserve(att.num_heads);
    head_weights.reserve(att.num_heads);
    for (std::size_t h = 0; h < att.num_heads; ++h) {
        const std::size_t offset = h * att.d_head;
        Tensor qh = slice_cols(tape, q, offset, att.d_head);
        Tensor kh = slice_cols(tape, k, offset, att.d_head);
        Tensor vh = slice_cols(tape, v, offset, att.d_head);
        Tensor scores = scale(tape, matmul_nt(tape, qh, kh), inv_sqrt_dh);
        Tensor weights = softmax(tape, scores, 1);
        head_weights.push_back(weights);
        head_outputs.push_back(matmul(tape, weights, vh));
    }
    Tensor concat = concat_cols(tape, head_outputs);
    Tensor output = matmul_nt(tape, concat, att.w_out);
    return AttentionResult{output, std::move(head_weights)};
}

PositionalEncoding::PositionalEncoding(std::size_t max_len, std::size_t d_model)
    : max_len_(max_len), d_model_(d_model), table_(Shape{max_len, d_model}) {
    for (std::size_t pos = 0; pos < max_len; ++pos) {
        for (std::size_t i = 0; i < d_model; i += 2) {
            const double rate =
                std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
            const double angle = static_cast<double>(pos) / rate;
            table_.at(pos * d_model + i) = std::sin(angle);
            if (i + 1 < d_model) {
                table_.at(pos * d_model + i + 1) = std::cos(angle);
            }
        }
    }
}

Tensor add_positional(Tape& tape, const PositionalEncoding& pe, const Tensor& x) {
    if (x.ndim() != 2 || x.dim(1) != pe.d_model()) {
        throw DimensionError("positional encoding of width " + std::to_string(pe.d_model()) +
                             " cannot be added to " + shape_str(x.shape()));
    }
    if (x.dim(0) > pe.max_len()) {
        throw ParameterError("sequence length " + std::to_string(x.dim(0)) +
                             " exceeds positional encoding capacity " +
                             std::to_string(pe.max_len()));
    }
    Tensor slice = slice_rows(tape, pe.table(), 0, x.dim(0));
    return add(tape, x, slice);
}

Tensor dropout(Tape& tape, const Tensor& x, double p, bool training, Rng* rng) {
    if (p < 0.0 || p >= 1.0) {
        throw ParameterError("dropout probability must be in [0, 1), got " + std::to_string(p));
    }
    if (!training || p == 0.0) {
        return x;
    }
    if (rng == nullptr) {
        throw ContractError("dropout in training mode requires an rng");
    }
    const double keep_scale = 1.0 / (1.0 - p);
    Tensor mask(x.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask.at(i) = rng->uniform() < p ? 0.0 : keep_scale;
    }
    return mul(tape, x, mask);
}

void EncoderBlock::append_params(const std::string& prefix, std::vector<NamedParam>& out) const {
    self_attn.append_params(prefix + ".self_attn", out);
    norm1.append_params(prefix + ".norm1", out);
    ff1.append_params(prefix + ".ff1", out);
    ff2.append_params(prefix + ".ff2", out);
    norm2.append_params(prefix + ".norm2", out);
}

void DecoderBlock::append_params(const std::string& prefix, std::vector<NamedParam>& out) const {
    self_attn.append_params(prefix + ".self_attn", out);
    norm1.append_params(prefix + ".norm1", out);
    cross_attn.append_params(prefix + ".cross_attn", out);
    norm2.append_params(prefix + ".norm2", out);
    ff1.append_params(prefix + ".ff1", out);
    ff2.append_params(prefix + ".ff2", out);
    norm3.append_params(prefix + ".norm3", out);
}

EncoderBlock make_encoder_block(const TransformerBlockConfig& cfg, Rng& rng) {
    EncoderBlock block;
    block.cfg = cfg;
    block.self_attn = make_mha(cfg.d_model, cfg.num_heads, rng);
    block.ff1 = make_linear(cfg.d_model, cfg.d_ff, rng);
    block.ff2 = make_linear(cfg.d_ff, cfg.d_model, rng);
    block.norm1 = make_layer_norm(cfg.d_model);
    block.norm2 = make_layer_norm(cfg.d_model);
    return block;
}

DecoderBlock make_decoder_block(const TransformerBlockConfig& cfg, Rng& rng) {
    DecoderBlock block;
    block.cfg = cfg;
    block.self_attn = make_mha(cfg.d_model, cfg.num_heads, rng);
    block.cross_attn = make_mha(cfg.d_model, cfg.num_heads, rng);
    block.ff1 = make_linear(cfg.d_model, cfg.d_ff, rng);
    block.ff2 = make_linear(cfg.d_ff, cfg.d_model, rng);
    block.norm1 = make_layer_norm(cfg.d_model);
    block.norm2 = make_layer_norm(cfg.d_model);
    block.norm3 = make_layer_norm(cfg.d_model);
    return block;
}

namespace {

Tensor feed_forward(Tape& tape, const LinearLayer& ff1, const LinearLayer& ff2,
                    const Tensor& x, double p, bool training, Rng* rng) {
    Tensor hidden = dropout(tape, relu(tape, linear_forward(tape, ff1, x)), p, training, rng);
    return linear_forward(tape, ff2, hidden);
}

} // namespace

BlockResult encoder_forward(Tape& tape, const EncoderBlock& block, const Tensor& x,
                            bool training, Rng* dropout_rng) {
    const double p = block.cfg.dropout_p;
    AttentionResult attn = mha_forward(tape, block.self_attn, x, x, x);
    Tensor h = layer_norm(tape, add(tape, x, dropout(tape, attn.output, p, training, dropout_rng)),
                          block.norm1.gamma, block.norm1.beta, kLayerNormEps);
    Tensor ff = feed_forward(tape, block.ff1, block.ff2, h, p, training, dropout_rng);
    Tensor out = layer_norm(tape, add(tape, h, dropout(tape, ff, p, training, dropout_rng)),
                            block.norm2.gamma, block.norm2.beta, kLayerNormEps);
    return BlockResult{out, std::move(attn.head_weights), {}};
}

BlockResult decoder_forward(Tape& tape, const DecoderBlock& block, const Tensor& x,
                            const Tensor& memory, bool training, Rng* dropout_rng) {
    const double p = block.cfg.dropout_p;
    AttentionResult self_attn = mha_forward(tape, block.self_attn, x, x, x);
    Tensor h1 =
        layer_norm(tape, add(tape, x, dropout(tape, self_attn.output, p, training, dropout_rng)),
                   block.norm1.gamma, block.norm1.beta, kLayerNormEps);
    AttentionResult cross = mha_forward(tape, block.cross_attn, h1, memory, memory);
    Tensor h2 =
        layer_norm(tape, add(tape, h1, dropout(tape, cross.output, p, training, dropout_rng)),
                   block.norm2.gamma, block.norm2.beta, kLayerNormEps);
    Tensor ff = feed_forward(tape, block.ff1, block.ff2, h2, p, training, dropout_rng);
    Tensor out = layer_norm(tape, add(tape, h2, dropout(tape, ff, p, training, dropout_rng)),
                            block.norm3.gamma, block.norm3.beta, kLayerNormEps);
    return BlockResult{out, std::move(self_attn.head_weights), std::move(cross.head_weights)};
}

} // namespace flowbench
