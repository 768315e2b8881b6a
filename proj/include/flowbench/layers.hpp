#pragma once

#include <string>
#include <vector>

#include "flowbench/ops.hpp"
#include "flowbench/rng.hpp"
#include "flowbench/tensor.hpp"

namespace flowbench {

inline constexpr double kLayerNormEps = 1e-5;

struct NamedParam {
    std::string name;
    Tensor value;
};

// Xavier-uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
// The returned tensor requires grad.
Tensor xavier_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct LinearLayer {
    Tensor weight; // [out x in]
    Tensor bias;   // [out]

    std::size_t in_features() const { return weight.dim(1); }
    std::size_t out_features() const { return weight.dim(0); }
    void append_params(const std::string& prefix, std::vector<NamedParam>& out) const;
};

LinearLayer make_linear(std::size_t in, std::size_t out, Rng& rng);

// x [batch x in] -> x.W^T + b
Tensor linear_forward(Tape& tape, const LinearLayer& layer, const Tensor& x);

struct ConvLayer {
    Tensor kernel; // [C_out x C_in x kh x kw]
    Tensor bias;   // [C_out]

    void append_params(const std::string& prefix, std::vector<NamedParam>& out) const;
};

ConvLayer make_conv(std::size_t c_in, std::size_t c_out, std::size_t k, Rng& rng);

struct LayerNormParams {
    Tensor gamma; // ones at init
    Tensor beta;  // zeros at init

    void append_params(const std::string& prefix, std::vector<NamedParam>& out) const;
};

LayerNormParams make_layer_norm(std::size_t d);

// Scaled dot-product attention with `num_heads` heads over projections of a
// shared d_model. No projection biases.
struct MultiHeadAttention {
    std::size_t num_heads = 8;
    std::size_t d_model = 512;
    std::size_t d_head = 64;
    Tensor w_query, w_key, w_value, w_out; // each [d_model x d_model]

    void append_params(const std::string& prefix, std::vector<NamedParam>& out) const;
};

MultiHeadAttention make_mha(std::size_t d_model, std::size_t num_heads, Rng& rng);

struct AttentionResult {
    Tensor output;                    // [Lq x d_model]
    std::vector<Tensor> head_weights; // per head, [Lq x Lk], rows sum to 1
};

// query [Lq x d], key/value [Lk x d] -> softmax(Q.K^T / sqrt(d_head)).V per
// head, heads concatenated and output-projected.
AttentionResult mha_forward(Tape& tape, const MultiHeadAttention& att, const Tensor& query,
                            const Tensor& key, const Tensor& value);

// Sinusoidal table: table[pos, 2i] = sin(pos / 10000^(2i/d)),
// table[pos, 2i+1] = cos(pos / 10000^(2i/d)).
class PositionalEncoding {
public:
    PositionalEncoding(std::size_t max_len, std::size_t d_model);

    std::size_t max_len() const { return max_len_; }
    std::size_t d_model() const { return d_model_; }
    const Tensor& table() const { return table_; }

private:
    std::size_t max_len_;
    std::size_t d_model_;
    Tensor table_;
};

// x [L x d] + table[0..L]
Tensor add_positional(Tape& tape, const PositionalEncoding& pe, const Tensor& x);

// Zeroes each element with probability p during training and scales survivors
// by 1/(1-p); identity in eval mode.
Tensor dropout(Tape& tape, const Tensor& x, double p, bool training, Rng* rng);

struct TransformerBlockConfig {
    std::size_t d_model = 512;
    std::size_t num_heads = 8;
    std::size_t d_ff = 2048;
    double dropout_p = 0.1;
};

// Post-norm blocks with ReLU feed-forward, matching the classic layout:
// residual -> add & norm after each sublayer.
struct EncoderBlock {
    TransformerBlockConfig cfg;
    MultiHeadAttention self_attn;
    LinearLayer ff1, ff2;
    LayerNormParams norm1, norm2;

    void append_params(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct DecoderBlock {
    TransformerBlockConfig cfg;
    MultiHeadAttention self_attn;
    MultiHeadAttention cross_attn;
    LinearLayer ff1, ff2;
    LayerNormParams norm1, norm2, norm3;

    void append_params(const std::string& prefix, std::vector<NamedParam>& out) const;
};

EncoderBlock make_encoder_block(const TransformerBlockConfig& cfg, Rng& rng);
DecoderBlock make_decoder_block(const TransformerBlockConfig& cfg, Rng& rng);

struct BlockResult {
    Tensor output;
    std::vector<Tensor> self_attn_weights;
    std::vector<Tensor> cross_attn_weights; // empty for encoder blocks
};

BlockResult encoder_forward(Tape& tape, const EncoderBlock& block, const Tensor& x,
                            bool training = false, Rng* dropout_rng = nullptr);

BlockResult decoder_forward(Tape& tape, const DecoderBlock& block, const Tensor& x,
                            const Tensor& memory, bool training = false,
                            Rng* dropout_rng = nullptr);

} // namespace flowbench
