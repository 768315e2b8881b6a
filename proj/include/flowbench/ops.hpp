#pragma once

#include <vector>

#include "flowbench/tensor.hpp"

namespace flowbench {

// Differentiable operations. Each op computes its forward result immediately
// and, when the tape is recording, appends a node whose closure applies the
// backward rule during Tape::backward.

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
// [rows x cols] + [cols], broadcast over rows.
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);

Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);

Tensor tanh(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);

// [m x k] . [k x n] -> [m x n]; backward accumulates dA = dC.B^T, dB = A^T.dC.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// [m x k] . [n x k]^T -> [m x n] without materializing the transpose; the
// layout every weight matrix is stored in.
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

// Cross-correlation (no kernel flip) with zero padding:
//   input [N x C_in x H x W], kernel [C_out x C_in x kh x kw], bias [C_out].
// Output height is floor((H + 2*padding - kh) / stride) + 1, same for width.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel,
              const Tensor& bias, int padding, int stride);

struct MaxPool2dResult {
    Tensor output;
    // Flat input index of the selected element per output element, first
    // occurrence in row-major window order on ties.
    std::vector<std::size_t> argmax;
};
MaxPool2dResult maxpool2d(Tape& tape, const Tensor& input, int k, int stride);

// Replicates each pixel into a factor x factor block.
Tensor upsample_nearest(Tape& tape, const Tensor& input, int factor);

// Max-subtracted exponent normalization along `axis`; slices sum to 1.
Tensor softmax(Tape& tape, const Tensor& x, int axis);

// Standardizes over the last axis (population variance, guarded by eps),
// then applies the affine transform gamma * xhat + beta.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps);

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts);
Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);

// Zero-pads or crops the trailing rows/columns of [N x C x H x W] to reach
// [N x C x out_h x out_w].
Tensor pad_crop2d(Tape& tape, const Tensor& input, std::size_t out_h, std::size_t out_w);

} // namespace flowbench
