#include "flowbench/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace flowbench {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes differ, " +
                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

// out += up . B^T  with up [m x n], B [k x n], out [m x k]
void accum_matmul_nt(std::vector<double>& out, const std::vector<double>& up,
                     const std::vector<double>& b, std::size_t m, std::size_t k,
                     std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            double acc = 0.0;
            const double* up_row = up.data() + i * n;
            const double* b_row = b.data() + j * n;
            for (std::size_t t = 0; t < n; ++t) {
                acc += up_row[t] * b_row[t];
            }
            out[i * k + j] += acc;
        }
    }
}

// out += A^T . up  with A [m x k], up [m x n], out [k x n]
void accum_matmul_tn(std::vector<double>& out, const std::vector<double>& a,
                     const std::vector<double>& up, std::size_t m, std::size_t k,
                     std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = a.data() + i * k;
        const double* up_row = up.data() + i * n;
        for (std::size_t j = 0; j < k; ++j) {
            const double av = a_row[j];
            if (av == 0.0) {
                continue;
            }
            double* out_row = out.data() + j * n;
            for (std::size_t t = 0; t < n; ++t) {
                out_row[t] += av * up_row[t];
            }
        }
    }
}

// out += up . B  with up [m x n], B [n x k], out [m x k]
void accum_matmul_nn(std::vector<double>& out, const std::vector<double>& up,
                     const std::vector<double>& b, std::size_t m, std::size_t n,
                     std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* up_row = up.data() + i * n;
        double* out_row = out.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double uv = up_row[j];
            if (uv == 0.0) {
                continue;
            }
            const double* b_row = b.data() + j * k;
            for (std::size_t t = 0; t < k; ++t) {
                out_row[t] += uv * b_row[t];
            }
        }
    }
}

} // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.at(i) = a.at(i) + b.at(i);
    }
    if (tape.recording()) {
        tape.record(OpKind::Add, {a.ptr(), b.ptr()}, out.ptr(),
                    [ad = a.ptr(), bd = b.ptr(), od = out.ptr()](Tape& t) {
                        const auto& up = *t.flow_grad(od.get());
                        for (TensorData* side : {ad.get(), bd.get()}) {
                            if (!t.wants_grad(side)) {
                                continue;
                            }
                            auto& g = t.flow_accum(side);
                            for (std::size_t i = 0; i < up.size(); ++i) {
                                g[i] += up[i];
                            }
                        }
                    });
    }
    return out;
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
    if (x.ndim() != 2 || bias.ndim() != 1 || bias.dim(0) != x.dim(1)) {
        throw DimensionError("add_bias: expected [rows x cols] + [cols], got " +
                             shape_str(x.shape()) + " + " + shape_str(bias.shape()));
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    Tensor out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out.at(r * cols + c) = x.at(r * cols + c) + bias.at(c);
        }
    }
    if (tape.recording()) {
        tape.record(OpKind::AddBias, {x.ptr(), bias.ptr()}, out.ptr(),
                    [xd = x.ptr(), bd = bias.ptr(), od = out.ptr(), rows, cols](Tape& t) {
                        const auto& up = *t.flow_grad(od.get());
                        if (t.wants_grad(xd.get())) {
                            auto& gx = t.flow_accum(xd.get());
                            for (std::size_t i = 0; i < up.size(); ++i) {
                                gx[i] += up[i];
                            }
                        }
                        if (t.wants_grad(bd.get())) {
                            auto& gb = t.flow_accum(bd.get());
                            for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t c = 0; c < cols; ++c) {
                                    gb[c] += up[r * cols + c];
                                }
                            }
                        }
                    });
    }
    return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.at(i) = a.at(i) - b.at(i);
    }
    if (tape.recording()) {
        tape.record(OpKind::Sub, {a.ptr(), b.ptr()}, out.ptr(),
                    [ad = a.ptr(), bd = b.ptr(), od = out.ptr()](Tape& t) {
                        const auto& up = *t.flow_grad(od.get());
                        if (t.wants_grad(ad.get())) {
                            auto& g = t.flow_accum(ad.get());
                            for (std::size_t i = 0; i < up.size(); ++i) {
                                g[i] += up[i];
                            }
                        }
                        if (t.wants_grad(bd.get())) {
                            auto& g = t.flow_accum(bd.get());
                            for (std::size_t i = 0; i < up.size(); ++i) {
                                g[i] -= up[i];
                            }
                        }
                    });
    }
    return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.at(i) = a.at(i) * b.at(i);
    }
    if (tape.recording()) {
        tape.record(OpKind::Mul, {a.ptr(), b.ptr()}, out.ptr(),
                    [ad = a.ptr(), bd = b.ptr(), od = out.ptr()](Tape& t) {
                        const auto& up = *t.flow_grad(od.get());
                        if (t.wants_grad(ad.get())) {
                            auto& g = t.flow_accum(ad.get());
                            for (std::size_t i = 0; i < up.size(); ++i) {
                                g[i] += up[i] * bd->data[i];
                            }
                        }
                        if (t.wants_grad(bd.get())) {
                            auto& g = t.flow_accum(bd.get());
                            for (std::size_t i = 0; i < up.size(); ++i) {
                                g[i] += up[i] * ad->data[i];
                            }
                        }
                    });
    }
    return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.at(i) = x.at(i) * factor;
    }
    if (tape.recording()) {
        tape.record(OpKind::Scale, {x.ptr()}, out.ptr(),
                    [xd = x.ptr(), od = out.ptr(), factor](Tape& t) {
                        if (!t.wants_grad(xd.get())) {
                            return;
                        }
                        const auto& up = *t.flow_grad(od.get());
                        auto& g = t.flow_accum(xd.get());
                        for (std::size_t i = 0; i < up.size(); ++i) {
                            g[i] += up[i] * factor;
                        }
                    });
    }
    return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        acc += x.at(i);
    }
    Tensor out = Tensor::scalar(acc);
    if (tape.recording()) {
        tape.record(OpKind::Sum, {x.ptr()}, out.ptr(),
                    [xd = x.ptr(), od = out.ptr()](Tape& t) {
                        if (!t.wants_grad(xd.get())) {
                            return;
                        }
                        const double up = (*t.flow_grad(od.get()))[0];
                        auto& g = t.flow_accum(xd.get());
                        for (double& v : g) {
                            v += up;
                        }
                    });
    }
    return out;
}

Tensor mean(Tape& tape, const Tensor& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        acc += x.at(i);
    }
    const double inv_n = 1.0 / static_cast<double>(x.size());
    Tensor out = Tensor::scalar(acc * inv_n);
    if (tape.recording()) {
        tape.record(OpKind::Mean, {x.ptr()}, out.ptr(),
                    [xd = x.ptr(), od = out.ptr(), inv_n](Tape& t) {
                        if (!t.wants_grad(xd.get())) {
                            return;
                        }
                        const double up = (*t.flow_grad(od.get()))[0] * inv_n;
                        auto& g = t.flow_accum(xd.get());
                        for (double& v : g) {
                            v += up;
                        }
                    });
    }
    return out;
}

Tensor tanh(Tape& tape, const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.at(i) = std::tanh(x.at(i));
    }
    if (tape.recording()) {
        tape.record(OpKind::Tanh, {x.ptr()}, out.ptr(),
                    [xd = x.ptr(), od = out.ptr()](Tape& t) {
                        if (!t.wants_grad(xd.get())) {
                            return;
                        }
                        const auto& up = *t.flow_grad(od.get());
                        auto& g = t.flow_accum(xd.get());
                        for (std::size_t i = 0; i < up.size(); ++i) {
                            const double y = od->data[i];
                            g[i] += up[i] * (1.0 - y * y);
                        }
                    });
    }
    return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.at(i) = x.at(i) > 0.0 ? x.at(i) : 0.0;
    }
    if (tape.recording()) {
        tape.record(OpKind::Relu, {x.ptr()}, out.ptr(),
                    [xd = x.ptr(), od = out.ptr()](Tape& t) {
                        if (!t.wants_grad(xd.get())) {
                            return;
                        }
                        const auto& up = *t.flow_grad(od.get());
                        auto& g = t.flow_accum(xd.get());
                        for (std::size_t i = 0; i < up.size(); ++i) {
                            if (xd->data[i] > 0.0) {
                                g[i] += up[i];
                            }
                        }
                    });
    }
    return out;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = a.data() + i * k;
        double* out_row = out.data() + i * n;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = a_row[t];
            if (av == 0.0) {
                continue;
            }
            const double* b_row = b.data() + t * n;
            for (std::size_t j = 0; j < n; ++j) {
                out_row[j] += av * b_row[j];
            }
        }
    }
    if (tape.recording()) {
        tape.record(OpKind::Matmul, {a.ptr(), b.ptr()}, out.ptr(),
                    [ad = a.ptr(), bd = b.ptr(), od = out.ptr(), m, k, n](Tape& t) {
                        const auto& up = *t.flow_grad(od.get());
                        if (t.wants_grad(ad.get())) {
                            accum_matmul_nt(t.flow_accum(ad.get()), up, bd->data, m, k, n);
                        }
                        if (t.wants_grad(bd.get())) {
                            accum_matmul_tn(t.flow_accum(bd.get()), ad->data, up, m, k, n);
                        }
                    });
    }
    return out;
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
        throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()) + " (inner dims must agree)");
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = a.data() + i * k;
        double* out_row = out.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* b_row = b.data() + j * k;
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) {
                acc += a_row[t] * b_row[t];
            }
            out_row[j] = acc;
        }
    }
    if (tape.recording()) {
        tape.record(OpKind::MatmulNT, {a.ptr(), b.ptr()}, out.ptr(),
                    [ad = a.ptr(), bd = b.ptr(), od = out.ptr(), m, k, n](Tape& t) {
                        const auto& up = *t.flow_grad(od.get());
                        if (t.wants_grad(ad.get())) {
                            // dA = dC . B
                            accum_matmul_nn(t.flow_accum(ad.get()), up, bd->data, m, n, k);
                        }
                        if (t.wants_grad(bd.get())) {
                            // dB = dC^T . A
                            auto& gb = t.flow_accum(bd.get());
                            for (std::size_t i = 0; i < m; ++i) {
                                const double* up_row = up.data() + i * n;
                                const double* a_row = ad->data.data() + i * k;
                                for (std::size_t j = 0; j < n; ++j) {
                                    const double uv = up_row[j];
                                    if (uv == 0.0) {
                                        continue;
                                    }
                                    double* gb_row = gb.data() + j * k;
                                    for (std::size_t t2 = 0; t2 < k; ++t2) {
                                        gb_row[t2] += uv * a_row[t2];
                                    }
                                }
                            }
                        }
                    });
    }
    return out;
}

Tensor transpose(Tape& tape, const Tensor& x) {
    if (x.ndim() != 2) {
        throw DimensionError("transpose: expected a matrix, got " + shape_str(x.shape()));
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    Tensor out(Shape{cols, rows});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out.at(c * rows + r) = x.at(r * cols + c);
        }
    }
    if (tape.recording()) {
        tape.record(OpKind::Transpose, {x.ptr()}, out.ptr(),
                    [xd = x.ptr(), od = out.ptr(), rows, cols](Tape& t) {
                        if (!t.wants_grad(xd.get())) {
                            return;
                        }
                        const auto& up = *t.flow_grad(od.get());
                        auto& g = t.flow_accum(xd.get());
                        for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c = 0; c < cols; ++c) {
                                g[r * cols + c] += up[c * rows + r];
                            }
                        }
                    });
    }
    return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    Tensor out(std::move(shape), std::vector<double>(x.data(), x.data() + x.size()));
    if (tape.recording()) {
        tape.record(OpKind::Reshape, {x.ptr()}, out.ptr(),
                    [xd = x.ptr(), od = out.ptr()](Tape& t) {
                        if (!t.wants_grad(xd.get())) {
                            return;
                        }
                        const auto& up = *t.flow_grad(od.get());
                        auto& g = t.flow_accum(xd.get());
                        for (std::size_t i = 0; i < up.size(); ++i) {
                            g[i] += up[i];
                        }
                    });
    }
    return out;
}

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel,
              const Tensor& bias, int padding, int stride) {
    if (input.ndim() != 4 || kernel.ndim() != 4) {
        throw DimensionError("conv2d: expected NCHW input and OIHW kernel, got " +
                             shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
    }
    if (padding < 0 || stride < 1) {
        throw ParameterError("conv2d: padding must be >= 0 and stride >= 1");
    }
    const std::size_t batch = input.dim(0), c_in = input.dim(1);
    const std::size_t in_h = input.dim(2), in_w = input.dim(3);
    const std::size_t c_out = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != c_in) {
        throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                             " input channels, input has " + std::to_string(c_in));
    }
    if (bias.ndim() != 1 || bias.dim(0) != c_out) {
        throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) +
                             " does not match " + std::to_string(c_out) + " output channels");
    }
    const std::size_t pad = static_cast<std::size_t>(padding);
    if (kh > in_h + 2 * pad || kw > in_w + 2 * pad) {
        throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                             " larger than padded input " + shape_str(input.shape()));
    }
    const std::size_t s = static_cast<std::size_t>(stride);
    const std::size_t out_h = (in_h + 2 * pad - kh) / s + 1;
    const std::size_t out_w = (in_w + 2 * pad - kw) / s + 1;

    Tensor out(Shape{batch, c_out, out_h, out_w});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t co = 0; co < c_out; ++co) {
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    double acc = bias.at(co);
                    for (std::size_t ci = 0; ci < c_in; ++ci) {
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            const long y = static_cast<long>(oy * s + ky) - static_cast<long>(pad);
                            if (y < 0 || y >= static_cast<long>(in_h)) {
                                continue;
                            }
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const long x = static_cast<long>(ox * s + kx) - static_cast<long>(pad);
                                if (x < 0 || x >= static_cast<long>(in_w)) {
                                    continue;
                                }
                                acc += input(n, ci, static_cast<std::size_t>(y),
                                             static_cast<std::size_t>(x)) *
                                       kernel(co, ci, ky, kx);
                            }
                        }
                    }
                    out(n, co, oy, ox) = acc;
                }
            }
        }
    }

    if (tape.recording()) {
        tape.record(
            OpKind::Conv2d, {input.ptr(), kernel.ptr(), bias.ptr()}, out.ptr(),
            [in = input.ptr(), kn = kernel.ptr(), bs = bias.ptr(), od = out.ptr(), batch,
             c_in, in_h, in_w, c_out, kh, kw, pad, s, out_h, out_w](Tape& t) {
                const auto& up = *t.flow_grad(od.get());
                const bool want_in = t.wants_grad(in.get());
                const bool want_kn = t.wants_grad(kn.get());
                const bool want_bs = t.wants_grad(bs.get());
                std::vector<double>* gin = want_in ? &t.flow_accum(in.get()) : nullptr;
                std::vector<double>* gkn = want_kn ? &t.flow_accum(kn.get()) : nullptr;
                std::vector<double>* gbs = want_bs ? &t.flow_accum(bs.get()) : nullptr;
                if (!gin && !gkn && !gbs) {
                    return;
                }
                auto in_idx = [&](std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
                    return ((n * c_in + c) * in_h + y) * in_w + x;
                };
                auto kn_idx = [&](std::size_t co, std::size_t ci, std::size_t ky, std::size_t kx) {
                    return ((co * c_in + ci) * kh + ky) * kw + kx;
                };
                for (std::size_t n = 0; n < batch; ++n) {
                    for (std::size_t co = 0; co < c_out; ++co) {
                        for (std::size_t oy = 0; oy < out_h; ++oy) {
                            for (std::size_t ox = 0; ox < out_w; ++ox) {
                                const double g = up[((n * c_out + co) * out_h + oy) * out_w + ox];
                                if (g == 0.0) {
                                    continue;
                                }
                                if (gbs) {
                                    (*gbs)[co] += g;
                                }
                                if (!gin && !gkn) {
                                    continue;
                                }
                                for (std::size_t ci = 0; ci < c_in; ++ci) {
                                    for (std::size_t ky = 0; ky < kh; ++ky) {
                                        const long y = static_cast<long>(oy * s + ky) -
                                                       static_cast<long>(pad);
                                        if (y < 0 || y >= static_cast<long>(in_h)) {
                                            continue;
                                        }
                                        for (std::size_t kx = 0; kx < kw; ++kx) {
                                            const long x = static_cast<long>(ox * s + kx) -
                                                           static_cast<long>(pad);
                                            if (x < 0 || x >= static_cast<long>(in_w)) {
                                                continue;
                                            }
                                            const std::size_t ii = in_idx(
                                                n, ci, static_cast<std::size_t>(y),
                                                static_cast<std::size_t>(x));
                                            const std::size_t ki = kn_idx(co, ci, ky, kx);
                                            if (gin) {
                                                (*gin)[ii] += g * kn->data[ki];
                                            }
                                            if (gkn) {
                                                (*gkn)[ki] += g * in->data[ii];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
    }
    return out;
}

MaxPool2dResult maxpool2d(Tape& tape, const Tensor& input, int k, int stride) {
    if (input.ndim() != 4) {
        throw DimensionError("maxpool2d: expected NCHW input, got " + shape_str(input.shape()));
    }
    if (k < 1 || stride < 1) {
        throw ParameterError("maxpool2d: window and stride must be >= 1");
    }
    const std::size_t batch = input.dim(0), chans = input.dim(1);
    const std::size_t in_h = input.dim(2), in_w = input.dim(3);
    const std::size_t win = static_cast<std::size_t>(k);
    const std::size_t s = static_cast<std::size_t>(stride);
    if (win > in_h || win > in_w) {
        throw DimensionError("maxpool2d: window " + std::to_string(k) + " exceeds input " +
                             shape_str(input.shape()));
    }
    const std::size_t out_h = (in_h - win) / s + 1;
    const std::size_t out_w = (in_w - win) / s + 1;

    Tensor out(Shape{batch, chans, out_h, out_w});
    std::vector<std::size_t> argmax(out.size());
    std::size_t oi = 0;
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < chans; ++c) {
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                for (std::size_t ox = 0; ox < out_w; ++ox, ++oi) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t wy = 0; wy < win; ++wy) {
                        for (std::size_t wx = 0; wx < win; ++wx) {
                            const std::size_t y = oy * s + wy;
                            const std::size_t x = ox * s + wx;
                            const std::size_t idx = ((n * chans + c) * in_h + y) * in_w + x;
                            const double v = input.at(idx);
                            if (v > best) { // strict: first occurrence wins ties
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    out.at(oi) = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }

    if (tape.recording()) {
        tape.record(OpKind::MaxPool2d, {input.ptr()}, out.ptr(),
                    [in = input.ptr(), od = out.ptr(), argmax](Tape& t) {
                        if (!t.wants_grad(in.get())) {
                            return;
                        }
                        const auto& up = *t.flow_grad(od.get());
                        auto& g = t.flow_accum(in.get());
                        for (std::size_t i = 0; i < up.size(); ++i) {
                            g[argmax[i]] += up[i];
                        }
                    });
    }
    return MaxPool2dResult{out, std::move(argmax)};
}

Tensor upsample_nearest(Tape& tape, const Tensor& input, int factor) {
    if (input.ndim() != 4) {
        throw DimensionError("upsample_nearest: expected NCHW input, got " +
                             shape_str(input.shape()));
    }
    if (factor < 1) {
        throw ParameterError("upsample_nearest: factor must be >= 1, got " +
                             std::to_string(factor));
    }
    const std::size_t f = static_cast<std::size_t>(factor);
    const std::size_t batch = input.dim(0), chans = input.dim(1);
    const std::size_t in_h = input.dim(2), in_w = input.dim(3);
    Tensor out(Shape{batch, chans, in_h * f, in_w * f});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < chans; ++c) {
            for (std::size_t y = 0; y < in_h * f; ++y) {
                for (std::size_t x = 0; x < in_w * f; ++x) {
                    out(n, c, y, x) = input(n, c, y / f, x / f);
                }
            }
        }
    }
    if (tape.recording()) {
        tape.record(OpKind::UpsampleNearest, {input.ptr()}, out.ptr(),
                    [in = input.ptr(), od = out.ptr(), batch, chans, in_h, in_w, f](Tape& t) {
                        if (!t.wants_grad(in.get())) {
                            return;
                        }
                        const auto& up = *t.flow_grad(od.get());
                        auto& g = t.flow_accum(in.get());
                        const std::size_t out_h = in_h * f, out_w = in_w * f;
                        for (std::size_t n = 0; n < batch; ++n) {
                            for (std::size_t c = 0; c < chans; ++c) {
                                for (std::size_t y = 0; y < out_h; ++y) {
                                    for (std::size_t x = 0; x < out_w; ++x) {
                                        g[((n * chans + c) * in_h + y / f) * in_w + x / f] +=
                                            up[((n * chans + c) * out_h + y) * out_w + x];
                                    }
                                }
                            }
                        }
                    });
    }
    return out;
}

Tensor softmax(Tape& tape, const Tensor& x, int axis) {
    if (axis < 0 || static_cast<std::size_t>(axis) >= x.ndim()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) +
                             " invalid for shape " + shape_str(x.shape()));
    }
    const std::size_t ax = static_cast<std::size_t>(axis);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) {
        outer *= x.dim(i);
    }
    for (std::size_t i = ax + 1; i < x.ndim(); ++i) {
        inner *= x.dim(i);
    }
    const std::size_t len = x.dim(ax);

    Tensor out(x.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            double mx = x.at(base);
            for (std::size_t j = 1; j < len; ++j) {
                mx = std::max(mx, x.at(base + j * inner));
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                const double e = std::exp(x.at(base + j * inner) - mx);
                out.at(base + j * inner) = e;
                denom += e;
            }
            for (std::size_t j = 0; j < len; ++j) {
                out.at(base + j * inner) /= denom;
            }
        }
    }

    if (tape.recording()) {
        tape.record(OpKind::Softmax, {x.ptr()}, out.ptr(),
                    [xd = x.ptr(), od = out.ptr(), outer, inner, len](Tape& t) {
                        if (!t.wants_grad(xd.get())) {
                            return;
                        }
                        const auto& up = *t.flow_grad(od.get());
                        auto& g = t.flow_accum(xd.get());
                        for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t i = 0; i < inner; ++i) {
                                const std::size_t base = o * len * inner + i;
                                double dot = 0.0;
                                for (std::size_t j = 0; j < len; ++j) {
                                    const std::size_t idx = base + j * inner;
                                    dot += up[idx] * od->data[idx];
                                }
                                for (std::size_t j = 0; j < len; ++j) {
                                    const std::size_t idx = base + j * inner;
                                    g[idx] += od->data[idx] * (up[idx] - dot);
                                }
                            }
                        }
                    });
    }
    return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps) {
    const std::size_t d = x.dim(x.ndim() - 1);
    if (gamma.ndim() != 1 || beta.ndim() != 1 || gamma.dim(0) != d || beta.dim(0) != d) {
        throw DimensionError("layer_norm: gamma/beta must be [" + std::to_string(d) +
                             "], got " + shape_str(gamma.shape()) + " and " +
                             shape_str(beta.shape()));
    }
    const std::size_t rows = x.size() / d;

    Tensor out(x.shape());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            mu += row[j];
        }
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[r] = istd;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mu) * istd;
            xhat[r * d + j] = h;
            out.at(r * d + j) = gamma.at(j) * h + beta.at(j);
        }
    }

    if (tape.recording()) {
        tape.record(
            OpKind::LayerNorm, {x.ptr(), gamma.ptr(), beta.ptr()}, out.ptr(),
            [xd = x.ptr(), gd = gamma.ptr(), bd = beta.ptr(), od = out.ptr(), rows, d,
             xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t) {
                const auto& up = *t.flow_grad(od.get());
                if (t.wants_grad(bd.get())) {
                    auto& gb = t.flow_accum(bd.get());
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < d; ++j) {
                            gb[j] += up[r * d + j];
                        }
                    }
                }
                if (t.wants_grad(gd.get())) {
                    auto& gg = t.flow_accum(gd.get());
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < d; ++j) {
                            gg[j] += up[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if (t.wants_grad(xd.get())) {
                    auto& gx = t.flow_accum(xd.get());
                    for (std::size_t r = 0; r < rows; ++r) {
                        double mean_dh = 0.0, mean_dh_h = 0.0;
                        for (std::size_t j = 0; j < d; ++j) {
                            const double dh = up[r * d + j] * gd->data[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[r * d + j];
                        }
                        mean_dh /= static_cast<double>(d);
                        mean_dh_h /= static_cast<double>(d);
                        for (std::size_t j = 0; j < d; ++j) {
                            const double dh = up[r * d + j] * gd->data[j];
                            gx[r * d + j] +=
                                inv_std[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                        }
                    }
                }
            });
    }
    return out;
}

namespace {

Tensor slice2d(Tape& tape, const Tensor& x, std::size_t start, std::size_t count,
               bool rows, OpKind kind, const char* op) {
    if (x.ndim() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " +
                             shape_str(x.shape()));
    }
    const std::size_t limit = rows ? x.dim(0) : x.dim(1);
    if (count == 0 || start + count > limit) {
        throw DimensionError(std::string(op) + ": range [" + std::to_string(start) + ", " +
                             std::to_string(start + count) + ") out of bounds for " +
                             shape_str(x.shape()));
    }
    const std::size_t n_rows = x.dim(0), n_cols = x.dim(1);
    const std::size_t out_rows = rows ? count : n_rows;
    const std::size_t out_cols = rows ? n_cols : count;
    Tensor out(Shape{out_rows, out_cols});
    for (std::size_t r = 0; r < out_rows; ++r) {
        for (std::size_t c = 0; c < out_cols; ++c) {
            const std::size_t sr = rows ? start + r : r;
            const std::size_t sc = rows ? c : start + c;
            out.at(r * out_cols + c) = x.at(sr * n_cols + sc);
        }
    }
    if (tape.recording()) {
        tape.record(kind, {x.ptr()}, out.ptr(),
                    [xd = x.ptr(), od = out.ptr(), start, rows, n_cols, out_rows,
                     out_cols](Tape& t) {
                        if (!t.wants_grad(xd.get())) {
                            return;
                        }
                        const auto& up = *t.flow_grad(od.get());
                        auto& g = t.flow_accum(xd.get());
                        for (std::size_t r = 0; r < out_rows; ++r) {
                            for (std::size_t c = 0; c < out_cols; ++c) {
                                const std::size_t sr = rows ? start + r : r;
                                const std::size_t sc = rows ? c : start + c;
                                g[sr * n_cols + sc] += up[r * out_cols + c];
                            }
                        }
                    });
    }
    return out;
}

Tensor concat2d(Tape& tape, const std::vector<Tensor>& parts, bool rows, OpKind kind,
                const char* op) {
    if (parts.empty()) {
        throw DimensionError(std::string(op) + ": nothing to concatenate");
    }
    const std::size_t fixed = rows ? parts.front().dim(1) : parts.front().dim(0);
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != 2 || (rows ? p.dim(1) : p.dim(0)) != fixed) {
            throw DimensionError(std::string(op) + ": incompatible part shape " +
                                 shape_str(p.shape()));
        }
        total += rows ? p.dim(0) : p.dim(1);
    }
    const std::size_t out_rows = rows ? total : fixed;
    const std::size_t out_cols = rows ? fixed : total;
    Tensor out(Shape{out_rows, out_cols});
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t pr = p.dim(0), pc = p.dim(1);
        for (std::size_t r = 0; r < pr; ++r) {
            for (std::size_t c = 0; c < pc; ++c) {
                const std::size_t dr = rows ? offset + r : r;
                const std::size_t dc = rows ? c : offset + c;
                out.at(dr * out_cols + dc) = p.at(r * pc + c);
            }
        }
        inputs.push_back(p.ptr());
        offsets.push_back(offset);
        offset += rows ? pr : pc;
    }
    if (tape.recording()) {
        tape.record(kind, inputs, out.ptr(),
                    [inputs, offsets, od = out.ptr(), rows, out_cols](Tape& t) {
                        const auto& up = *t.flow_grad(od.get());
                        for (std::size_t p = 0; p < inputs.size(); ++p) {
                            TensorData* part = inputs[p].get();
                            if (!t.wants_grad(part)) {
                                continue;
                            }
                            auto& g = t.flow_accum(part);
                            const std::size_t pr = part->shape[0], pc = part->shape[1];
                            for (std::size_t r = 0; r < pr; ++r) {
                                for (std::size_t c = 0; c < pc; ++c) {
                                    const std::size_t sr = rows ? offsets[p] + r : r;
                                    const std::size_t sc = rows ? c : offsets[p] + c;
                                    g[r * pc + c] += up[sr * out_cols + sc];
                                }
                            }
                        }
                    });
    }
    return out;
}

} // namespace

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t start, std::size_t count) {
    return slice2d(tape, x, start, count, true, OpKind::SliceRows, "slice_rows");
}

Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t start, std::size_t count) {
    return slice2d(tape, x, start, count, false, OpKind::SliceCols, "slice_cols");
}

Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
    return concat2d(tape, parts, true, OpKind::ConcatRows, "concat_rows");
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
    return concat2d(tape, parts, false, OpKind::ConcatCols, "concat_cols");
}

Tensor pad_crop2d(Tape& tape, const Tensor& input, std::size_t out_h, std::size_t out_w) {
    if (input.ndim() != 4) {
        throw DimensionError("pad_crop2d: expected NCHW input, got " + shape_str(input.shape()));
    }
    if (out_h == 0 || out_w == 0) {
        throw ParameterError("pad_crop2d: target size must be positive");
    }
    const std::size_t batch = input.dim(0), chans = input.dim(1);
    const std::size_t in_h = input.dim(2), in_w = input.dim(3);
    const std::size_t copy_h = std::min(in_h, out_h), copy_w = std::min(in_w, out_w);
    Tensor out(Shape{batch, chans, out_h, out_w});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < chans; ++c) {
            for (std::size_t y = 0; y < copy_h; ++y) {
                for (std::size_t x = 0; x < copy_w; ++x) {
                    out(n, c, y, x) = input(n, c, y, x);
                }
            }
        }
    }
    if (tape.recording()) {
        tape.record(OpKind::PadCrop2d, {input.ptr()}, out.ptr(),
                    [in = input.ptr(), od = out.ptr(), batch, chans, in_h, in_w, out_h,
                     out_w, copy_h, copy_w](Tape& t) {
                        if (!t.wants_grad(in.get())) {
                            return;
                        }
                        const auto& up = *t.flow_grad(od.get());
                        auto& g = t.flow_accum(in.get());
                        for (std::size_t n = 0; n < batch; ++n) {
                            for (std::size_t c = 0; c < chans; ++c) {
                                for (std::size_t y = 0; y < copy_h; ++y) {
                                    for (std::size_t x = 0; x < copy_w; ++x) {
                                        g[((n * chans + c) * in_h + y) * in_w + x] +=
                                            up[((n * chans + c) * out_h + y) * out_w + x];
                                    }
                                }
                            }
                        }
                    });
    }
    return out;
}

} // namespace flowbench
