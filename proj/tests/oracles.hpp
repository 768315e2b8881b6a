// Independent reference implementations used only by tests. These stay
// deliberately naive (direct sums, explicit window scans, central
// differences) so they cannot share a failure mode with the library code.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "flowbench/tensor.hpp"

namespace oracles {

// Central finite difference of a scalar-valued function w.r.t. every entry of
// `x`. `eval` must recompute the full forward pass from current tensor
// contents.
inline std::vector<double> central_difference(flowbench::Tensor& x,
                                              const std::function<double()>& eval,
                                              double h = 1e-5) {
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x.at(i);
        x.at(i) = saved + h;
        const double up = eval();
        x.at(i) = saved - h;
        const double down = eval();
        x.at(i) = saved;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

inline double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / denom;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, rel_err(a[i], b[i]));
    }
    return worst;
}

// Direct-sum cross-correlation over every output position.
inline flowbench::Tensor conv2d_direct(const flowbench::Tensor& in, const flowbench::Tensor& k,
                                       const flowbench::Tensor& bias, int pad, int stride) {
    using flowbench::Shape;
    const std::size_t n_batch = in.dim(0), c_in = in.dim(1), h = in.dim(2), w = in.dim(3);
    const std::size_t c_out = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::size_t out_h =
        (h + 2 * static_cast<std::size_t>(pad) - kh) / static_cast<std::size_t>(stride) + 1;
    const std::size_t out_w =
        (w + 2 * static_cast<std::size_t>(pad) - kw) / static_cast<std::size_t>(stride) + 1;
    flowbench::Tensor out(Shape{n_batch, c_out, out_h, out_w});
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t co = 0; co < c_out; ++co) {
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    double acc = bias.at(co);
                    for (std::size_t ci = 0; ci < c_in; ++ci) {
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const long y = static_cast<long>(oy) * stride +
                                               static_cast<long>(ky) - pad;
                                const long x = static_cast<long>(ox) * stride +
                                               static_cast<long>(kx) - pad;
                                if (y < 0 || x < 0 || y >= static_cast<long>(h) ||
                                    x >= static_cast<long>(w)) {
                                    continue;
                                }
                                acc += in(n, ci, static_cast<std::size_t>(y),
                                          static_cast<std::size_t>(x)) *
                                       k(co, ci, ky, kx);
                            }
                        }
                    }
                    out(n, co, oy, ox) = acc;
                }
            }
        }
    }
    return out;
}

// Exhaustive window scan, maximum per window.
inline flowbench::Tensor maxpool_direct(const flowbench::Tensor& in, int k, int stride) {
    using flowbench::Shape;
    const std::size_t n_batch = in.dim(0), chans = in.dim(1), h = in.dim(2), w = in.dim(3);
    const std::size_t out_h =
        (h - static_cast<std::size_t>(k)) / static_cast<std::size_t>(stride) + 1;
    const std::size_t out_w =
        (w - static_cast<std::size_t>(k)) / static_cast<std::size_t>(stride) + 1;
    flowbench::Tensor out(Shape{n_batch, chans, out_h, out_w});
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t c = 0; c < chans; ++c) {
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    double best = in(n, c, oy * static_cast<std::size_t>(stride),
                                     ox * static_cast<std::size_t>(stride));
                    for (int dy = 0; dy < k; ++dy) {
                        for (int dx = 0; dx < k; ++dx) {
                            best = std::max(
                                best, in(n, c,
                                         oy * static_cast<std::size_t>(stride) +
                                             static_cast<std::size_t>(dy),
                                         ox * static_cast<std::size_t>(stride) +
                                             static_cast<std::size_t>(dx)));
                        }
                    }
                    out(n, c, oy, ox) = best;
                }
            }
        }
    }
    return out;
}

// Naive two-pass MSE: explicit loop over every element.
inline double mse_direct(const flowbench::Tensor& a, const flowbench::Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.at(i) - b.at(i);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

inline double psnr_direct(const flowbench::Tensor& a, const flowbench::Tensor& b, double range) {
    const double mse = mse_direct(a, b);
    return 10.0 * std::log10(range * range / mse);
}

// Explicit loop over every 7x7 window, naive moments.
inline double ssim_direct(const flowbench::Tensor& a, const flowbench::Tensor& b, double range) {
    const std::size_t h = a.dim(0), w = a.dim(1);
    const std::size_t win = 7;
    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t y0 = 0; y0 + win <= h; ++y0) {
        for (std::size_t x0 = 0; x0 + win <= w; ++x0) {
            double mu_a = 0.0, mu_b = 0.0;
            for (std::size_t dy = 0; dy < win; ++dy) {
                for (std::size_t dx = 0; dx < win; ++dx) {
                    mu_a += a.at((y0 + dy) * w + x0 + dx);
                    mu_b += b.at((y0 + dy) * w + x0 + dx);
                }
            }
            mu_a /= 49.0;
            mu_b /= 49.0;
            double var_a = 0.0, var_b = 0.0, cov = 0.0;
            for (std::size_t dy = 0; dy < win; ++dy) {
                for (std::size_t dx = 0; dx < win; ++dx) {
                    const double da = a.at((y0 + dy) * w + x0 + dx) - mu_a;
                    const double db = b.at((y0 + dy) * w + x0 + dx) - mu_b;
                    var_a += da * da;
                    var_b += db * db;
                    cov += da * db;
                }
            }
            var_a /= 49.0;
            var_b /= 49.0;
            cov /= 49.0;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

// Scalar trace of the Adam update rule, for cross-checking the optimizer.
struct AdamTrace {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double m = 0.0, v = 0.0;
    long t = 0;

    double step(double p, double g) {
        ++t;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        const double mhat = m / (1.0 - std::pow(beta1, static_cast<double>(t)));
        const double vhat = v / (1.0 - std::pow(beta2, static_cast<double>(t)));
        return p - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

} // namespace oracles
