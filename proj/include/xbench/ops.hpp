#pragma once

// Layer kernels: forward, input-gradient (transpose) and parameter-gradient for every layer kind.
// The linear kernels take the weights as an explicit span so LRP rules can run them with modified
// weights. Sums accumulate in double and are stored as float.

#include <cstddef>
#include <span>
#include <vector>

#include "xbench/model.hpp"
#include "xbench/tensor.hpp"

namespace xbench::ops {

struct ConvGeometry {
    std::size_t in_c, in_h, in_w;
    std::size_t out_c, out_h, out_w;
    std::size_t kh, kw, stride, pad;

    ConvGeometry(const Conv2D& conv, const Shape& in)
        : in_c(in[0]), in_h(in[1]), in_w(in[2]), out_c(conv.out_channels),
          out_h((in[1] + 2 * conv.padding - conv.kernel_h) / conv.stride + 1),
          out_w((in[2] + 2 * conv.padding - conv.kernel_w) / conv.stride + 1), kh(conv.kernel_h),
          kw(conv.kernel_w), stride(conv.stride), pad(conv.padding) {}

    Shape out_shape() const { return {out_c, out_h, out_w}; }

    // Input coordinate touched by output (oy, ox) at kernel tap (ky, kx); false when it lands in padding.
    bool source(std::size_t oy, std::size_t ox, std::size_t ky, std::size_t kx, std::size_t& iy,
                std::size_t& ix) const {
        const auto y = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
        const auto x = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
        if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(in_h) ||
            x >= static_cast<std::ptrdiff_t>(in_w))
            return false;
        iy = static_cast<std::size_t>(y);
        ix = static_cast<std::size_t>(x);
        return true;
    }
};

/// out = conv(in, weights) + bias. An empty bias span means no bias.
inline Tensor conv_forward(const ConvGeometry& g, const Tensor& in, std::span<const float> weights,
                           std::span<const float> bias) {
    Tensor out(g.out_shape());
    const float* x = in.values().data();
    for (std::size_t o = 0; o < g.out_c; ++o) {
        const float* wo = weights.data() + o * g.in_c * g.kh * g.kw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                double acc = bias.empty() ? 0.0 : bias[o];
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        std::size_t iy, ix;
                        if (!g.source(oy, ox, ky, kx, iy, ix)) continue;
                        for (std::size_t i = 0; i < g.in_c; ++i)
                            acc += static_cast<double>(wo[(i * g.kh + ky) * g.kw + kx]) *
                                   x[(i * g.in_h + iy) * g.in_w + ix];
                    }
                }
                out.at(o, oy, ox) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

/// grad_in = conv^T(grad_out, weights).
inline Tensor conv_backward_input(const ConvGeometry& g, const Tensor& grad_out,
                                  std::span<const float> weights) {
    std::vector<double> acc(g.in_c * g.in_h * g.in_w, 0.0);
    for (std::size_t o = 0; o < g.out_c; ++o) {
        const float* wo = weights.data() + o * g.in_c * g.kh * g.kw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const double go = grad_out.at(o, oy, ox);
                if (go == 0.0) continue;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        std::size_t iy, ix;
                        if (!g.source(oy, ox, ky, kx, iy, ix)) continue;
                        for (std::size_t i = 0; i < g.in_c; ++i)
                            acc[(i * g.in_h + iy) * g.in_w + ix] +=
                                go * wo[(i * g.kh + ky) * g.kw + kx];
                    }
                }
            }
        }
    }
    Tensor grad_in({g.in_c, g.in_h, g.in_w});
    for (std::size_t k = 0; k < acc.size(); ++k) grad_in[k] = static_cast<float>(acc[k]);
    return grad_in;
}

/// Accumulates dL/dW and dL/db into the given double buffers.
inline void conv_backward_params(const ConvGeometry& g, const Tensor& in, const Tensor& grad_out,
                                 std::span<double> grad_w, std::span<double> grad_b) {
    for (std::size_t o = 0; o < g.out_c; ++o) {
        double* gw = grad_w.data() + o * g.in_c * g.kh * g.kw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const double go = grad_out.at(o, oy, ox);
                if (go == 0.0) continue;
                grad_b[o] += go;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        std::size_t iy, ix;
                        if (!g.source(oy, ox, ky, kx, iy, ix)) continue;
                        for (std::size_t i = 0; i < g.in_c; ++i)
                            gw[(i * g.kh + ky) * g.kw + kx] += go * in.at(i, iy, ix);
                    }
                }
            }
        }
    }
}

inline Tensor dense_forward(const Dense& d, const Tensor& in, std::span<const float> weights,
                            std::span<const float> bias) {
    Tensor out({d.out_features});
    const float* x = in.values().data();
    for (std::size_t o = 0; o < d.out_features; ++o) {
        const float* wo = weights.data() + o * d.in_features;
        double acc = bias.empty() ? 0.0 : bias[o];
        for (std::size_t i = 0; i < d.in_features; ++i) acc += static_cast<double>(wo[i]) * x[i];
        out[o] = static_cast<float>(acc);
    }
    return out;
}

/// Gradient w.r.t. the input, reshaped to `in_shape`.
inline Tensor dense_backward_input(const Dense& d, const Tensor& grad_out,
                                   std::span<const float> weights, const Shape& in_shape) {
    std::vector<double> acc(d.in_features, 0.0);
    for (std::size_t o = 0; o < d.out_features; ++o) {
        const double go = grad_out[o];
        if (go == 0.0) continue;
        const float* wo = weights.data() + o * d.in_features;
        for (std::size_t i = 0; i < d.in_features; ++i) acc[i] += go * wo[i];
    }
    Tensor grad_in(in_shape);
    for (std::size_t i = 0; i < acc.size(); ++i) grad_in[i] = static_cast<float>(acc[i]);
    return grad_in;
}

inline void dense_backward_params(const Dense& d, const Tensor& in, const Tensor& grad_out,
                                  std::span<double> grad_w, std::span<double> grad_b) {
    for (std::size_t o = 0; o < d.out_features; ++o) {
        const double go = grad_out[o];
        grad_b[o] += go;
        if (go == 0.0) continue;
        double* gw = grad_w.data() + o * d.in_features;
        for (std::size_t i = 0; i < d.in_features; ++i) gw[i] += go * in[i];
    }
}

inline Tensor relu_forward(const Tensor& in) {
    Tensor out = in;
    for (auto& v : out.values())
        if (!(v > 0.0f)) v = 0.0f;
    return out;
}

/// Flat index of the max element of each pooling window; ties go to the first in row-major order.
inline std::vector<std::size_t> maxpool_argmax(const Tensor& in, std::size_t window, std::size_t stride,
                                               const Shape& out_shape) {
    const std::size_t h = in.dim(1), w = in.dim(2);
    std::vector<std::size_t> arg(shape_size(out_shape));
    std::size_t k = 0;
    for (std::size_t c = 0; c < out_shape[0]; ++c)
        for (std::size_t oy = 0; oy < out_shape[1]; ++oy)
            for (std::size_t ox = 0; ox < out_shape[2]; ++ox, ++k) {
                std::size_t best = (c * h + oy * stride) * w + ox * stride;
                for (std::size_t wy = 0; wy < window; ++wy)
                    for (std::size_t wx = 0; wx < window; ++wx) {
                        const std::size_t idx = (c * h + oy * stride + wy) * w + ox * stride + wx;
                        if (in[idx] > in[best]) best = idx;
                    }
                arg[k] = best;
            }
    return arg;
}

inline Tensor maxpool_forward(const MaxPool2D& p, const Tensor& in, const Shape& out_shape) {
    const auto arg = maxpool_argmax(in, p.window, p.stride, out_shape);
    Tensor out(out_shape);
    for (std::size_t k = 0; k < arg.size(); ++k) out[k] = in[arg[k]];
    return out;
}

/// Routes each output entry to its window's arg-max input.
inline Tensor maxpool_backward(const MaxPool2D& p, const Tensor& in, const Tensor& grad_out) {
    const auto arg = maxpool_argmax(in, p.window, p.stride, grad_out.shape());
    std::vector<double> acc(in.size(), 0.0);
    for (std::size_t k = 0; k < arg.size(); ++k) acc[arg[k]] += grad_out[k];
    Tensor grad_in(in.shape());
    for (std::size_t i = 0; i < acc.size(); ++i) grad_in[i] = static_cast<float>(acc[i]);
    return grad_in;
}

inline Tensor avgpool_forward(const AvgPool2D& p, const Tensor& in, const Shape& out_shape) {
    const std::size_t h = in.dim(1), w = in.dim(2);
    const double norm = 1.0 / static_cast<double>(p.window * p.window);
    Tensor out(out_shape);
    for (std::size_t c = 0; c < out_shape[0]; ++c)
        for (std::size_t oy = 0; oy < out_shape[1]; ++oy)
            for (std::size_t ox = 0; ox < out_shape[2]; ++ox) {
                double acc = 0.0;
                for (std::size_t wy = 0; wy < p.window; ++wy)
                    for (std::size_t wx = 0; wx < p.window; ++wx)
                        acc += in[(c * h + oy * p.stride + wy) * w + ox * p.stride + wx];
                out.at(c, oy, ox) = static_cast<float>(acc * norm);
            }
    return out;
}

/// Spreads each output entry uniformly over its window with weight 1/window^2. Serves as both the
/// gradient and the uniform relevance redistribution.
inline Tensor avgpool_backward(const AvgPool2D& p, const Shape& in_shape, const Tensor& grad_out) {
    const std::size_t h = in_shape[1], w = in_shape[2];
    const double norm = 1.0 / static_cast<double>(p.window * p.window);
    std::vector<double> acc(shape_size(in_shape), 0.0);
    for (std::size_t c = 0; c < grad_out.dim(0); ++c)
        for (std::size_t oy = 0; oy < grad_out.dim(1); ++oy)
            for (std::size_t ox = 0; ox < grad_out.dim(2); ++ox) {
                const double go = grad_out.at(c, oy, ox) * norm;
                for (std::size_t wy = 0; wy < p.window; ++wy)
                    for (std::size_t wx = 0; wx < p.window; ++wx)
                        acc[(c * h + oy * p.stride + wy) * w + ox * p.stride + wx] += go;
            }
    Tensor grad_in(in_shape);
    for (std::size_t i = 0; i < acc.size(); ++i) grad_in[i] = static_cast<float>(acc[i]);
    return grad_in;
}

inline Tensor global_avgpool_forward(const Tensor& in) {
    const std::size_t c_n = in.dim(0), plane = in.dim(1) * in.dim(2);
    Tensor out({c_n});
    for (std::size_t c = 0; c < c_n; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < plane; ++k) acc += in[c * plane + k];
        out[c] = static_cast<float>(acc / static_cast<double>(plane));
    }
    return out;
}

inline Tensor global_avgpool_backward(const Shape& in_shape, const Tensor& grad_out) {
    const std::size_t plane = in_shape[1] * in_shape[2];
    Tensor grad_in(in_shape);
    for (std::size_t c = 0; c < in_shape[0]; ++c) {
        const auto g = static_cast<float>(grad_out[c] / static_cast<double>(plane));
        for (std::size_t k = 0; k < plane; ++k) grad_in[c * plane + k] = g;
    }
    return grad_in;
}

} // namespace xbench::ops
