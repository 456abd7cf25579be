#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tatt/ops.hpp"

/// Non-differentiable image utilities on [H,W,C] / [B,H,W,C] tensors.
namespace tatt::image {

template <class T>
Tensor<T> clamp01(const Tensor<T>& x) {
    Tensor<T> y = x.detach();
    for (auto& v : y.data()) v = std::clamp(v, T(0), T(1));
    return y;
}

inline double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

template <class T>
void quantize8_inplace(Tensor<T>& x) {
    for (auto& v : x.data()) v = static_cast<T>(quantize8(v));
}

/// Separable Gaussian blur with replicate border; sigma <= 0 is a no-op.
template <class T>
Tensor<T> gaussian_blur(const Tensor<T>& x, double sigma) {
    if (sigma <= 0) return x.detach();
    const std::size_t H = x.dim(x.rank() - 3), W = x.dim(x.rank() - 2), C = x.dim(x.rank() - 1);
    const std::size_t B = x.size() / (H * W * C);
    const long radius = static_cast<long>(std::ceil(3 * sigma));
    std::vector<double> k(2 * radius + 1);
    double s = 0;
    for (long i = -radius; i <= radius; ++i) s += (k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma)));
    for (auto& v : k) v /= s;
    std::vector<double> tmp(x.size());
    Tensor<T> out(x.shape());
    auto idx = [&](std::size_t b, long y, long xx, std::size_t c) {
        y = std::clamp<long>(y, 0, static_cast<long>(H) - 1);
        xx = std::clamp<long>(xx, 0, static_cast<long>(W) - 1);
        return ((b * H + y) * W + xx) * C + c;
    };
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx)
                for (std::size_t c = 0; c < C; ++c) {
                    double acc = 0;
                    for (long i = -radius; i <= radius; ++i) acc += k[i + radius] * x[idx(b, y, static_cast<long>(xx) + i, c)];
                    tmp[idx(b, y, xx, c)] = acc;
                }
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx)
                for (std::size_t c = 0; c < C; ++c) {
                    double acc = 0;
                    for (long i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[idx(b, static_cast<long>(y) + i, xx, c)];
                    out[idx(b, y, xx, c)] = static_cast<T>(acc);
                }
    return out;
}

namespace detail {
inline double cubic_weight(double t, double a = -0.75) {
    t = std::abs(t);
    if (t <= 1) return ((a + 2) * t - (a + 3)) * t * t + 1;
    if (t < 2) return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a;
    return 0;
}
}  // namespace detail

/// Bicubic upsampling by an integer factor (half-pixel centers, replicate border).
template <class T>
Tensor<T> bicubic_upsample(const Tensor<T>& x, std::size_t r) {
    const bool batched = x.rank() == 4;
    const std::size_t H = x.dim(x.rank() - 3), W = x.dim(x.rank() - 2), C = x.dim(x.rank() - 1);
    const std::size_t B = x.size() / (H * W * C), Ho = H * r, Wo = W * r;
    Tensor<T> out(batched ? Shape{B, Ho, Wo, C} : Shape{Ho, Wo, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            const double sy = (oy + 0.5) / r - 0.5;
            const long y0 = static_cast<long>(std::floor(sy));
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                const double sx = (ox + 0.5) / r - 0.5;
                const long x0 = static_cast<long>(std::floor(sx));
                for (std::size_t c = 0; c < C; ++c) {
                    double acc = 0;
                    for (long j = -1; j <= 2; ++j) {
                        const double wy = detail::cubic_weight(sy - (y0 + j));
                        const long yy = std::clamp<long>(y0 + j, 0, static_cast<long>(H) - 1);
                        for (long i = -1; i <= 2; ++i) {
                            const double wx = detail::cubic_weight(sx - (x0 + i));
                            const long xx = std::clamp<long>(x0 + i, 0, static_cast<long>(W) - 1);
                            acc += wy * wx * x[((b * H + yy) * W + xx) * C + c];
                        }
                    }
                    out[((b * Ho + oy) * Wo + ox) * C + c] = static_cast<T>(acc);
                }
            }
        }
    return out;
}

/// Exact 2×2 (r×r) box average.
template <class T>
Tensor<T> box_downsample(const Tensor<T>& x, std::size_t r) {
    NoGradGuard g;
    if (x.rank() == 4) return ops::avg_pool2d(x, r, r);
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    auto y = ops::avg_pool2d(ops::reshape(x, s), r, r);
    return ops::reshape(y, Shape(y.shape().begin() + 1, y.shape().end()));
}

/// Converts between element types (used to move images into the training precision).
template <class To, class From>
Tensor<To> cast(const Tensor<From>& x) {
    Tensor<To> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<To>(x[i]);
    return y;
}

/// Stacks equally shaped tensors along a new leading axis.
template <class T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
    if (items.empty()) throw ContractError("stack: no items");
    Shape s{items.size()};
    s.insert(s.end(), items[0].shape().begin(), items[0].shape().end());
    std::vector<T> data;
    data.reserve(shape_numel(s));
    for (const auto& t : items) {
        if (t.shape() != items[0].shape()) throw dim_error("stack", items[0].shape(), t.shape());
        data.insert(data.end(), t.data().begin(), t.data().end());
    }
    return Tensor<T>(s, std::move(data));
}

/// Slice `i` of a batched tensor, detached.
template <class T>
Tensor<T> unstack(const Tensor<T>& batch, std::size_t i) {
    Shape s(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t n = shape_numel(s);
    return Tensor<T>(s, std::vector<T>(batch.data().begin() + i * n, batch.data().begin() + (i + 1) * n));
}

}  // namespace tatt::image
