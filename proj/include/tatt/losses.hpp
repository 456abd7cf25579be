#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>

#include "tatt/interpreter.hpp"
#include "tatt/warp.hpp"

namespace tatt {

struct LossWeights {
    double alpha = 1.0;
    double beta = 0.1;
};

/// C1 = (K1·L)², C2 = (K2·L)².
struct SsimConstants {
    double k1 = 0.01, k2 = 0.03, dynamic_range = 1.0;
    double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
    double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

enum class SsimWindow { Block8, Global };

struct SsimOptions {
    SsimWindow window = SsimWindow::Block8;
    SsimConstants constants;
};

/// Mean squared error.
template <class T>
Tensor<T> l_sr(const Tensor<T>& sr, const Tensor<T>& hr) {
    if (sr.shape() != hr.shape()) throw dim_error("l_sr", sr.shape(), hr.shape());
    return ops::mean(ops::square(ops::sub(sr, hr)));
}

/// Mean absolute difference plus mean per-row KL(target ‖ pred), with
/// ε = 1e-8 inside the logarithms.
template <class T>
Tensor<T> l_tp(const TextPrior<T>& pred, const TextPrior<T>& target) {
    if (pred.probs.shape() != target.probs.shape()) throw dim_error("l_tp", pred.probs.shape(), target.probs.shape());
    for (const auto* p : {&pred.probs, &target.probs})
        for (T v : p->data())
            if (v < T(0)) throw ContractError("l_tp: negative probability");
    const T eps = T(1e-8);
    auto l1 = ops::mean(ops::abs(ops::sub(pred.probs, target.probs)));
    auto log_ratio = ops::sub(ops::log(ops::add_scalar(target.probs, eps)), ops::log(ops::add_scalar(pred.probs, eps)));
    auto kl = ops::mean(ops::sum_lastdim(ops::mul(target.probs, log_ratio)));
    return ops::add(l1, kl);
}

namespace detail {

/// Luminance [.., H, W] of an image [.., H, W, 3] (or [.., H, W, 1]).
template <class T>
Tensor<T> luma(const Tensor<T>& x) {
    const std::size_t c = x.shape().back();
    Tensor<T> w;
    if (c == 3)
        w = Tensor<T>(Shape{3, 1}, std::vector<T>{T(0.299), T(0.587), T(0.114)});
    else if (c == 1)
        w = Tensor<T>(Shape{1, 1}, std::vector<T>{T(1)});
    else
        throw DimensionError("ssim: expected 1 or 3 channels, got " + shape_str(x.shape()));
    auto y = ops::matmul_lastdim(x, w);
    return ops::reshape(y, Shape(x.shape().begin(), x.shape().end() - 1));
}

/// Averaging map from [B,H,W] planes to per-window means [B*windows].
template <class T>
std::shared_ptr<const ops::SparseMap<T>> window_map(std::size_t B, std::size_t H, std::size_t W, SsimWindow mode) {
    const std::size_t wy = mode == SsimWindow::Global ? H : std::min<std::size_t>(8, H);
    const std::size_t wx = mode == SsimWindow::Global ? W : std::min<std::size_t>(8, W);
    const std::size_t ny = H / wy, nx = W / wx;
    const T inv = T(1) / static_cast<T>(wy * wx);
    auto map = std::make_shared<ops::SparseMap<T>>();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t by = 0; by < ny; ++by)
            for (std::size_t bx = 0; bx < nx; ++bx) {
                for (std::size_t y = by * wy; y < (by + 1) * wy; ++y)
                    for (std::size_t xx = bx * wx; xx < (bx + 1) * wx; ++xx) map->add((b * H + y) * W + xx, inv);
                map->end_row();
            }
    return map;
}

/// Inverse of window_map: copies each window value back onto its pixels.
template <class T>
std::shared_ptr<const ops::SparseMap<T>> spread_map(std::size_t B, std::size_t H, std::size_t W, SsimWindow mode) {
    const std::size_t wy = mode == SsimWindow::Global ? H : std::min<std::size_t>(8, H);
    const std::size_t wx = mode == SsimWindow::Global ? W : std::min<std::size_t>(8, W);
    const std::size_t ny = H / wy, nx = W / wx;
    auto map = std::make_shared<ops::SparseMap<T>>();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) {
                if (y / wy < ny && xx / wx < nx) map->add((b * ny + y / wy) * nx + xx / wx, T(1));
                map->end_row();
            }
    return map;
}

template <class T>
struct Planes {
    std::size_t B, H, W;
    std::shared_ptr<const ops::SparseMap<T>> map, spread;
    Tensor<T> win(const Tensor<T>& plane) const { return ops::sparse_linear<T>(plane, map, Shape{map->rows()}); }
    /// Plane minus its window mean, so second moments are taken two-pass.
    Tensor<T> centered(const Tensor<T>& plane, const Tensor<T>& mean) const {
        return ops::sub(plane, ops::sparse_linear<T>(mean, spread, plane.shape()));
    }
};

template <class T>
Planes<T> planes_for(const Tensor<T>& x, SsimWindow mode) {
    if (x.rank() < 3) throw DimensionError("ssim: expected [.., H, W, C], got " + shape_str(x.shape()));
    const std::size_t H = x.dim(x.rank() - 3), W = x.dim(x.rank() - 2);
    const std::size_t B = x.size() / (H * W * x.shape().back());
    return {B, H, W, window_map<T>(B, H, W, mode), spread_map<T>(B, H, W, mode)};
}

template <class T>
Tensor<T> constant_like(const Tensor<T>& x, T v) {
    return Tensor<T>(x.shape(), v);
}

}  // namespace detail

/// Per-window SSIM values.
template <class T>
Tensor<T> ssim_map(const Tensor<T>& x, const Tensor<T>& y, const SsimOptions& opt = {}) {
    if (x.shape() != y.shape()) throw dim_error("ssim", x.shape(), y.shape());
    const auto P = detail::planes_for(x, opt.window);
    const auto lx = detail::luma(x), ly = detail::luma(y);
    const auto mx = P.win(lx), my = P.win(ly);
    const auto dx = P.centered(lx, mx), dy = P.centered(ly, my);
    const auto vx = P.win(ops::square(dx)), vy = P.win(ops::square(dy)), cxy = P.win(ops::mul(dx, dy));
    const T c1 = static_cast<T>(opt.constants.c1()), c2 = static_cast<T>(opt.constants.c2());
    const auto num = ops::mul(ops::add_scalar(ops::scale(ops::mul(mx, my), T(2)), c1),
                              ops::add_scalar(ops::scale(cxy, T(2)), c2));
    const auto den = ops::mul(ops::add_scalar(ops::add(ops::square(mx), ops::square(my)), c1),
                              ops::add_scalar(ops::add(vx, vy), c2));
    return ops::div(num, den);
}

/// Pairwise SSIM on the luminance channel, averaged over 8×8 blocks.
template <class T>
Tensor<T> ssim(const Tensor<T>& x, const Tensor<T>& y, const SsimOptions& opt = {}) {
    return ops::mean(ssim_map(x, y, opt));
}

/// Per-window triplex SSIM:
///   (μxμy + μyμz + μxμz + C1)(σxy + σyz + σxz + C2)
///   / ((μx² + μy² + μz² + C1)(σx² + σy² + σz² + C2)),
/// σ·· being (co)variances within the window.
template <class T>
Tensor<T> tssim_map(const Tensor<T>& x_in, const Tensor<T>& y_in, const Tensor<T>& z_in, const SsimOptions& opt = {}) {
    if (x_in.shape() != y_in.shape()) throw dim_error("tssim", x_in.shape(), y_in.shape());
    if (x_in.shape() != z_in.shape()) throw dim_error("tssim", x_in.shape(), z_in.shape());
    // Canonical argument order makes the floating-point result exactly
    // permutation invariant.
    std::array<const Tensor<T>*, 3> args{&x_in, &y_in, &z_in};
    std::sort(args.begin(), args.end(), [](const Tensor<T>* a, const Tensor<T>* b) { return a->data() < b->data(); });
    const auto P = detail::planes_for(*args[0], opt.window);
    const auto lx = detail::luma(*args[0]), ly = detail::luma(*args[1]), lz = detail::luma(*args[2]);
    const auto mx = P.win(lx), my = P.win(ly), mz = P.win(lz);
    const auto dx = P.centered(lx, mx), dy = P.centered(ly, my), dz = P.centered(lz, mz);
    auto cov = [&](const Tensor<T>& a, const Tensor<T>& b) { return P.win(ops::mul(a, b)); };
    const T c1 = static_cast<T>(opt.constants.c1()), c2 = static_cast<T>(opt.constants.c2());
    const auto mean_num = ops::add_scalar(ops::add(ops::add(ops::mul(mx, my), ops::mul(my, mz)), ops::mul(mx, mz)), c1);
    const auto cov_num = ops::add_scalar(
        ops::add(ops::add(cov(dx, dy), cov(dy, dz)), cov(dx, dz)), c2);
    const auto mean_den =
        ops::add_scalar(ops::add(ops::add(ops::square(mx), ops::square(my)), ops::square(mz)), c1);
    const auto var_den = ops::add_scalar(ops::add(ops::add(cov(dx, dx), cov(dy, dy)), cov(dz, dz)), c2);
    return ops::div(ops::mul(mean_num, cov_num), ops::mul(mean_den, var_den));
}

template <class T>
Tensor<T> tssim(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& z, const SsimOptions& opt = {}) {
    return ops::mean(tssim_map(x, y, z, opt));
}

/// Text structure consistency loss 1 − TSSIM(D(F(Y)), F(D(Y)), D(X)).
/// `forward` maps an LR batch to its SR batch; the same spec per sample is
/// applied at both scales.
template <class T, class Forward>
Tensor<T> l_tsc(const Tensor<T>& hr, const Tensor<T>& lr, Forward&& forward, const std::vector<DeformationSpec>& specs,
                const SsimOptions& opt = {}) {
    auto d_f_y = apply_deformation(forward(lr), specs);
    auto f_d_y = forward(apply_deformation(lr, specs));
    auto d_x = apply_deformation(hr, specs);
    return l_tsc_from_triplet(d_f_y, f_d_y, d_x, opt);
}

template <class T>
Tensor<T> l_tsc_from_triplet(const Tensor<T>& d_f_y, const Tensor<T>& f_d_y, const Tensor<T>& d_x,
                             const SsimOptions& opt = {}) {
    return ops::add_scalar(ops::neg(tssim(d_f_y, f_d_y, d_x, opt)), T(1));
}

/// L_SR + α·L_TP + β·L_TSC. Terms with zero weight (or absent) are not
/// added at all, so β = 0 removes TSC from the graph.
template <class T>
Tensor<T> total_loss(const Tensor<T>& sr_loss, const std::optional<Tensor<T>>& tp_loss,
                     const std::optional<Tensor<T>>& tsc_loss, const LossWeights& w) {
    Tensor<T> total = sr_loss;
    if (tp_loss && w.alpha != 0.0) total = ops::add(total, ops::scale(*tp_loss, static_cast<T>(w.alpha)));
    if (tsc_loss && w.beta != 0.0) total = ops::add(total, ops::scale(*tsc_loss, static_cast<T>(w.beta)));
    return total;
}

/// 10·log10(1/MSE) in dB; +inf when the images are identical.
template <class T>
double psnr(const Tensor<T>& x, const Tensor<T>& y) {
    if (x.shape() != y.shape()) throw dim_error("psnr", x.shape(), y.shape());
    double se = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(x.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace tatt
