#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tatt/ops.hpp"
#include "tatt/rng.hpp"

namespace tatt {

/// Named parameters keyed by hierarchical path ("srb0/conv1/kernel").
/// Iteration is in sorted path order.
template <class T>
class ParamStore {
public:
    struct Entry {
        Tensor<T> tensor;
        bool trainable = true;
    };

    Tensor<T>& add(const std::string& path, Tensor<T> t, bool trainable = true) {
        if (entries_.count(path)) throw ContractError("ParamStore: duplicate path " + path);
        t.set_requires_grad(trainable);
        auto& e = entries_[path];
        e.tensor = std::move(t);
        e.trainable = trainable;
        return e.tensor;
    }

    bool contains(const std::string& path) const { return entries_.count(path) != 0; }

    const Tensor<T>& get(const std::string& path) const {
        auto it = entries_.find(path);
        if (it == entries_.end()) throw ContractError("ParamStore: no parameter " + path);
        return it->second.tensor;
    }
    Tensor<T>& get(const std::string& path) {
        return const_cast<Tensor<T>&>(static_cast<const ParamStore&>(*this).get(path));
    }

    bool trainable(const std::string& path) const { return entries_.at(path).trainable; }

    /// Marks every parameter under `prefix` trainable or frozen.
    void set_trainable(const std::string& prefix, bool on) {
        for (auto& [path, e] : entries_)
            if (path.compare(0, prefix.size(), prefix) == 0) {
                e.trainable = on;
                e.tensor.set_requires_grad(on);
            }
    }

    void zero_grad() {
        for (auto& [path, e] : entries_) e.tensor.zero_grad();
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [path, e] : entries_) n += e.tensor.size();
        return n;
    }

    std::size_t count(const std::string& prefix) const {
        std::size_t n = 0;
        for (const auto& [path, e] : entries_)
            if (path.compare(0, prefix.size(), prefix) == 0) n += e.tensor.size();
        return n;
    }

    std::map<std::string, Entry>& entries() { return entries_; }
    const std::map<std::string, Entry>& entries() const { return entries_; }

    ParamStore clone() const {
        ParamStore out;
        for (const auto& [path, e] : entries_) out.add(path, e.tensor.clone(), e.trainable);
        return out;
    }

    bool values_equal(const ParamStore& o) const {
        if (entries_.size() != o.entries_.size()) return false;
        for (const auto& [path, e] : entries_) {
            auto it = o.entries_.find(path);
            if (it == o.entries_.end() || it->second.tensor.shape() != e.tensor.shape() ||
                it->second.tensor.data() != e.tensor.data())
                return false;
        }
        return true;
    }

private:
    std::map<std::string, Entry> entries_;
};

namespace nn {

enum class Padding { Same, Valid };

namespace detail {

template <class T>
Tensor<T> batched(const Tensor<T>& x, std::size_t image_rank = 3) {
    if (x.rank() == image_rank) {
        Shape s{1};
        s.insert(s.end(), x.shape().begin(), x.shape().end());
        return ops::reshape(x, s);
    }
    return x;
}

template <class T>
Tensor<T> unbatched(const Tensor<T>& y, bool was_batched) {
    if (was_batched) return y;
    return ops::reshape(y, Shape(y.shape().begin() + 1, y.shape().end()));
}

struct ConvGeom {
    std::size_t N, H, W, Ci, kh, kw, Co, Ho, Wo, pad_y, pad_x;
};

template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
    const std::size_t K = g.kh * g.kw * g.Ci;
    for (std::size_t n = 0; n < g.N; ++n)
        for (std::size_t oy = 0; oy < g.Ho; ++oy)
            for (std::size_t ox = 0; ox < g.Wo; ++ox) {
                T* row = col + ((n * g.Ho + oy) * g.Wo + ox) * K;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const long iy = static_cast<long>(oy + ky) - static_cast<long>(g.pad_y);
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const long ix = static_cast<long>(ox + kx) - static_cast<long>(g.pad_x);
                        T* dst = row + (ky * g.kw + kx) * g.Ci;
                        if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.H) || ix >= static_cast<long>(g.W)) {
                            std::fill(dst, dst + g.Ci, T(0));
                        } else {
                            const T* src = x + ((n * g.H + iy) * g.W + ix) * g.Ci;
                            std::copy(src, src + g.Ci, dst);
                        }
                    }
                }
            }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
    const std::size_t K = g.kh * g.kw * g.Ci;
    for (std::size_t n = 0; n < g.N; ++n)
        for (std::size_t oy = 0; oy < g.Ho; ++oy)
            for (std::size_t ox = 0; ox < g.Wo; ++ox) {
                const T* row = col + ((n * g.Ho + oy) * g.Wo + ox) * K;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const long iy = static_cast<long>(oy + ky) - static_cast<long>(g.pad_y);
                    if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const long ix = static_cast<long>(ox + kx) - static_cast<long>(g.pad_x);
                        if (ix < 0 || ix >= static_cast<long>(g.W)) continue;
                        const T* src = row + (ky * g.kw + kx) * g.Ci;
                        T* dst = dx + ((n * g.H + iy) * g.W + ix) * g.Ci;
                        for (std::size_t c = 0; c < g.Ci; ++c) dst[c] += src[c];
                    }
                }
            }
}

}  // namespace detail

/// 2-D cross-correlation. x: [N,H,W,Ci] or [H,W,Ci]; kernel: [kh,kw,Ci,Co].
/// Same padding zero-pads so the output keeps H×W (kh, kw must be odd).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x_in, const Tensor<T>& kernel, Padding padding = Padding::Same) {
    if (kernel.rank() != 4) throw DimensionError("conv2d: kernel must be [kh,kw,cin,cout], got " + shape_str(kernel.shape()));
    if (x_in.rank() != 3 && x_in.rank() != 4) throw DimensionError("conv2d: input must be [N,H,W,C] or [H,W,C], got " + shape_str(x_in.shape()));
    const bool was_batched = x_in.rank() == 4;
    const Tensor<T> x = detail::batched(x_in);
    detail::ConvGeom g{};
    g.N = x.dim(0), g.H = x.dim(1), g.W = x.dim(2), g.Ci = x.dim(3);
    g.kh = kernel.dim(0), g.kw = kernel.dim(1), g.Co = kernel.dim(3);
    if (kernel.dim(2) != g.Ci) throw dim_error("conv2d (channel mismatch)", x.shape(), kernel.shape());
    if (padding == Padding::Same) {
        if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ContractError("conv2d: same padding needs odd kernel sizes");
        g.pad_y = g.kh / 2, g.pad_x = g.kw / 2, g.Ho = g.H, g.Wo = g.W;
    } else {
        if (g.kh > g.H || g.kw > g.W) throw dim_error("conv2d (kernel larger than input)", x.shape(), kernel.shape());
        g.pad_y = g.pad_x = 0, g.Ho = g.H - g.kh + 1, g.Wo = g.W - g.kw + 1;
    }
    const std::size_t M = g.N * g.Ho * g.Wo, K = g.kh * g.kw * g.Ci;
    std::vector<T> col(M * K);
    detail::im2col(x.ptr(), g, col.data());
    std::vector<T> out(M * g.Co);
    tatt::detail::gemm(false, false, M, g.Co, K, col.data(), kernel.ptr(), out.data(), false);
    col = {};
    auto y = ops::detail::make_result<T>(Shape{g.N, g.Ho, g.Wo, g.Co}, std::move(out), {x.node(), kernel.node()},
                                         [g, M, K](Node<T>& self) {
                                             Node<T>& px = *self.parents[0];
                                             Node<T>& pk = *self.parents[1];
                                             if (pk.requires_grad) {
                                                 std::vector<T> col(M * K);
                                                 detail::im2col(px.data.data(), g, col.data());
                                                 pk.ensure_grad();
                                                 tatt::detail::gemm(true, false, K, g.Co, M, col.data(), self.grad.data(),
                                                                    pk.grad.data(), true);
                                             }
                                             if (px.requires_grad) {
                                                 std::vector<T> dcol(M * K);
                                                 tatt::detail::gemm(false, true, M, K, g.Co, self.grad.data(),
                                                                    pk.data.data(), dcol.data(), false);
                                                 px.ensure_grad();
                                                 detail::col2im_add(dcol.data(), g, px.grad.data());
                                             }
                                         });
    return detail::unbatched(y, was_batched);
}

/// Affine map on the last dimension: x·w + b.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (w.rank() != 2 || b.rank() != 1 || b.dim(0) != w.dim(1)) throw dim_error("linear", w.shape(), b.shape());
    return ops::add_lastdim(ops::matmul_lastdim(x, w), b);
}

/// Standardizes each last-dim slice, then applies gain and bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
    if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("layer_norm: empty last dimension");
    const std::size_t c = x.shape().back();
    const T inv_c = T(1) / static_cast<T>(c);
    auto mu = ops::scale(ops::sum_lastdim(x), inv_c);
    auto xc = ops::sub(x, ops::broadcast_lastdim(mu, c));
    auto var = ops::scale(ops::sum_lastdim(ops::square(xc)), inv_c);
    auto denom = ops::sqrt(ops::add_scalar(var, eps));
    auto y = ops::div(xc, ops::broadcast_lastdim(denom, c));
    return ops::add_lastdim(ops::mul_lastdim(y, gain), bias);
}

namespace detail {

inline std::vector<std::size_t> shuffle_index(std::size_t N, std::size_t h, std::size_t w, std::size_t c,
                                              std::size_t r) {
    // index into input [N,h,w,c·r²] for each output element of [N,rh,rw,c]
    const std::size_t H = h * r, W = w * r, Cin = c * r * r;
    std::vector<std::size_t> idx(N * H * W * c);
    std::size_t o = 0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx)
                for (std::size_t ch = 0; ch < c; ++ch)
                    idx[o++] = ((n * h + y / r) * w + xx / r) * Cin + ch * r * r + r * (y % r) + (xx % r);
    return idx;
}

}  // namespace detail

/// [N,h,w,r²c] -> [N,rh,rw,c]; out(y,x,ch) = in(y/r, x/r, ch·r² + r·(y%r) + x%r).
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x_in, std::size_t r) {
    if (x_in.rank() != 3 && x_in.rank() != 4) throw DimensionError("pixel_shuffle: bad rank " + shape_str(x_in.shape()));
    if (r == 0 || x_in.shape().back() % (r * r) != 0)
        throw DimensionError("pixel_shuffle: channels " + std::to_string(x_in.shape().back()) +
                             " not divisible by r^2 = " + std::to_string(r * r));
    const bool was_batched = x_in.rank() == 4;
    const Tensor<T> x = detail::batched(x_in);
    const std::size_t N = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3) / (r * r);
    auto y = ops::gather(x, detail::shuffle_index(N, h, w, c, r), Shape{N, h * r, w * r, c});
    return detail::unbatched(y, was_batched);
}

/// Inverse of pixel_shuffle: [N,rh,rw,c] -> [N,h,w,r²c].
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x_in, std::size_t r) {
    if (x_in.rank() != 3 && x_in.rank() != 4) throw DimensionError("pixel_unshuffle: bad rank " + shape_str(x_in.shape()));
    const bool was_batched = x_in.rank() == 4;
    const Tensor<T> x = detail::batched(x_in);
    if (r == 0 || x.dim(1) % r || x.dim(2) % r)
        throw DimensionError("pixel_unshuffle: spatial dims of " + shape_str(x.shape()) + " not divisible by r");
    const std::size_t N = x.dim(0), h = x.dim(1) / r, w = x.dim(2) / r, c = x.dim(3);
    const auto fwd = detail::shuffle_index(N, h, w, c, r);
    std::vector<std::size_t> inv(fwd.size());
    for (std::size_t o = 0; o < fwd.size(); ++o) inv[fwd[o]] = o;
    auto y = ops::gather(x, std::move(inv), Shape{N, h, w, c * r * r});
    return detail::unbatched(y, was_batched);
}

/// Minimal gated recurrence over axis 2 of [N,A,T,c] (or [S,T,c]):
///   z_t = σ(xz_t + h_{t-1}Uz),  n_t = tanh(xh_t + h_{t-1}Uh),
///   h_t = (1 − z_t)⊙h_{t-1} + z_t⊙n_t,   h_{-1} = 0.
/// xz, xh carry the input projections (with biases); `reverse` scans T-1..0.
template <class T>
Tensor<T> gated_scan(const Tensor<T>& xz, const Tensor<T>& xh, const Tensor<T>& uz, const Tensor<T>& uh,
                     bool reverse) {
    if (xz.shape() != xh.shape() || xz.rank() < 2) throw dim_error("gated_scan", xz.shape(), xh.shape());
    const std::size_t c = xz.shape().back(), T_ = xz.dim(xz.rank() - 2), S = xz.size() / (c * T_);
    if (uz.shape() != Shape{c, c} || uh.shape() != Shape{c, c}) throw dim_error("gated_scan (recurrent weights)", uz.shape(), Shape{c, c});
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    using AMap = Eigen::Map<Arr, Eigen::AlignedMax>;
    using CAMap = Eigen::Map<const Arr, Eigen::AlignedMax>;
    using Buf = std::vector<T, Eigen::aligned_allocator<T>>;
    // Per-step rows are padded to whole max-width packets so every map is
    // aligned and vectorized results do not depend on allocation addresses.
    constexpr std::size_t pad = EIGEN_MAX_ALIGN_BYTES / sizeof(T) > 0 ? EIGEN_MAX_ALIGN_BYTES / sizeof(T) : 1;
    const std::size_t n = S * c, np = (n + pad - 1) / pad * pad;
    const auto N = static_cast<Eigen::Index>(n);

    // Both recurrent matrices side by side: [c, 2c].
    std::vector<T> U(2 * c * c);
    for (std::size_t i = 0; i < c; ++i) {
        std::copy(uz.ptr() + i * c, uz.ptr() + (i + 1) * c, U.data() + i * 2 * c);
        std::copy(uh.ptr() + i * c, uh.ptr() + (i + 1) * c, U.data() + i * 2 * c + c);
    }
    auto at = [T_, c](std::size_t s, std::size_t t) { return (s * T_ + t) * c; };
    auto time_of = [T_, reverse](std::size_t step) { return reverse ? T_ - 1 - step : step; };

    // Step-major state: entry `step` holds [S, c] in processing order.
    Buf Zs(T_ * np), Ns(T_ * np), Hs(T_ * np), pz(np), pn(np);
    std::vector<T> ab(2 * n);
    for (std::size_t step = 0; step < T_; ++step) {
        const std::size_t t = time_of(step);
        for (std::size_t s = 0; s < S; ++s) {
            std::copy(xz.ptr() + at(s, t), xz.ptr() + at(s, t) + c, pz.data() + s * c);
            std::copy(xh.ptr() + at(s, t), xh.ptr() + at(s, t) + c, pn.data() + s * c);
        }
        const T* hprev = step > 0 ? Hs.data() + (step - 1) * np : nullptr;
        if (hprev) {
            tatt::detail::gemm(false, false, S, 2 * c, c, hprev, U.data(), ab.data(), false);
            for (std::size_t s = 0; s < S; ++s)
                for (std::size_t j = 0; j < c; ++j) {
                    pz[s * c + j] += ab[s * 2 * c + j];
                    pn[s * c + j] += ab[s * 2 * c + c + j];
                }
        }
        AMap z(Zs.data() + step * np, N), nn_(Ns.data() + step * np, N), h(Hs.data() + step * np, N);
        z = CAMap(pz.data(), N).logistic();
        nn_ = CAMap(pn.data(), N).tanh();
        if (hprev) {
            CAMap hp(hprev, N);
            h = hp + z * (nn_ - hp);
        } else {
            h = z * nn_;
        }
    }
    std::vector<T> out(xz.size());
    for (std::size_t step = 0; step < T_; ++step)
        for (std::size_t s = 0; s < S; ++s)
            std::copy(Hs.data() + step * np + s * c, Hs.data() + step * np + (s + 1) * c, out.data() + at(s, time_of(step)));

    return ops::detail::make_result<T>(
        xz.shape(), std::move(out), {xz.node(), xh.node(), uz.node(), uh.node()},
        [S, c, n, np, N, T_, at, time_of, U = std::move(U), Zs = std::move(Zs), Ns = std::move(Ns),
         Hs = std::move(Hs)](Node<T>& self) {
            Node<T>& pxz = *self.parents[0];
            Node<T>& pxh = *self.parents[1];
            if (pxz.requires_grad) pxz.ensure_grad();
            if (pxh.requires_grad) pxh.ensure_grad();
            Buf g(np), carry(np, T(0)), da(np), db(np);
            std::vector<T> dab(2 * n), dU(2 * c * c, T(0));
            for (std::size_t step = T_; step-- > 0;) {
                const std::size_t t = time_of(step);
                for (std::size_t s = 0; s < S; ++s)
                    std::copy(self.grad.data() + at(s, t), self.grad.data() + at(s, t) + c, g.data() + s * c);
                AMap G(g.data(), N), C(carry.data(), N), DA(da.data(), N), DB(db.data(), N);
                CAMap z(Zs.data() + step * np, N), nv(Ns.data() + step * np, N);
                G += C;
                if (step > 0) {
                    CAMap hp(Hs.data() + (step - 1) * np, N);
                    DA = G * (nv - hp) * z * (T(1) - z);
                } else {
                    DA = G * nv * z * (T(1) - z);
                }
                DB = G * z * (T(1) - nv * nv);
                C = G * (T(1) - z);
                for (std::size_t s = 0; s < S; ++s)
                    for (std::size_t j = 0; j < c; ++j) {
                        const std::size_t k = at(s, t) + j, q = s * c + j;
                        if (pxz.requires_grad) pxz.grad[k] += da[q];
                        if (pxh.requires_grad) pxh.grad[k] += db[q];
                        dab[s * 2 * c + j] = da[q];
                        dab[s * 2 * c + c + j] = db[q];
                    }
                if (step > 0) {
                    tatt::detail::gemm(true, false, c, 2 * c, S, Hs.data() + (step - 1) * np, dab.data(), dU.data(), true);
                    tatt::detail::gemm(false, true, S, c, 2 * c, dab.data(), U.data(), carry.data(), true);
                }
            }
            ops::detail::accumulate(*self.parents[2], [&](std::vector<T>& gu) {
                for (std::size_t i = 0; i < c; ++i)
                    for (std::size_t j = 0; j < c; ++j) gu[i * c + j] += dU[i * 2 * c + j];
            });
            ops::detail::accumulate(*self.parents[3], [&](std::vector<T>& gu) {
                for (std::size_t i = 0; i < c; ++i)
                    for (std::size_t j = 0; j < c; ++j) gu[i * c + j] += dU[i * 2 * c + c + j];
            });
        });
}

// ------------------------------------------------------------ initialization

/// Uniform(−1/√fan_in, 1/√fan_in).
template <class T>
Tensor<T> fan_in_uniform(Rng& rng, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template <class T>
void init_conv(ParamStore<T>& ps, Rng& rng, const std::string& path, std::size_t kh, std::size_t kw, std::size_t ci,
               std::size_t co) {
    ps.add(path + "/kernel", fan_in_uniform<T>(rng, {kh, kw, ci, co}, kh * kw * ci));
    ps.add(path + "/bias", Tensor<T>(Shape{co}));
}

template <class T>
void init_linear(ParamStore<T>& ps, Rng& rng, const std::string& path, std::size_t in, std::size_t out,
                 bool with_bias = true) {
    ps.add(path + "/w", fan_in_uniform<T>(rng, {in, out}, in));
    if (with_bias) ps.add(path + "/b", Tensor<T>(Shape{out}));
}

template <class T>
void init_layer_norm(ParamStore<T>& ps, const std::string& path, std::size_t c) {
    ps.add(path + "/gain", Tensor<T>(Shape{c}, T(1)));
    ps.add(path + "/bias", Tensor<T>(Shape{c}));
}

template <class T>
void init_gated_cell(ParamStore<T>& ps, Rng& rng, const std::string& path, std::size_t c) {
    init_linear(ps, rng, path + "/z", c, c);
    init_linear(ps, rng, path + "/n", c, c);
    ps.add(path + "/uz", fan_in_uniform<T>(rng, {c, c}, c));
    ps.add(path + "/un", fan_in_uniform<T>(rng, {c, c}, c));
}

template <class T>
void init_bidirectional_scan(ParamStore<T>& ps, Rng& rng, const std::string& path, std::size_t c) {
    init_gated_cell(ps, rng, path + "/fwd", c);
    init_gated_cell(ps, rng, path + "/bwd", c);
    init_linear(ps, rng, path + "/proj", c, c);
}

template <class T>
void init_srb(ParamStore<T>& ps, Rng& rng, const std::string& path, std::size_t c) {
    init_conv(ps, rng, path + "/conv1", 3, 3, c, c);
    init_bidirectional_scan(ps, rng, path + "/scan_w", c);
    init_bidirectional_scan(ps, rng, path + "/scan_h", c);
    init_conv(ps, rng, path + "/conv2", 3, 3, c, c);
    auto& k = ps.get(path + "/conv2/kernel").data();
    std::fill(k.begin(), k.end(), T(0));  // block starts as the identity
}

// ----------------------------------------------------------------- blocks

template <class T>
Tensor<T> conv_layer(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x) {
    return ops::add_lastdim(conv2d(x, ps.get(path + "/kernel"), Padding::Same), ps.get(path + "/bias"));
}

template <class T>
Tensor<T> linear_layer(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x) {
    return linear(x, ps.get(path + "/w"), ps.get(path + "/b"));
}

/// One gated cell scanned along axis -2 of x ([..., T, c]).
template <class T>
Tensor<T> gated_cell_scan(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x, bool reverse) {
    auto xz = linear_layer(ps, path + "/z", x);
    auto xh = linear_layer(ps, path + "/n", x);
    return gated_scan(xz, xh, ps.get(path + "/uz"), ps.get(path + "/un"), reverse);
}

enum class ScanAxis { Width, Height };

/// Left→right and right→left gated scans over each row (or column),
/// summed and projected back to c channels. x: [N,H,W,c] or [H,W,c].
template <class T>
Tensor<T> bidirectional_scan(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x_in,
                             ScanAxis axis = ScanAxis::Width) {
    if (x_in.rank() != 3 && x_in.rank() != 4) throw DimensionError("bidirectional_scan: bad rank " + shape_str(x_in.shape()));
    const bool was_batched = x_in.rank() == 4;
    Tensor<T> x = detail::batched(x_in);
    if (axis == ScanAxis::Height) x = ops::swap_hw(x);
    auto fwd = gated_cell_scan(ps, path + "/fwd", x, false);
    auto bwd = gated_cell_scan(ps, path + "/bwd", x, true);
    auto y = linear_layer(ps, path + "/proj", ops::add(fwd, bwd));
    if (axis == ScanAxis::Height) y = ops::swap_hw(y);
    return detail::unbatched(y, was_batched);
}

template <class T>
Tensor<T> bidirectional_row_scan(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x) {
    return bidirectional_scan(ps, path, x, ScanAxis::Width);
}

/// Sequential-recurrent block: x + conv(scan_h(scan_w(conv(x)))).
template <class T>
Tensor<T> srb_forward(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x) {
    auto y = conv_layer(ps, path + "/conv1", x);
    y = bidirectional_scan(ps, path + "/scan_w", y, ScanAxis::Width);
    y = bidirectional_scan(ps, path + "/scan_h", y, ScanAxis::Height);
    y = conv_layer(ps, path + "/conv2", y);
    return ops::add(x, y);
}

}  // namespace nn
}  // namespace tatt
