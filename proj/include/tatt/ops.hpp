#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tatt/gemm.hpp"
#include "tatt/tensor.hpp"

/// Differentiable tensor operations. No implicit broadcasting: every
/// broadcast has a named op (scale, add_scalar, add_lastdim, add_leading...).
namespace tatt::ops {

namespace detail {

using tatt::detail::make_result;

template <class T>
using NodeP = std::shared_ptr<Node<T>>;

template <class T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw dim_error(op, a.shape(), b.shape());
}

/// Accumulates g into parent->grad if the parent is tracked.
template <class T, class F>
void accumulate(Node<T>& parent, F&& per_element) {
    if (!parent.requires_grad) return;
    parent.ensure_grad();
    per_element(parent.grad);
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd f, Deriv df) {
    std::vector<T> out(x.size());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
    return make_result<T>(x.shape(), std::move(out), {x.node()}, [df](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        accumulate(p, [&](std::vector<T>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.data[i], self.data[i]);
        });
    });
}

inline std::size_t leading(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) n *= s[i];
    return n;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same("add", a, b);
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
        for (auto& p : self.parents)
            detail::accumulate(*p, [&](std::vector<T>& g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            });
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same("sub", a, b);
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
        detail::accumulate(*self.parents[1], [&](std::vector<T>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        });
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same("mul", a, b);
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        detail::accumulate(pa, [&](std::vector<T>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
        });
        detail::accumulate(pb, [&](std::vector<T>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
        });
    });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same("div", a, b);
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        detail::accumulate(pa, [&](std::vector<T>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.data[i];
        });
        detail::accumulate(pb, [&](std::vector<T>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.data[i] / pb.data[i];
        });
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
    return scale(x, T(-1));
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
T sigmoid_scalar(T v) {
    return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return std::abs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

/// Same values, cut from the graph.
template <class T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
    return x.detach();
}

// ----------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = T(0);
    for (T v : x.data()) s += v;
    return detail::make_result<T>(Shape{}, {s}, {x.node()}, [](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (auto& v : g) v += self.grad[0];
        });
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.size() == 0) throw ContractError("mean: empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// [...×n] -> [...]
template <class T>
Tensor<T> sum_lastdim(const Tensor<T>& x) {
    if (x.rank() == 0) throw DimensionError("sum_lastdim: scalar input");
    const std::size_t n = x.shape().back(), rows = x.size() / std::max<std::size_t>(n, 1);
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    std::vector<T> out(rows, T(0));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r] += x[r * n + j];
    return detail::make_result<T>(out_shape, std::move(out), {x.node()}, [n, rows](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[r];
        });
    });
}

/// [...] -> [...×n], repeating each value n times.
template <class T>
Tensor<T> broadcast_lastdim(const Tensor<T>& x, std::size_t n) {
    Shape out_shape = x.shape();
    out_shape.push_back(n);
    const std::size_t rows = x.size();
    std::vector<T> out(rows * n);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r];
    return detail::make_result<T>(out_shape, std::move(out), {x.node()}, [n, rows](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < n; ++j) g[r] += self.grad[r * n + j];
        });
    });
}

/// x[...×c] + b[c]
template <class T>
Tensor<T> add_lastdim(const Tensor<T>& x, const Tensor<T>& b) {
    if (b.rank() != 1 || x.rank() == 0 || x.shape().back() != b.dim(0)) throw dim_error("add_lastdim", x.shape(), b.shape());
    const std::size_t c = b.dim(0), rows = x.size() / c;
    std::vector<T> out(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] = x[r * c + j] + b[j];
    return detail::make_result<T>(x.shape(), std::move(out), {x.node(), b.node()}, [c, rows](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
        detail::accumulate(*self.parents[1], [&](std::vector<T>& g) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[r * c + j];
        });
    });
}

/// x[...×c] ⊙ g[c]
template <class T>
Tensor<T> mul_lastdim(const Tensor<T>& x, const Tensor<T>& gain) {
    if (gain.rank() != 1 || x.rank() == 0 || x.shape().back() != gain.dim(0))
        throw dim_error("mul_lastdim", x.shape(), gain.shape());
    const std::size_t c = gain.dim(0), rows = x.size() / c;
    std::vector<T> out(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] = x[r * c + j] * gain[j];
    return detail::make_result<T>(x.shape(), std::move(out), {x.node(), gain.node()}, [c, rows](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        Node<T>& pg = *self.parents[1];
        detail::accumulate(px, [&](std::vector<T>& g) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < c; ++j) g[r * c + j] += self.grad[r * c + j] * pg.data[j];
        });
        detail::accumulate(pg, [&](std::vector<T>& g) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[r * c + j] * px.data[r * c + j];
        });
    });
}

/// x[N×rest...] + p[rest...]: the same p added to every leading slice.
template <class T>
Tensor<T> add_leading(const Tensor<T>& x, const Tensor<T>& p) {
    if (x.rank() != p.rank() + 1 || !std::equal(p.shape().begin(), p.shape().end(), x.shape().begin() + 1))
        throw dim_error("add_leading", x.shape(), p.shape());
    const std::size_t inner = p.size(), outer = x.dim(0);
    std::vector<T> out(x.size());
    for (std::size_t n = 0; n < outer; ++n)
        for (std::size_t i = 0; i < inner; ++i) out[n * inner + i] = x[n * inner + i] + p[i];
    return detail::make_result<T>(x.shape(), std::move(out), {x.node(), p.node()}, [inner, outer](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
        detail::accumulate(*self.parents[1], [&](std::vector<T>& g) {
            for (std::size_t n = 0; n < outer; ++n)
                for (std::size_t i = 0; i < inner; ++i) g[i] += self.grad[n * inner + i];
        });
    });
}

// ------------------------------------------------------------------ reshaping

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.size())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    return detail::make_result<T>(std::move(shape), x.data(), {x.node()}, [](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
    });
}

/// 2-D transpose.
template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
    if (x.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
    return detail::make_result<T>(Shape{n, m}, std::move(out), {x.node()}, [m, n](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
        });
    });
}

/// [N,A,B,C] -> [N,B,A,C]
template <class T>
Tensor<T> swap_hw(const Tensor<T>& x) {
    if (x.rank() != 4) throw DimensionError("swap_hw: expected rank 4, got " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), A = x.dim(1), B = x.dim(2), C = x.dim(3);
    std::vector<T> out(x.size());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t a = 0; a < A; ++a)
            for (std::size_t b = 0; b < B; ++b) {
                const T* src = x.ptr() + ((n * A + a) * B + b) * C;
                T* dst = out.data() + ((n * B + b) * A + a) * C;
                std::copy(src, src + C, dst);
            }
    return detail::make_result<T>(Shape{N, B, A, C}, std::move(out), {x.node()}, [N, A, B, C](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t a = 0; a < A; ++a)
                    for (std::size_t b = 0; b < B; ++b) {
                        T* dst = g.data() + ((n * A + a) * B + b) * C;
                        const T* src = self.grad.data() + ((n * B + b) * A + a) * C;
                        for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
                    }
        });
    });
}

/// out[i] = x[index[i]]; backward scatter-adds.
template <class T>
Tensor<T> gather(const Tensor<T>& x, std::vector<std::size_t> index, Shape shape) {
    if (shape_numel(shape) != index.size()) throw DimensionError("gather: index count does not match shape " + shape_str(shape));
    std::vector<T> out(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= x.size()) throw BoundsError("gather: index out of range");
        out[i] = x[index[i]];
    }
    return detail::make_result<T>(std::move(shape), std::move(out), {x.node()},
                                  [index = std::move(index)](Node<T>& self) {
                                      detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
                                          for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
                                      });
                                  });
}

/// Channels [start, start+len) of the last dimension.
template <class T>
Tensor<T> narrow_lastdim(const Tensor<T>& x, std::size_t start, std::size_t len) {
    if (x.rank() == 0 || start + len > x.shape().back())
        throw DimensionError("narrow_lastdim: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                             ") exceeds " + shape_str(x.shape()));
    const std::size_t c = x.shape().back(), rows = x.size() / c;
    Shape out_shape = x.shape();
    out_shape.back() = len;
    std::vector<T> out(rows * len);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy(x.ptr() + r * c + start, x.ptr() + r * c + start + len, out.data() + r * len);
    return detail::make_result<T>(out_shape, std::move(out), {x.node()}, [c, rows, start, len](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < len; ++j) g[r * c + start + j] += self.grad[r * len + j];
        });
    });
}

template <class T>
Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_lastdim: no inputs");
    const Shape& s0 = parts[0].shape();
    if (s0.empty()) throw DimensionError("concat_lastdim: scalar input");
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != s0.size() || !std::equal(s0.begin(), s0.end() - 1, p.shape().begin()))
            throw dim_error("concat_lastdim", s0, p.shape());
        widths.push_back(p.shape().back());
        total += p.shape().back();
    }
    const std::size_t rows = detail::leading(s0);
    Shape out_shape = s0;
    out_shape.back() = total;
    std::vector<T> out(rows * total);
    std::vector<detail::NodeP<T>> parents;
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        for (std::size_t r = 0; r < rows; ++r)
            std::copy(parts[k].ptr() + r * widths[k], parts[k].ptr() + (r + 1) * widths[k],
                      out.data() + r * total + off);
        off += widths[k];
        parents.push_back(parts[k].node());
    }
    return detail::make_result<T>(out_shape, std::move(out), std::move(parents), [widths, rows, total](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            const std::size_t w = widths[k];
            detail::accumulate(*self.parents[k], [&](std::vector<T>& g) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < w; ++j) g[r * w + j] += self.grad[r * total + off + j];
            });
            off += w;
        }
    });
}

// ------------------------------------------------------------- linear algebra

/// a[m×k] · b[k×n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw dim_error("matmul", a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n);
    tatt::detail::gemm(false, false, m, n, k, a.ptr(), b.ptr(), out.data(), false);
    return detail::make_result<T>(Shape{m, n}, std::move(out), {a.node(), b.node()}, [m, n, k](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        detail::accumulate(pa, [&](std::vector<T>& g) {
            tatt::detail::gemm(false, true, m, k, n, self.grad.data(), pb.data.data(), g.data(), true);
        });
        detail::accumulate(pb, [&](std::vector<T>& g) {
            tatt::detail::gemm(true, false, k, n, m, pa.data.data(), self.grad.data(), g.data(), true);
        });
    });
}

/// x[...×k] · w[k×n] -> [...×n], leading dimensions flattened into rows.
template <class T>
Tensor<T> matmul_lastdim(const Tensor<T>& x, const Tensor<T>& w) {
    if (x.rank() == 0 || w.rank() != 2 || x.shape().back() != w.dim(0))
        throw dim_error("matmul_lastdim", x.shape(), w.shape());
    const std::size_t k = w.dim(0), n = w.dim(1), m = x.size() / k;
    Shape out_shape = x.shape();
    out_shape.back() = n;
    std::vector<T> out(m * n);
    tatt::detail::gemm(false, false, m, n, k, x.ptr(), w.ptr(), out.data(), false);
    return detail::make_result<T>(out_shape, std::move(out), {x.node(), w.node()}, [m, n, k](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        Node<T>& pw = *self.parents[1];
        detail::accumulate(px, [&](std::vector<T>& g) {
            tatt::detail::gemm(false, true, m, k, n, self.grad.data(), pw.data.data(), g.data(), true);
        });
        detail::accumulate(pw, [&](std::vector<T>& g) {
            tatt::detail::gemm(true, false, k, n, m, px.data.data(), self.grad.data(), g.data(), true);
        });
    });
}

/// Batched product a[B,m,k] · op(b) where op(b) = b[B,k,n] or, with
/// trans_b, b[B,n,k]ᵀ. Rank-2 operands are treated as B=1.
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_b = false) {
    const bool batched = a.rank() == 3;
    if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) throw dim_error("bmm", a.shape(), b.shape());
    const std::size_t B = batched ? a.dim(0) : 1;
    const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
    const std::size_t bk = trans_b ? b.dim(b.rank() - 1) : b.dim(b.rank() - 2);
    const std::size_t n = trans_b ? b.dim(b.rank() - 2) : b.dim(b.rank() - 1);
    if (bk != k || (batched && b.dim(0) != B)) throw dim_error("bmm", a.shape(), b.shape());
    Shape out_shape = batched ? Shape{B, m, n} : Shape{m, n};
    std::vector<T> out(B * m * n);
    for (std::size_t i = 0; i < B; ++i)
        tatt::detail::gemm(false, trans_b, m, n, k, a.ptr() + i * m * k, b.ptr() + i * k * n, out.data() + i * m * n,
                           false);
    return detail::make_result<T>(out_shape, std::move(out), {a.node(), b.node()}, [B, m, n, k, trans_b](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        detail::accumulate(pa, [&](std::vector<T>& g) {
            for (std::size_t i = 0; i < B; ++i)
                tatt::detail::gemm(false, !trans_b, m, k, n, self.grad.data() + i * m * n, pb.data.data() + i * k * n,
                                   g.data() + i * m * k, true);
        });
        detail::accumulate(pb, [&](std::vector<T>& g) {
            for (std::size_t i = 0; i < B; ++i) {
                if (trans_b)  // dB[n×k] = dCᵀ · A
                    tatt::detail::gemm(true, false, n, k, m, self.grad.data() + i * m * n, pa.data.data() + i * m * k,
                                       g.data() + i * k * n, true);
                else  // dB[k×n] = Aᵀ · dC
                    tatt::detail::gemm(true, false, k, n, m, pa.data.data() + i * m * k, self.grad.data() + i * m * n,
                                       g.data() + i * k * n, true);
            }
        });
    });
}

/// Softmax over the last dimension with max subtraction.
template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("softmax_lastdim: empty last dimension");
    const std::size_t n = x.shape().back(), rows = x.size() / n;
    std::vector<T> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.ptr() + r * n;
        T* o = out.data() + r * n;
        const T mx = *std::max_element(in, in + n);
        T s = T(0);
        for (std::size_t j = 0; j < n; ++j) s += (o[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < n; ++j) o[j] /= s;
    }
    return detail::make_result<T>(x.shape(), std::move(out), {x.node()}, [n, rows](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.data.data() + r * n;
                const T* dy = self.grad.data() + r * n;
                T dot = T(0);
                for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
            }
        });
    });
}

template <class T>
Tensor<T> log_softmax_lastdim(const Tensor<T>& x) {
    if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("log_softmax_lastdim: empty last dimension");
    const std::size_t n = x.shape().back(), rows = x.size() / n;
    std::vector<T> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.ptr() + r * n;
        T* o = out.data() + r * n;
        const T mx = *std::max_element(in, in + n);
        T s = T(0);
        for (std::size_t j = 0; j < n; ++j) s += std::exp(in[j] - mx);
        const T lse = mx + std::log(s);
        for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lse;
    }
    return detail::make_result<T>(x.shape(), std::move(out), {x.node()}, [n, rows](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.data.data() + r * n;
                const T* dy = self.grad.data() + r * n;
                T total = T(0);
                for (std::size_t j = 0; j < n; ++j) total += dy[j];
                for (std::size_t j = 0; j < n; ++j) g[r * n + j] += dy[j] - std::exp(y[j]) * total;
            }
        });
    });
}

// ------------------------------------------------------------ spatial helpers

/// Fixed sparse linear map in CSR form: out[r] = Σ weight[e] · in[col[e]]
/// for e in [row_ptr[r], row_ptr[r+1]).
template <class T>
struct SparseMap {
    std::vector<std::size_t> row_ptr{0};
    std::vector<std::size_t> col;
    std::vector<T> weight;

    std::size_t rows() const { return row_ptr.size() - 1; }
    void add(std::size_t c, T w) {
        col.push_back(c);
        weight.push_back(w);
    }
    void end_row() { row_ptr.push_back(col.size()); }
};

template <class T>
Tensor<T> sparse_linear(const Tensor<T>& x, std::shared_ptr<const SparseMap<T>> map, Shape out_shape) {
    if (shape_numel(out_shape) != map->rows())
        throw DimensionError("sparse_linear: map has " + std::to_string(map->rows()) + " rows, shape " +
                             shape_str(out_shape));
    std::vector<T> out(map->rows(), T(0));
    for (std::size_t r = 0; r < map->rows(); ++r) {
        T s = T(0);
        for (std::size_t e = map->row_ptr[r]; e < map->row_ptr[r + 1]; ++e) {
            if (map->col[e] >= x.size()) throw BoundsError("sparse_linear: column out of range");
            s += map->weight[e] * x[map->col[e]];
        }
        out[r] = s;
    }
    return detail::make_result<T>(std::move(out_shape), std::move(out), {x.node()}, [map](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (std::size_t r = 0; r < map->rows(); ++r)
                for (std::size_t e = map->row_ptr[r]; e < map->row_ptr[r + 1]; ++e)
                    g[map->col[e]] += map->weight[e] * self.grad[r];
        });
    });
}

/// Non-overlapping average pooling on [N,H,W,C].
template <class T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t ph, std::size_t pw) {
    if (x.rank() != 4 || ph == 0 || pw == 0 || x.dim(1) % ph || x.dim(2) % pw)
        throw DimensionError("avg_pool2d: " + shape_str(x.shape()) + " not divisible by pool " + std::to_string(ph) +
                             "x" + std::to_string(pw));
    const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const std::size_t Ho = H / ph, Wo = W / pw;
    const T inv = T(1) / static_cast<T>(ph * pw);
    std::vector<T> out(N * Ho * Wo * C, T(0));
    auto in_idx = [=](std::size_t n, std::size_t y, std::size_t xx, std::size_t c) {
        return ((n * H + y) * W + xx) * C + c;
    };
    auto out_idx = [=](std::size_t n, std::size_t y, std::size_t xx, std::size_t c) {
        return ((n * Ho + y) * Wo + xx) * C + c;
    };
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx)
                for (std::size_t c = 0; c < C; ++c) out[out_idx(n, y / ph, xx / pw, c)] += x[in_idx(n, y, xx, c)] * inv;
    return detail::make_result<T>(Shape{N, Ho, Wo, C}, std::move(out), {x.node()}, [=](Node<T>& self) {
        detail::accumulate(*self.parents[0], [&](std::vector<T>& g) {
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t xx = 0; xx < W; ++xx)
                        for (std::size_t c = 0; c < C; ++c)
                            g[in_idx(n, y, xx, c)] += self.grad[out_idx(n, y / ph, xx / pw, c)] * inv;
        });
    });
}

}  // namespace tatt::ops
