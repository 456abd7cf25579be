#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tatt/tensor.hpp"

namespace tatt {

/// Central-difference estimate of ∂f/∂x, one element at a time.
/// f must be deterministic; x is perturbed in place and restored.
template <class T, class F>
Tensor<T> finite_diff_gradient(F&& f, Tensor<T>& x, T step) {
    if (!(step > T(0))) throw ContractError("finite_diff_gradient: step must be positive");
    NoGradGuard guard;
    Tensor<T> g(x.shape(), T(0));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T orig = x[i];
        x[i] = orig + step;
        const T fp = static_cast<T>(f(x));
        x[i] = orig - step;
        const T fm = static_cast<T>(f(x));
        x[i] = orig;
        g[i] = (fp - fm) / (T(2) * step);
    }
    return g;
}

/// Norm-wise relative error ‖a−b‖ / max(‖a‖, ‖b‖); 0 when both are ~0.
template <class T>
double relative_error(const std::vector<T>& a, const std::vector<T>& b, double floor = 1e-10) {
    if (a.size() != b.size()) return INFINITY;
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        diff += d * d;
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    const double denom = std::max(std::sqrt(na), std::sqrt(nb));
    if (denom < floor) return std::sqrt(diff) < floor ? 0.0 : INFINITY;
    return std::sqrt(diff) / denom;
}

enum class ErrorNorm {
    PerLeaf,  // worst relative error over leaves
    Joint,    // one relative error over all leaves concatenated
};

/// Autodiff vs central differences for a scalar loss over a set of leaves.
/// `loss` rebuilds the graph from the current leaf values on every call.
template <class T>
double gradient_check(const std::function<Tensor<T>()>& loss, std::vector<Tensor<T>> leaves, T step = T(1e-5),
                      ErrorNorm norm = ErrorNorm::PerLeaf) {
    for (auto& l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();
    }
    {
        Tensor<T> out = loss();
        backward(out);
    }
    double worst = 0;
    std::vector<T> all_analytic, all_numeric;
    for (auto& l : leaves) {
        const std::vector<T> analytic = l.grad().data();
        Tensor<T> numeric = finite_diff_gradient([&](Tensor<T>&) { return loss().item(); }, l, step);
        if (norm == ErrorNorm::Joint) {
            all_analytic.insert(all_analytic.end(), analytic.begin(), analytic.end());
            all_numeric.insert(all_numeric.end(), numeric.data().begin(), numeric.data().end());
        } else {
            worst = std::max(worst, relative_error(analytic, numeric.data()));
        }
    }
    return norm == ErrorNorm::Joint ? relative_error(all_analytic, all_numeric) : worst;
}

}  // namespace tatt
