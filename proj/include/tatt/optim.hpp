#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tatt/nn.hpp"

namespace tatt {

struct AdamConfig {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

template <class T>
struct AdamState {
    std::uint64_t t = 0;
    std::map<std::string, std::vector<T>> m, v;

    bool operator==(const AdamState& o) const { return t == o.t && m == o.m && v == o.v; }
};

/// Bias-corrected Adam over every trainable parameter in sorted path order.
/// All gradients are checked before any parameter is touched.
template <class T>
void adam_step(ParamStore<T>& ps, AdamState<T>& st, double lr, const AdamConfig& cfg = {}) {
    for (const auto& [path, e] : ps.entries())
        if (e.trainable && !e.tensor.has_grad())
            throw ContractError("adam_step: no gradient for trainable parameter " + path);
    ++st.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
    for (auto& [path, e] : ps.entries()) {
        if (!e.trainable) continue;
        auto& p = e.tensor.data();
        const auto& g = e.tensor.grad_buffer();
        auto& m = st.m[path];
        auto& v = st.v[path];
        if (m.size() != p.size()) m.assign(p.size(), T(0));
        if (v.size() != p.size()) v.assign(p.size(), T(0));
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            p[i] = static_cast<T>(p[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps));
        }
    }
}

}  // namespace tatt
