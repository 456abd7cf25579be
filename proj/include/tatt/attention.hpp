#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tatt/nn.hpp"

namespace tatt {

struct AttentionConfig {
    std::size_t heads = 4;
    std::size_t channels = 64;
    std::size_t d_k = 64;
    std::size_t ffn_hidden = 64;

    void validate() const {
        if (heads == 0 || channels % heads != 0)
            throw ContractError("AttentionConfig: channels " + std::to_string(channels) + " not divisible by heads " +
                                std::to_string(heads));
        if (d_k == 0 || ffn_hidden == 0) throw ContractError("AttentionConfig: d_k and ffn_hidden must be positive");
    }
    std::size_t group() const { return channels / heads; }
};

/// Per-head softmax maps, each [B, queries, keys] (or [queries, keys] unbatched).
template <class T>
struct AttentionWeights {
    std::vector<Tensor<T>> heads;
};

template <class T>
struct AttentionResult {
    Tensor<T> out;
    AttentionWeights<T> weights;
};

/// Sinusoidal table: PE(pos,2i) = sin(pos / 10000^(2i/C)), PE(pos,2i+1) = cos(·).
template <class T>
Tensor<T> fixed_positional_encoding(std::size_t length, std::size_t channels) {
    if (channels % 2 != 0) throw DimensionError("fixed_positional_encoding: channels must be even, got " + std::to_string(channels));
    Tensor<T> pe(Shape{length, channels});
    for (std::size_t pos = 0; pos < length; ++pos)
        for (std::size_t i = 0; i < channels; i += 2) {
            const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / channels);
            pe[pos * channels + i] = static_cast<T>(std::sin(angle));
            pe[pos * channels + i + 1] = static_cast<T>(std::cos(angle));
        }
    return pe;
}

template <class T>
void init_recurrent_positional_encoding(ParamStore<T>& ps, Rng& rng, const std::string& path, std::size_t h,
                                        std::size_t w, std::size_t c, bool bidirectional = false) {
    ps.add(path + "/param", nn::fan_in_uniform<T>(rng, {h, w, c}, c));
    nn::init_gated_cell(ps, rng, path + "/fwd", c);
    if (bidirectional) nn::init_gated_cell(ps, rng, path + "/bwd", c);
}

/// Learnable [h,w,c] table passed through a left→right gated scan along each
/// row (plus a right→left scan when the store holds one). Returns [h,w,c].
template <class T>
Tensor<T> recurrent_positional_encoding(const ParamStore<T>& ps, const std::string& path) {
    const Tensor<T>& p = ps.get(path + "/param");
    auto code = nn::gated_cell_scan(ps, path + "/fwd", p, false);
    if (ps.contains(path + "/bwd/uz")) code = ops::add(code, nn::gated_cell_scan(ps, path + "/bwd", p, true));
    return code;
}

/// One cross-attention head: SM((f_I' Wα)(f_E Wβ)ᵀ / √d_k)(f_E Wγ).
/// Softmax runs over the key (prior) positions for every image query.
/// f_E: [B,l,g] or [l,g]; f_I: [B,hw,g] or [hw,g]; W*: [g, d_k].
template <class T>
AttentionResult<T> cross_attention_head(const Tensor<T>& f_e, const Tensor<T>& f_i, const Tensor<T>& w_alpha,
                                        const Tensor<T>& w_beta, const Tensor<T>& w_gamma) {
    if (f_e.rank() != f_i.rank() || f_e.shape().back() != f_i.shape().back() || w_alpha.rank() != 2 ||
        w_alpha.shape() != w_beta.shape() || w_alpha.shape() != w_gamma.shape() || w_alpha.dim(0) != f_e.shape().back())
        throw dim_error("cross_attention_head", f_e.shape(), f_i.shape());
    const std::size_t d_k = w_alpha.dim(1);
    auto q = ops::matmul_lastdim(f_i, w_alpha);
    auto k = ops::matmul_lastdim(f_e, w_beta);
    auto v = ops::matmul_lastdim(f_e, w_gamma);
    auto scores = ops::scale(ops::bmm(q, k, true), T(1) / std::sqrt(static_cast<T>(d_k)));
    auto attn = ops::softmax_lastdim(scores);
    return {ops::bmm(attn, v), {{attn}}};
}

template <class T>
void init_multi_head_attention(ParamStore<T>& ps, Rng& rng, const std::string& path, const AttentionConfig& cfg) {
    cfg.validate();
    const std::size_t g = cfg.group();
    for (std::size_t i = 0; i < cfg.heads; ++i) {
        const std::string hp = path + "/head" + std::to_string(i);
        ps.add(hp + "/w_alpha", nn::fan_in_uniform<T>(rng, {g, cfg.d_k}, g));
        ps.add(hp + "/w_beta", nn::fan_in_uniform<T>(rng, {g, cfg.d_k}, g));
        ps.add(hp + "/w_gamma", nn::fan_in_uniform<T>(rng, {g, cfg.d_k}, g));
    }
    ps.add(path + "/w_o", nn::fan_in_uniform<T>(rng, {cfg.heads * cfg.d_k, cfg.channels}, cfg.heads * cfg.d_k));
}

/// Channel-split both inputs into `heads` groups, attend per group,
/// concatenate and project by W^o. Queries come from `query_src`, keys and
/// values from `kv_src`.
template <class T>
AttentionResult<T> multi_head_attention(const Tensor<T>& query_src, const Tensor<T>& kv_src, const AttentionConfig& cfg,
                                        const ParamStore<T>& ps, const std::string& path) {
    cfg.validate();
    if (query_src.shape().back() != cfg.channels || kv_src.shape().back() != cfg.channels)
        throw dim_error("multi_head_attention", query_src.shape(), kv_src.shape());
    const std::size_t g = cfg.group();
    std::vector<Tensor<T>> outs;
    AttentionWeights<T> weights;
    for (std::size_t i = 0; i < cfg.heads; ++i) {
        const std::string hp = path + "/head" + std::to_string(i);
        auto r = cross_attention_head(ops::narrow_lastdim(kv_src, i * g, g), ops::narrow_lastdim(query_src, i * g, g),
                                      ps.get(hp + "/w_alpha"), ps.get(hp + "/w_beta"), ps.get(hp + "/w_gamma"));
        outs.push_back(r.out);
        weights.heads.push_back(r.weights.heads[0]);
    }
    auto cat = cfg.heads == 1 ? outs[0] : ops::concat_lastdim(outs);
    return {ops::matmul_lastdim(cat, ps.get(path + "/w_o")), std::move(weights)};
}

/// Multi-head cross attention: image queries f_I' [.., hw, c] over prior keys f_E [.., l, c].
template <class T>
AttentionResult<T> multi_head_cross_attention(const Tensor<T>& f_e, const Tensor<T>& f_i, const AttentionConfig& cfg,
                                              const ParamStore<T>& ps, const std::string& path) {
    return multi_head_attention(f_i, f_e, cfg, ps, path);
}

template <class T>
Tensor<T> multi_head_self_attention(const Tensor<T>& x, const AttentionConfig& cfg, const ParamStore<T>& ps,
                                    const std::string& path) {
    return multi_head_attention(x, x, cfg, ps, path).out;
}

template <class T>
void init_feed_forward(ParamStore<T>& ps, Rng& rng, const std::string& path, std::size_t c, std::size_t hidden) {
    nn::init_linear(ps, rng, path + "/fc1", c, hidden);
    nn::init_linear(ps, rng, path + "/fc2", hidden, c);
}

/// Position-wise two-layer network with rectification; no residual here.
template <class T>
Tensor<T> feed_forward_network(const Tensor<T>& x, const ParamStore<T>& ps, const std::string& path) {
    return nn::linear_layer(ps, path + "/fc2", ops::relu(nn::linear_layer(ps, path + "/fc1", x)));
}

}  // namespace tatt
