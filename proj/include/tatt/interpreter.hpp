#pragma once

#include <algorithm>
#include <string>

#include "tatt/attention.hpp"

namespace tatt {

inline constexpr std::size_t kAlphabetSize = 37;
inline constexpr std::size_t kBlank = 36;

/// Sequence of categorical rows [.., l, |A|] predicted by the prior generator.
template <class T>
struct TextPrior {
    Tensor<T> probs;

    std::size_t length() const { return probs.dim(probs.rank() - 2); }

    /// Throws ContractError unless every row is nonnegative and sums to 1.
    void validate(double tol = 1e-5) const {
        if (probs.rank() < 2) throw DimensionError("TextPrior: expected [.., l, |A|], got " + shape_str(probs.shape()));
        const std::size_t a = probs.shape().back(), rows = probs.size() / a;
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0;
            for (std::size_t j = 0; j < a; ++j) {
                const T v = probs[r * a + j];
                if (v < T(0)) throw ContractError("TextPrior: negative probability in row " + std::to_string(r));
                s += v;
            }
            if (std::abs(s - 1.0) > tol)
                throw ContractError("TextPrior: row " + std::to_string(r) + " sums to " + std::to_string(s));
        }
    }
};

template <class T>
struct EncodedPrior {
    Tensor<T> f_e;  // [.., l, c]
};

template <class T>
struct TPMap {
    Tensor<T> map;  // [.., h, w, c]
};

struct InterpreterConfig {
    AttentionConfig attention;
    std::size_t seq_len = 16;
    std::size_t alphabet = kAlphabetSize;
    std::size_t feat_h = 16, feat_w = 64;
    std::size_t encoder_layers = 1;
    std::size_t decoder_layers = 1;
    bool rpe_bidirectional = false;
};

template <class T>
void init_interpreter(ParamStore<T>& ps, Rng& rng, const std::string& path, const InterpreterConfig& cfg) {
    const std::size_t c = cfg.attention.channels;
    nn::init_linear(ps, rng, path + "/enc/in_proj", cfg.alphabet, c);
    for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
        const std::string lp = path + "/enc/layer" + std::to_string(i);
        init_multi_head_attention(ps, rng, lp + "/msa", cfg.attention);
        nn::init_layer_norm(ps, lp + "/ln1", c);
        init_feed_forward(ps, rng, lp + "/ffn", c, cfg.attention.ffn_hidden);
        nn::init_layer_norm(ps, lp + "/ln2", c);
    }
    init_recurrent_positional_encoding(ps, rng, path + "/dec/rpe", cfg.feat_h, cfg.feat_w, c, cfg.rpe_bidirectional);
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
        const std::string lp = path + "/dec/layer" + std::to_string(i);
        init_multi_head_attention(ps, rng, lp + "/mca", cfg.attention);
        nn::init_layer_norm(ps, lp + "/ln1", c);
        init_feed_forward(ps, rng, lp + "/ffn", c, cfg.attention.ffn_hidden);
        nn::init_layer_norm(ps, lp + "/ln2", c);
    }
}

namespace detail {
template <class T>
Tensor<T> ln(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x) {
    return nn::layer_norm(x, ps.get(path + "/gain"), ps.get(path + "/bias"));
}
}  // namespace detail

/// Projects the prior to c channels, adds the sinusoidal table, then runs
/// post-norm self-attention + FFN layers. Output [.., l, c].
template <class T>
EncodedPrior<T> encode_prior(const TextPrior<T>& prior, const ParamStore<T>& ps, const std::string& path,
                             const InterpreterConfig& cfg) {
    prior.validate();
    const bool was_batched = prior.probs.rank() == 3;
    Tensor<T> p = nn::detail::batched(prior.probs, 2);
    const std::size_t l = p.dim(1), c = cfg.attention.channels;
    auto x = nn::linear_layer(ps, path + "/enc/in_proj", p);
    x = ops::add_leading(x, fixed_positional_encoding<T>(l, c));
    for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
        const std::string lp = path + "/enc/layer" + std::to_string(i);
        x = detail::ln(ps, lp + "/ln1", ops::add(x, multi_head_self_attention(x, cfg.attention, ps, lp + "/msa")));
        x = detail::ln(ps, lp + "/ln2", ops::add(x, feed_forward_network(x, ps, lp + "/ffn")));
    }
    return {nn::detail::unbatched(x, was_batched)};
}

template <class T>
struct DecodeResult {
    TPMap<T> tp_map;
    AttentionWeights<T> weights;  // per head [B, hw, l]
};

/// Adds the recurrent positional code to f_I, lets every spatial position
/// attend over the encoded prior, refines with FFN and reshapes to [.., h, w, c].
template <class T>
DecodeResult<T> decode_to_tp_map(const EncodedPrior<T>& enc, const Tensor<T>& f_i_in, const ParamStore<T>& ps,
                                 const std::string& path, const InterpreterConfig& cfg) {
    const bool was_batched = f_i_in.rank() == 4;
    Tensor<T> f_i = nn::detail::batched(f_i_in);
    Tensor<T> f_e = nn::detail::batched(enc.f_e, 2);
    if (f_i.dim(3) != f_e.dim(2) || f_i.dim(0) != f_e.dim(0)) throw dim_error("decode_to_tp_map", f_e.shape(), f_i.shape());
    const std::size_t B = f_i.dim(0), h = f_i.dim(1), w = f_i.dim(2), c = f_i.dim(3);
    auto f_i_pos = ops::add_leading(f_i, recurrent_positional_encoding(ps, path + "/dec/rpe"));
    Tensor<T> y = ops::reshape(f_i_pos, Shape{B, h * w, c});
    AttentionWeights<T> weights;
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
        const std::string lp = path + "/dec/layer" + std::to_string(i);
        auto mca = multi_head_cross_attention(f_e, y, cfg.attention, ps, lp + "/mca");
        weights = std::move(mca.weights);
        y = detail::ln(ps, lp + "/ln1", mca.out);
        y = detail::ln(ps, lp + "/ln2", ops::add(y, feed_forward_network(y, ps, lp + "/ffn")));
    }
    auto map = ops::reshape(y, Shape{B, h, w, c});
    for (auto& a : weights.heads) a = nn::detail::unbatched(a, was_batched);
    return {{nn::detail::unbatched(map, was_batched)}, std::move(weights)};
}

/// Mean over heads of the attention paid to prior position `char_index`,
/// as an [h,w] map min-max normalized to [0,1] (constant maps -> all zeros).
template <class T>
Tensor<T> attention_heatmap_extract(const AttentionWeights<T>& weights, std::size_t char_index, std::size_t h,
                                    std::size_t w, std::size_t sample = 0, bool normalize = true) {
    if (weights.heads.empty()) throw ContractError("attention_heatmap_extract: no heads");
    const Tensor<T>& a0 = weights.heads[0];
    const std::size_t l = a0.shape().back(), hw = a0.dim(a0.rank() - 2);
    if (char_index >= l) throw BoundsError("attention_heatmap_extract: char index " + std::to_string(char_index) + " >= l = " + std::to_string(l));
    if (hw != h * w) throw DimensionError("attention_heatmap_extract: " + std::to_string(hw) + " queries is not " + std::to_string(h) + "x" + std::to_string(w));
    const std::size_t batch = a0.rank() == 3 ? a0.dim(0) : 1;
    if (sample >= batch) throw BoundsError("attention_heatmap_extract: sample index out of range");
    Tensor<T> map(Shape{h, w});
    for (const auto& a : weights.heads)
        for (std::size_t p = 0; p < hw; ++p) map[p] += a[(sample * hw + p) * l + char_index];
    for (auto& v : map.data()) v /= static_cast<T>(weights.heads.size());
    if (!normalize) return map;
    const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
    const T mn = *lo, range = *hi - *lo;
    for (auto& v : map.data()) v = range > T(0) ? (v - mn) / range : T(0);
    return map;
}

}  // namespace tatt
