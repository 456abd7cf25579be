#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "tatt/image.hpp"
#include "tatt/interpreter.hpp"

namespace tatt {

struct NetworkConfig {
    std::size_t lr_h = 16, lr_w = 64;
    std::size_t scale = 2;
    std::size_t channels = 64;
    std::size_t tpgb = 5;
    std::size_t heads = 4;
    std::size_t d_k = 64;
    std::size_t ffn_hidden = 64;
    std::size_t seq_len = 16;
    std::size_t alphabet = kAlphabetSize;
    std::size_t tpg_channels = 32;
    std::size_t encoder_layers = 1, decoder_layers = 1;
    bool rpe_bidirectional = false;

    /// 16×64 LR input, c = 64, 4 heads, d_k = 64, five guided blocks.
    static NetworkConfig paper() { return {}; }

    /// Desk-scale training configuration.
    static NetworkConfig desk() {
        NetworkConfig c;
        c.channels = 16;
        c.heads = 2;
        c.d_k = 16;
        c.ffn_hidden = 32;
        return c;
    }

    /// Tiny geometry for full-network finite-difference checks.
    static NetworkConfig mini() {
        NetworkConfig c;
        c.lr_h = 4, c.lr_w = 8, c.channels = 8, c.heads = 2, c.d_k = 8, c.ffn_hidden = 8, c.seq_len = 4;
        c.tpg_channels = 4;
        return c;
    }

    std::size_t hr_h() const { return lr_h * scale; }
    std::size_t hr_w() const { return lr_w * scale; }
    std::size_t step_stride() const { return lr_w / seq_len; }

    void validate() const {
        if (lr_w % 4 != 0) throw ContractError("NetworkConfig: width must be divisible by 4");
        if (lr_h % 4 != 0) throw ContractError("NetworkConfig: height must be divisible by 4");
        if (seq_len == 0 || lr_w % seq_len != 0 || step_stride() % 2 != 0)
            throw ContractError("NetworkConfig: width / seq_len must be an even integer");
        if (heads == 0 || channels % heads != 0) throw ContractError("NetworkConfig: channels not divisible by heads");
        if (channels % 2 != 0) throw ContractError("NetworkConfig: channels must be even");
        if (alphabet != kAlphabetSize) throw ContractError("NetworkConfig: alphabet must have 37 classes");
        if (scale == 0 || tpgb == 0) throw ContractError("NetworkConfig: scale and block count must be positive");
    }

    InterpreterConfig interpreter() const {
        InterpreterConfig ic;
        ic.attention = {heads, channels, d_k, ffn_hidden};
        ic.seq_len = seq_len;
        ic.alphabet = alphabet;
        ic.feat_h = lr_h, ic.feat_w = lr_w;
        ic.encoder_layers = encoder_layers, ic.decoder_layers = decoder_layers;
        ic.rpe_bidirectional = rpe_bidirectional;
        return ic;
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NetworkConfig, lr_h, lr_w, scale, channels, tpgb, heads, d_k, ffn_hidden,
                                                seq_len, alphabet, tpg_channels, encoder_layers, decoder_layers,
                                                rpe_bidirectional)

/// Parameter prefixes.
namespace paths {
inline const std::string tpg = "tpg";
inline const std::string feature = "feature";
inline const std::string interpreter = "interpreter";
inline const std::string upsample = "upsample";
inline std::string tpgb(std::size_t i) { return "tpgb" + std::to_string(i); }
}  // namespace paths

template <class T>
void init_text_prior_generator(ParamStore<T>& ps, Rng& rng, const std::string& path, const NetworkConfig& cfg) {
    const std::size_t t = cfg.tpg_channels;
    nn::init_conv(ps, rng, path + "/conv1", 3, 3, 3, t);
    nn::init_conv(ps, rng, path + "/conv2", 3, 3, t, t);
    nn::init_conv(ps, rng, path + "/conv3", 1, 3, (cfg.lr_h / 4) * t, t);
    nn::init_linear(ps, rng, path + "/classifier", t, cfg.alphabet);
}

/// Makes the untrained network a nearest-neighbour upsampler: feature
/// channels 0..2 copy the input colours, the sub-pixel conv spreads each of
/// them over its r×r block and ignores the other channels, and the TP map
/// enters through a zero final layer-norm gain.
template <class T>
void init_nearest_start(ParamStore<T>& ps, const NetworkConfig& cfg) {
    const std::size_t c = cfg.channels, r = cfg.scale, out = r * r * 3;
    if (c < 3) return;
    auto& feat = ps.get(paths::feature + "/conv9/kernel").data();
    for (std::size_t tap = 0; tap < 81 * 3; ++tap)
        for (std::size_t co = 0; co < 3; ++co) feat[tap * c + co] = T(0);
    for (std::size_t k = 0; k < 3; ++k) feat[((4 * 9 + 4) * 3 + k) * c + k] = T(1);
    auto& up = ps.get(paths::upsample + "/conv/kernel").data();
    std::fill(up.begin(), up.end(), T(0));
    const auto src = nn::detail::shuffle_index(1, 1, 1, 3, r);
    for (std::size_t q = 0; q < src.size(); ++q) up[((1 * 3 + 1) * c + q % 3) * out + src[q]] = T(1);
    const auto ic = cfg.interpreter();
    if (ic.decoder_layers > 0) {
        auto& gain = ps.get(paths::interpreter + "/dec/layer" + std::to_string(ic.decoder_layers - 1) + "/ln2/gain").data();
        std::fill(gain.begin(), gain.end(), T(0));
    }
}

/// Deterministic initialization: fan-in uniform weights, zero biases,
/// unit layer-norm gains, then the nearest-neighbour start.
template <class T>
ParamStore<T> init_params(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore<T> ps;
    Rng rng(seed);
    init_text_prior_generator(ps, rng, paths::tpg, cfg);
    nn::init_conv(ps, rng, paths::feature + "/conv9", 9, 9, 3, cfg.channels);
    init_interpreter(ps, rng, paths::interpreter, cfg.interpreter());
    for (std::size_t i = 0; i < cfg.tpgb; ++i) nn::init_srb(ps, rng, paths::tpgb(i) + "/srb", cfg.channels);
    nn::init_conv(ps, rng, paths::upsample + "/conv", 3, 3, cfg.channels, cfg.scale * cfg.scale * 3);
    init_nearest_start(ps, cfg);
    return ps;
}

namespace detail {
template <class T>
void require_image(const Tensor<T>& x, std::size_t h, std::size_t w, const char* what) {
    const bool ok = (x.rank() == 4 || x.rank() == 3) && x.dim(x.rank() - 3) == h && x.dim(x.rank() - 2) == w &&
                    x.dim(x.rank() - 1) == 3;
    if (!ok) throw dim_error(what, x.shape(), Shape{h, w, 3});
}
}  // namespace detail

/// Toy recognizer logits: conv → pool 2×2 → conv → pool 2×(s/2) → fold the
/// remaining height into channels → 1×3 conv along steps → classifier.
/// Returns [B, l, |A|] logits. Images at a larger geometry than the LR
/// input are box-averaged down first.
template <class T>
Tensor<T> text_prior_logits(const Tensor<T>& img_in, const ParamStore<T>& ps, const NetworkConfig& cfg,
                            const std::string& path = paths::tpg) {
    Tensor<T> img = nn::detail::batched(img_in);
    if (img.rank() == 4 && img.dim(1) != cfg.lr_h && img.dim(1) % cfg.lr_h == 0 && img.dim(1) / cfg.lr_h == img.dim(2) / cfg.lr_w)
        img = ops::avg_pool2d(img, img.dim(1) / cfg.lr_h, img.dim(1) / cfg.lr_h);
    detail::require_image(img, cfg.lr_h, cfg.lr_w, "text_prior_generator");
    const std::size_t B = img.dim(0), t = cfg.tpg_channels, l = cfg.seq_len;
    auto x = ops::relu(nn::conv_layer(ps, path + "/conv1", img));
    x = ops::avg_pool2d(x, 2, 2);
    x = ops::relu(nn::conv_layer(ps, path + "/conv2", x));
    x = ops::avg_pool2d(x, 2, cfg.step_stride() / 2);  // [B, h/4, l, t]
    x = ops::swap_hw(x);                                // [B, l, h/4, t]
    x = ops::reshape(x, Shape{B, 1, l, (cfg.lr_h / 4) * t});
    x = ops::relu(nn::conv_layer(ps, path + "/conv3", x));
    auto logits = nn::linear_layer(ps, path + "/classifier", ops::reshape(x, Shape{B, l, t}));
    if (img_in.rank() == 3) return ops::reshape(logits, Shape{l, cfg.alphabet});
    return logits;
}

template <class T>
TextPrior<T> generate_text_prior(const Tensor<T>& img, const ParamStore<T>& ps, const NetworkConfig& cfg,
                                 const std::string& path = paths::tpg) {
    return {ops::softmax_lastdim(text_prior_logits(img, ps, cfg, path))};
}

/// 9×9 same-padding convolution to c channels.
template <class T>
Tensor<T> extract_image_feature(const Tensor<T>& y, const ParamStore<T>& ps, const NetworkConfig& cfg) {
    detail::require_image(y, cfg.lr_h, cfg.lr_w, "extract_image_feature");
    return nn::conv_layer(ps, paths::feature + "/conv9", y);
}

/// (f + f_TM) → sequential-recurrent block. A missing TP map skips the addition.
template <class T>
Tensor<T> tpgb_forward(const std::optional<TPMap<T>>& tp_map, const Tensor<T>& f, const ParamStore<T>& ps,
                       std::size_t block) {
    Tensor<T> in = f;
    if (tp_map) {
        if (tp_map->map.shape() != f.shape()) throw dim_error("tpgb_forward", tp_map->map.shape(), f.shape());
        in = ops::add(f, tp_map->map);
    }
    return nn::srb_forward(ps, paths::tpgb(block) + "/srb", in);
}

template <class T>
struct SrOutput {
    Tensor<T> sr;                           // [.., rh, rw, 3], unclamped
    std::optional<TextPrior<T>> prior;      // absent when the TP branch is off
    std::optional<TPMap<T>> tp_map;
    AttentionWeights<T> attention;
    Tensor<T> feature;                      // f_I
};

struct ForwardOptions {
    bool use_tp = true;
};

/// LR image → SR image: prior generator → interpreter → guided blocks →
/// conv to r²·3 channels → pixel shuffle.
template <class T>
SrOutput<T> reconstruct_sr(const Tensor<T>& y, const ParamStore<T>& ps, const NetworkConfig& cfg,
                           ForwardOptions opt = {}) {
    detail::require_image(y, cfg.lr_h, cfg.lr_w, "reconstruct_sr");
    SrOutput<T> out;
    out.feature = extract_image_feature(y, ps, cfg);
    if (opt.use_tp) {
        const auto ic = cfg.interpreter();
        out.prior = generate_text_prior(y, ps, cfg);
        auto enc = encode_prior(*out.prior, ps, paths::interpreter, ic);
        auto dec = decode_to_tp_map(enc, out.feature, ps, paths::interpreter, ic);
        out.tp_map = std::move(dec.tp_map);
        out.attention = std::move(dec.weights);
    }
    Tensor<T> f = out.feature;
    for (std::size_t i = 0; i < cfg.tpgb; ++i) f = tpgb_forward(out.tp_map, f, ps, i);
    out.sr = nn::pixel_shuffle(nn::conv_layer(ps, paths::upsample + "/conv", f), cfg.scale);
    return out;
}

}  // namespace tatt
