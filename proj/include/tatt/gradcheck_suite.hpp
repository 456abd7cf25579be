#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tatt/gradcheck.hpp"
#include "tatt/losses.hpp"
#include "tatt/network.hpp"
#include "tatt/train.hpp"

namespace tatt {

struct GradCheckResult {
    std::string name;
    double error = 0;
    bool pass = false;
};

namespace gradsuite {

using D = double;

inline Tensor<D> uniform(Rng& rng, Shape s, double lo = -1, double hi = 1) {
    Tensor<D> t(std::move(s));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Values with magnitude in [0.2, 1] so kinks at zero stay out of reach.
inline Tensor<D> off_zero(Rng& rng, Shape s) {
    Tensor<D> t(std::move(s));
    for (auto& v : t.data()) v = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.2, 1.0);
    return t;
}

/// Scalar probe Σ y ⊙ R with a fixed pseudo-random R, so every output
/// element contributes with a distinct weight.
inline Tensor<D> probe(const Tensor<D>& y) {
    Rng rng(0xC0FFEE + y.size());
    return ops::sum(ops::mul(y, uniform(rng, y.shape())));
}

inline std::vector<Tensor<D>> leaves_of(ParamStore<D>& ps) {
    std::vector<Tensor<D>> out;
    for (auto& [path, e] : ps.entries()) out.push_back(e.tensor);
    return out;
}

/// Identity-initialized residual branches, the zero TP-map gain and the
/// sparse nearest-neighbour kernels would leave much of the network with
/// zero gradient.
inline void activate_residuals(ParamStore<D>& ps, Rng& rng) {
    for (auto& [path, e] : ps.entries()) {
        if (path.find("/srb/conv2/kernel") != std::string::npos || path == paths::upsample + "/conv/kernel")
            for (auto& v : e.tensor.data()) v = rng.uniform(-0.2, 0.2);
        if (path.find("/dec/") != std::string::npos && path.find("/ln2/gain") != std::string::npos)
            for (auto& v : e.tensor.data()) v = rng.uniform(0.5, 1.5);
    }
}

struct Case {
    std::string name;
    std::function<double()> run;
};

inline std::vector<Tensor<D>> with(std::vector<Tensor<D>> a, const std::vector<Tensor<D>>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

inline std::vector<Case> cases() {
    std::vector<Case> cs;
    auto add = [&](std::string name, std::function<double()> run) { cs.push_back({std::move(name), std::move(run)}); };
    auto unary = [&](std::string name, std::function<Tensor<D>(const Tensor<D>&)> f, double lo, double hi) {
        add(name, [f, lo, hi] {
            Rng rng(11);
            auto x = uniform(rng, {3, 4}, lo, hi);
            return gradient_check<D>([=] { return probe(f(x)); }, {x}, 1e-6);
        });
    };
    auto binary = [&](std::string name, std::function<Tensor<D>(const Tensor<D>&, const Tensor<D>&)> f) {
        add(name, [f] {
            Rng rng(12);
            auto a = uniform(rng, {3, 4}), b = uniform(rng, {3, 4}, 0.5, 1.5);
            return gradient_check<D>([=] { return probe(f(a, b)); }, {a, b}, 1e-6);
        });
    };

    binary("add", [](auto& a, auto& b) { return ops::add(a, b); });
    binary("sub", [](auto& a, auto& b) { return ops::sub(a, b); });
    binary("mul", [](auto& a, auto& b) { return ops::mul(a, b); });
    binary("div", [](auto& a, auto& b) { return ops::div(a, b); });
    unary("scale", [](auto& x) { return ops::scale(x, 2.5); }, -1, 1);
    unary("add_scalar", [](auto& x) { return ops::add_scalar(x, 0.7); }, -1, 1);
    unary("neg", [](auto& x) { return ops::neg(x); }, -1, 1);
    unary("square", [](auto& x) { return ops::square(x); }, -1, 1);
    unary("exp", [](auto& x) { return ops::exp(x); }, -1, 1);
    unary("log", [](auto& x) { return ops::log(x); }, 0.5, 2);
    unary("sqrt", [](auto& x) { return ops::sqrt(x); }, 0.5, 2);
    unary("tanh", [](auto& x) { return ops::tanh(x); }, -2, 2);
    unary("sigmoid", [](auto& x) { return ops::sigmoid(x); }, -2, 2);
    add("relu", [] {
        Rng rng(13);
        auto x = off_zero(rng, {3, 4});
        return gradient_check<D>([=] { return probe(ops::relu(x)); }, {x}, 1e-6);
    });
    add("abs", [] {
        Rng rng(14);
        auto x = off_zero(rng, {3, 4});
        return gradient_check<D>([=] { return probe(ops::abs(x)); }, {x}, 1e-6);
    });
    unary("sum", [](auto& x) { return ops::scale(ops::sum(x), 1.3); }, -1, 1);
    unary("mean", [](auto& x) { return ops::scale(ops::mean(x), 1.3); }, -1, 1);
    unary("sum_lastdim", [](auto& x) { return ops::sum_lastdim(x); }, -1, 1);
    unary("broadcast_lastdim", [](auto& x) { return ops::broadcast_lastdim(x, 3); }, -1, 1);
    add("add_lastdim", [] {
        Rng rng(15);
        auto x = uniform(rng, {2, 3, 4}), b = uniform(rng, {4});
        return gradient_check<D>([=] { return probe(ops::add_lastdim(x, b)); }, {x, b}, 1e-6);
    });
    add("mul_lastdim", [] {
        Rng rng(16);
        auto x = uniform(rng, {2, 3, 4}), g = uniform(rng, {4});
        return gradient_check<D>([=] { return probe(ops::mul_lastdim(x, g)); }, {x, g}, 1e-6);
    });
    add("add_leading", [] {
        Rng rng(17);
        auto x = uniform(rng, {2, 3, 4}), p = uniform(rng, {3, 4});
        return gradient_check<D>([=] { return probe(ops::add_leading(x, p)); }, {x, p}, 1e-6);
    });
    unary("reshape", [](auto& x) { return ops::reshape(x, Shape{4, 3}); }, -1, 1);
    unary("transpose", [](auto& x) { return ops::transpose(x); }, -1, 1);
    add("swap_hw", [] {
        Rng rng(18);
        auto x = uniform(rng, {2, 3, 4, 2});
        return gradient_check<D>([=] { return probe(ops::swap_hw(x)); }, {x}, 1e-6);
    });
    unary("gather", [](auto& x) { return ops::gather(x, {0, 5, 5, 11, 2}, Shape{5}); }, -1, 1);
    unary("narrow_lastdim", [](auto& x) { return ops::narrow_lastdim(x, 1, 2); }, -1, 1);
    add("concat_lastdim", [] {
        Rng rng(19);
        auto a = uniform(rng, {2, 3, 2}), b = uniform(rng, {2, 3, 3});
        return gradient_check<D>([=] { return probe(ops::concat_lastdim<D>({a, b})); }, {a, b}, 1e-6);
    });
    add("matmul", [] {
        Rng rng(20);
        auto a = uniform(rng, {3, 4}), b = uniform(rng, {4, 5});
        return gradient_check<D>([=] { return probe(ops::matmul(a, b)); }, {a, b}, 1e-6);
    });
    add("matmul_lastdim", [] {
        Rng rng(21);
        auto a = uniform(rng, {2, 3, 4}), w = uniform(rng, {4, 5});
        return gradient_check<D>([=] { return probe(ops::matmul_lastdim(a, w)); }, {a, w}, 1e-6);
    });
    add("bmm", [] {
        Rng rng(22);
        auto a = uniform(rng, {2, 3, 4}), b = uniform(rng, {2, 4, 5});
        return gradient_check<D>([=] { return probe(ops::bmm(a, b)); }, {a, b}, 1e-6);
    });
    add("bmm_transposed", [] {
        Rng rng(23);
        auto a = uniform(rng, {2, 3, 4}), b = uniform(rng, {2, 5, 4});
        return gradient_check<D>([=] { return probe(ops::bmm(a, b, true)); }, {a, b}, 1e-6);
    });
    unary("softmax_lastdim", [](auto& x) { return ops::softmax_lastdim(x); }, -2, 2);
    unary("log_softmax_lastdim", [](auto& x) { return ops::log_softmax_lastdim(x); }, -2, 2);
    add("sparse_linear", [] {
        Rng rng(24);
        auto x = uniform(rng, {6});
        auto map = std::make_shared<ops::SparseMap<D>>();
        for (std::size_t r = 0; r < 4; ++r) {
            map->add(r, 0.5);
            map->add(r + 2, -0.25 * static_cast<double>(r));
            map->end_row();
        }
        std::shared_ptr<const ops::SparseMap<D>> m = map;
        return gradient_check<D>([=] { return probe(ops::sparse_linear<D>(x, m, Shape{4})); }, {x}, 1e-6);
    });
    add("avg_pool2d", [] {
        Rng rng(25);
        auto x = uniform(rng, {2, 4, 6, 3});
        return gradient_check<D>([=] { return probe(ops::avg_pool2d(x, 2, 3)); }, {x}, 1e-6);
    });

    // convolution and layers
    add("conv2d_same", [] {
        Rng rng(30);
        auto x = uniform(rng, {2, 4, 5, 3}), k = uniform(rng, {3, 3, 3, 2});
        return gradient_check<D>([=] { return probe(nn::conv2d(x, k, nn::Padding::Same)); }, {x, k}, 1e-6);
    });
    add("conv2d_valid", [] {
        Rng rng(31);
        auto x = uniform(rng, {4, 5, 2}), k = uniform(rng, {3, 2, 2, 3});
        return gradient_check<D>([=] { return probe(nn::conv2d(x, k, nn::Padding::Valid)); }, {x, k}, 1e-6);
    });
    add("conv2d_9x9", [] {
        Rng rng(32);
        auto x = uniform(rng, {1, 4, 8, 3}), k = uniform(rng, {9, 9, 3, 2});
        return gradient_check<D>([=] { return probe(nn::conv2d(x, k, nn::Padding::Same)); }, {x, k}, 1e-6);
    });
    add("linear", [] {
        Rng rng(33);
        auto x = uniform(rng, {2, 3, 4}), w = uniform(rng, {4, 5}), b = uniform(rng, {5});
        return gradient_check<D>([=] { return probe(nn::linear(x, w, b)); }, {x, w, b}, 1e-6);
    });
    add("layer_norm", [] {
        Rng rng(34);
        auto x = uniform(rng, {2, 3, 6}), g = uniform(rng, {6}, 0.5, 1.5), b = uniform(rng, {6});
        return gradient_check<D>([=] { return probe(nn::layer_norm(x, g, b)); }, {x, g, b}, 1e-6);
    });
    add("pixel_shuffle", [] {
        Rng rng(35);
        auto x = uniform(rng, {2, 2, 3, 12});
        return gradient_check<D>([=] { return probe(nn::pixel_shuffle(x, 2)); }, {x}, 1e-6);
    });
    add("pixel_unshuffle", [] {
        Rng rng(36);
        auto x = uniform(rng, {2, 4, 6, 3});
        return gradient_check<D>([=] { return probe(nn::pixel_unshuffle(x, 2)); }, {x}, 1e-6);
    });
    for (bool reverse : {false, true})
        add(reverse ? "gated_scan_reverse" : "gated_scan_forward", [reverse] {
            Rng rng(37);
            auto xz = uniform(rng, {2, 3, 5, 4}), xh = uniform(rng, {2, 3, 5, 4});
            auto uz = uniform(rng, {4, 4}, -0.5, 0.5), uh = uniform(rng, {4, 4}, -0.5, 0.5);
            return gradient_check<D>([=] { return probe(nn::gated_scan(xz, xh, uz, uh, reverse)); }, {xz, xh, uz, uh}, 1e-6);
        });
    for (auto axis : {nn::ScanAxis::Width, nn::ScanAxis::Height})
        add(axis == nn::ScanAxis::Width ? "bidirectional_scan_width" : "bidirectional_scan_height", [axis] {
            Rng rng(38);
            ParamStore<D> ps;
            nn::init_bidirectional_scan(ps, rng, "s", 4);
            auto x = uniform(rng, {2, 3, 5, 4});
            return gradient_check<D>([=] { return probe(nn::bidirectional_scan(ps, "s", x, axis)); },
                                     with({x}, leaves_of(ps)), 1e-6);
        });
    add("sequential_recurrent_block", [] {
        Rng rng(39);
        ParamStore<D> ps;
        nn::init_srb(ps, rng, "srb", 4);
        activate_residuals(ps, rng);
        auto x = uniform(rng, {2, 3, 4, 4});
        return gradient_check<D>([=] { return probe(nn::srb_forward(ps, "srb", x)); }, with({x}, leaves_of(ps)), 1e-6);
    });

    // attention and interpreter
    add("cross_attention_head", [] {
        Rng rng(40);
        auto fe = uniform(rng, {2, 3, 4}), fi = uniform(rng, {2, 6, 4});
        auto wa = uniform(rng, {4, 5}), wb = uniform(rng, {4, 5}), wg = uniform(rng, {4, 5});
        return gradient_check<D>([=] { return probe(cross_attention_head(fe, fi, wa, wb, wg).out); }, {fe, fi, wa, wb, wg},
                                 1e-6);
    });
    add("multi_head_cross_attention", [] {
        Rng rng(41);
        AttentionConfig ac{2, 4, 3, 5};
        ParamStore<D> ps;
        init_multi_head_attention(ps, rng, "mca", ac);
        auto fe = uniform(rng, {2, 3, 4}), fi = uniform(rng, {2, 6, 4});
        return gradient_check<D>([=] { return probe(multi_head_cross_attention(fe, fi, ac, ps, "mca").out); },
                                 with({fe, fi}, leaves_of(ps)), 1e-6);
    });
    add("multi_head_self_attention", [] {
        Rng rng(42);
        AttentionConfig ac{2, 4, 3, 5};
        ParamStore<D> ps;
        init_multi_head_attention(ps, rng, "msa", ac);
        auto x = uniform(rng, {2, 3, 4});
        return gradient_check<D>([=] { return probe(multi_head_self_attention(x, ac, ps, "msa")); },
                                 with({x}, leaves_of(ps)), 1e-6);
    });
    add("feed_forward", [] {
        Rng rng(43);
        ParamStore<D> ps;
        init_feed_forward(ps, rng, "ffn", 4, 6);
        auto x = uniform(rng, {2, 3, 4});
        return gradient_check<D>([=] { return probe(feed_forward_network(x, ps, "ffn")); }, with({x}, leaves_of(ps)), 1e-6);
    });
    add("recurrent_positional_encoding", [] {
        Rng rng(44);
        ParamStore<D> ps;
        init_recurrent_positional_encoding(ps, rng, "rpe", 2, 5, 4, true);
        return gradient_check<D>([=] { return probe(recurrent_positional_encoding(ps, "rpe")); }, leaves_of(ps), 1e-6);
    });
    auto interpreter_cfg = [] {
        InterpreterConfig ic;
        ic.attention = {2, 4, 3, 5};
        ic.seq_len = 3, ic.feat_h = 2, ic.feat_w = 3;
        return ic;
    };
    add("prior_encoder", [interpreter_cfg] {
        Rng rng(45);
        const auto ic = interpreter_cfg();
        ParamStore<D> ps;
        init_interpreter(ps, rng, "tpi", ic);
        auto logits = uniform(rng, {2, 3, kAlphabetSize}, -2, 2);
        return gradient_check<D>(
            [=] { return probe(encode_prior(TextPrior<D>{ops::softmax_lastdim(logits)}, ps, "tpi", ic).f_e); },
            with({logits}, leaves_of(ps)), 1e-5);
    });
    add("tp_map_decoder", [interpreter_cfg] {
        Rng rng(46);
        const auto ic = interpreter_cfg();
        ParamStore<D> ps;
        init_interpreter(ps, rng, "tpi", ic);
        auto fe = uniform(rng, {2, 3, 4}), fi = uniform(rng, {2, 2, 3, 4});
        std::vector<Tensor<D>> leaves{fe, fi};
        for (auto& [path, e] : ps.entries())
            if (path.find("/dec/") != std::string::npos) leaves.push_back(e.tensor);
        return gradient_check<D>([=] { return probe(decode_to_tp_map(EncodedPrior<D>{fe}, fi, ps, "tpi", ic).tp_map.map); },
                                 leaves, 1e-6);
    });

    // deformation and losses
    add("apply_deformation", [] {
        Rng rng(50);
        auto x = uniform(rng, {2, 6, 10, 3});
        const std::vector<DeformationSpec> specs{{7.0, 0.2, 1.3}, {-4.0, -0.1, 0.8}};
        return gradient_check<D>([=] { return probe(apply_deformation(x, specs)); }, {x}, 1e-6);
    });
    add("l_sr", [] {
        Rng rng(51);
        auto a = uniform(rng, {2, 4, 4, 3}, 0, 1), b = uniform(rng, {2, 4, 4, 3}, 0, 1);
        return gradient_check<D>([=] { return l_sr(a, b); }, {a, b}, 1e-6);
    });
    add("l_tp", [] {
        Rng rng(52);
        auto la = uniform(rng, {2, 3, 5}, -2, 2), lb = uniform(rng, {2, 3, 5}, -2, 2);
        return gradient_check<D>(
            [=] { return l_tp(TextPrior<D>{ops::softmax_lastdim(la)}, TextPrior<D>{ops::softmax_lastdim(lb)}); }, {la, lb},
            1e-6);
    });
    add("ssim", [] {
        Rng rng(53);
        auto a = uniform(rng, {2, 8, 16, 3}, 0, 1), b = uniform(rng, {2, 8, 16, 3}, 0, 1);
        return gradient_check<D>([=] { return ssim(a, b); }, {a, b}, 1e-6);
    });
    add("tssim", [] {
        Rng rng(54);
        auto a = uniform(rng, {8, 8, 3}, 0, 1), b = uniform(rng, {8, 8, 3}, 0, 1), c = uniform(rng, {8, 8, 3}, 0, 1);
        return gradient_check<D>([=] { return tssim(a, b, c); }, {a, b, c}, 1e-6);
    });
    add("l_tsc", [] {
        Rng rng(55);
        auto hr = uniform(rng, {2, 8, 16, 3}, 0, 1), lr = uniform(rng, {2, 4, 8, 3}, 0, 1);
        auto k = uniform(rng, {3, 3, 3, 12}, -0.3, 0.3);
        const std::vector<DeformationSpec> specs{{6.0, 0.1, 1.2}, {-8.0, 0.25, 0.7}};
        auto forward = [k](const Tensor<D>& y) { return nn::pixel_shuffle(nn::conv2d(y, k), 2); };
        return gradient_check<D>([=] { return l_tsc(hr, lr, forward, specs); }, {lr, k}, 1e-6);
    });
    add("total_loss", [] {
        Rng rng(56);
        auto a = uniform(rng, {3}), b = uniform(rng, {3}), c = uniform(rng, {3});
        return gradient_check<D>(
            [=] { return total_loss<D>(ops::sum(ops::square(a)), ops::sum(ops::exp(b)), ops::sum(ops::tanh(c)), {}); },
            {a, b, c}, 1e-6);
    });
    add("cross_entropy", [] {
        Rng rng(57);
        auto logits = uniform(rng, {2, 3, 5}, -2, 2);
        return gradient_check<D>([=] { return cross_entropy(logits, {0, 4, 2, 1, 1, 3}); }, {logits}, 1e-6);
    });

    // networks at the mini geometry
    add("text_prior_generator", [] {
        const auto cfg = NetworkConfig::mini();
        auto ps = init_params<D>(cfg, 60);
        Rng rng(60);
        auto y = uniform(rng, {2, cfg.lr_h, cfg.lr_w, 3}, 0, 1);
        std::vector<Tensor<D>> leaves{y};
        for (auto& [path, e] : ps.entries())
            if (path.compare(0, 4, "tpg/") == 0) leaves.push_back(e.tensor);
        return gradient_check<D>([=] { return probe(generate_text_prior(y, ps, cfg).probs); }, leaves, 1e-6);
    });
    add("end_to_end_network", [] {
        const auto cfg = NetworkConfig::mini();
        auto ps = init_params<D>(cfg, 61);
        Rng rng(61);
        activate_residuals(ps, rng);
        auto y = uniform(rng, {2, cfg.lr_h, cfg.lr_w, 3}, 0, 1);
        auto x = uniform(rng, {2, cfg.hr_h(), cfg.hr_w(), 3}, 0, 1);
        const std::vector<DeformationSpec> specs{{5.0, 0.1, 1.1}, {-7.0, -0.2, 0.9}};
        // Stop-gradient target: held fixed so the numeric side sees the same function.
        TextPrior<D> target;
        {
            NoGradGuard ng;
            target = generate_text_prior(x, ps, cfg);
        }
        auto loss = [=] {
            auto out = reconstruct_sr(y, ps, cfg);
            auto forward = [&](const Tensor<D>& in) { return reconstruct_sr(in, ps, cfg).sr; };
            auto tsc = l_tsc_from_triplet(apply_deformation(out.sr, specs), forward(apply_deformation(y, specs)),
                                          apply_deformation(x, specs));
            return total_loss(l_sr(out.sr, x), std::optional<Tensor<D>>(l_tp(*out.prior, target)),
                              std::optional<Tensor<D>>(tsc), {});
        };
        return gradient_check<D>(loss, with({y}, leaves_of(ps)), 1e-5, ErrorNorm::Joint);
    });
    add("end_to_end_first_layer", [] {
        const auto cfg = NetworkConfig::mini();
        auto ps = init_params<D>(cfg, 62);
        Rng rng(62);
        activate_residuals(ps, rng);
        auto y = uniform(rng, {2, cfg.lr_h, cfg.lr_w, 3}, 0, 1);
        auto x = uniform(rng, {2, cfg.hr_h(), cfg.hr_w(), 3}, 0, 1);
        return gradient_check<D>([=] { return l_sr(reconstruct_sr(y, ps, cfg).sr, x); },
                                 {ps.get(paths::feature + "/conv9/kernel")}, 1e-6);
    });
    return cs;
}

}  // namespace gradsuite

/// Every differentiable operation and the full mini network against central
/// finite differences at 64-bit. `on_result` sees each check as it finishes.
inline std::vector<GradCheckResult> run_gradient_suite(double tolerance = 1e-4,
                                                       const std::function<void(const GradCheckResult&)>& on_result = {}) {
    std::vector<GradCheckResult> out;
    for (const auto& c : gradsuite::cases()) {
        const double err = c.run();
        out.push_back({c.name, err, err < tolerance});
        if (on_result) on_result(out.back());
    }
    return out;
}

}  // namespace tatt
