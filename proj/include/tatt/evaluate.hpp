#pragma once

#include <json.hpp>

#include "tatt/train.hpp"

namespace tatt {

struct EvalReport {
    std::size_t samples = 0, deformed_samples = 0;
    double psnr = 0, ssim = 0;
    double psnr_bicubic = 0, ssim_bicubic = 0;
    double char_acc = 0, word_acc = 0;
    double char_acc_bicubic = 0, word_acc_bicubic = 0;
    double char_acc_hr = 0, word_acc_hr = 0;  // recognizer ceiling
    double char_acc_deformed = 0, char_acc_deformed_bicubic = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalReport, samples, deformed_samples, psnr, ssim, psnr_bicubic, ssim_bicubic, char_acc,
                                   word_acc, char_acc_bicubic, word_acc_bicubic, char_acc_hr, word_acc_hr, char_acc_deformed,
                                   char_acc_deformed_bicubic)

struct EvalOptions {
    bool use_tp = true;
    std::size_t batch = 16;
};

/// Per-step argmax of the frozen recognizer; images of any integer multiple
/// of the LR geometry are box-averaged first.
template <class T>
std::vector<std::vector<std::size_t>> recognize(const ParamStore<T>& ps, const NetworkConfig& net, const Tensor<T>& images) {
    if (!ps.contains(kRecognizerPath + "/classifier/w"))
        throw ContractError("recognize: parameters carry no recognizer snapshot (run prior pretraining first)");
    NoGradGuard ng;
    const auto logits = text_prior_logits(images.rank() == 3 ? nn::detail::batched(images) : images, ps, net, kRecognizerPath);
    const std::size_t B = logits.dim(0), l = logits.dim(1), a = logits.dim(2);
    std::vector<std::vector<std::size_t>> out(B, std::vector<std::size_t>(l));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < l; ++s) {
            const T* row = logits.ptr() + (b * l + s) * a;
            out[b][s] = static_cast<std::size_t>(std::max_element(row, row + a) - row);
        }
    return out;
}

struct Recognition {
    std::size_t chars = 0, correct = 0, words = 0, words_correct = 0;
    double char_acc() const { return chars ? static_cast<double>(correct) / chars : 0.0; }
    double word_acc() const { return words ? static_cast<double>(words_correct) / words : 0.0; }
};

/// Character hits are counted on steps whose target is a character; a word
/// is correct when the decoded non-blank sequence equals the label.
inline void score_recognition(Recognition& r, const std::vector<std::size_t>& pred, const std::string& label,
                              const std::vector<std::size_t>& targets) {
    for (std::size_t s = 0; s < targets.size(); ++s) {
        if (targets[s] == kBlank) continue;
        ++r.chars;
        r.correct += pred[s] == targets[s];
    }
    ++r.words;
    r.words_correct += glyph::decode_steps(pred) == label;
}

/// PSNR/SSIM against HR and recognizer accuracy on SR outputs, bicubic
/// upsampled LR (baseline) and HR (ceiling).
template <class T>
EvalReport evaluate(const ParamStore<T>& ps, const NetworkConfig& net, const std::vector<glyph::GlyphSample>& samples,
                    const EvalOptions& opt = {}) {
    if (samples.empty()) throw ContractError("evaluate: empty split");
    NoGradGuard ng;
    const glyph::Geometry geo{net.hr_h(), net.hr_w(), net.scale, net.seq_len};
    EvalReport rep;
    Recognition sr_rec, bic_rec, hr_rec, sr_def, bic_def;
    for (std::size_t i = 0; i < samples.size(); i += opt.batch) {
        std::vector<const glyph::GlyphSample*> b;
        for (std::size_t k = i; k < std::min(samples.size(), i + opt.batch); ++k) b.push_back(&samples[k]);
        const auto lr = stack_field<T>(b, &glyph::GlyphSample::lr);
        const auto hr = stack_field<T>(b, &glyph::GlyphSample::hr);
        const auto sr = image::clamp01(reconstruct_sr(lr, ps, net, {opt.use_tp}).sr);
        const auto bic = image::clamp01(image::bicubic_upsample(lr, net.scale));
        const auto p_sr = recognize(ps, net, sr), p_bic = recognize(ps, net, bic), p_hr = recognize(ps, net, hr);
        for (std::size_t k = 0; k < b.size(); ++k) {
            const auto h = image::unstack(hr, k), s = image::unstack(sr, k), c = image::unstack(bic, k);
            rep.psnr += psnr(s, h);
            rep.psnr_bicubic += psnr(c, h);
            rep.ssim += ssim(s, h).item();
            rep.ssim_bicubic += ssim(c, h).item();
            const auto targets = b[k]->targets(geo);
            score_recognition(sr_rec, p_sr[k], b[k]->label, targets);
            score_recognition(bic_rec, p_bic[k], b[k]->label, targets);
            score_recognition(hr_rec, p_hr[k], b[k]->label, targets);
            if (!b[k]->deform.is_identity()) {
                ++rep.deformed_samples;
                score_recognition(sr_def, p_sr[k], b[k]->label, targets);
                score_recognition(bic_def, p_bic[k], b[k]->label, targets);
            }
        }
    }
    const double n = static_cast<double>(samples.size());
    rep.samples = samples.size();
    rep.psnr /= n, rep.psnr_bicubic /= n, rep.ssim /= n, rep.ssim_bicubic /= n;
    rep.char_acc = sr_rec.char_acc(), rep.word_acc = sr_rec.word_acc();
    rep.char_acc_bicubic = bic_rec.char_acc(), rep.word_acc_bicubic = bic_rec.word_acc();
    rep.char_acc_hr = hr_rec.char_acc(), rep.word_acc_hr = hr_rec.word_acc();
    rep.char_acc_deformed = sr_def.char_acc(), rep.char_acc_deformed_bicubic = bic_def.char_acc();
    return rep;
}

/// Mean L_TSC over samples, each with its own D drawn in order from
/// Rng(eval_seed).
template <class T>
double heldout_tsc(const ParamStore<T>& ps, const NetworkConfig& net, const std::vector<glyph::GlyphSample>& samples,
                   std::uint64_t eval_seed, const EvalOptions& opt = {}) {
    if (samples.empty()) throw ContractError("heldout_tsc: empty split");
    NoGradGuard ng;
    Rng rng(eval_seed);
    double total = 0;
    for (std::size_t i = 0; i < samples.size(); i += opt.batch) {
        std::vector<const glyph::GlyphSample*> b;
        std::vector<DeformationSpec> specs;
        for (std::size_t k = i; k < std::min(samples.size(), i + opt.batch); ++k) {
            b.push_back(&samples[k]);
            specs.push_back(DeformationSpec::sample(rng));
        }
        const auto lr = stack_field<T>(b, &glyph::GlyphSample::lr);
        const auto hr = stack_field<T>(b, &glyph::GlyphSample::hr);
        auto forward = [&](const Tensor<T>& y) { return reconstruct_sr(y, ps, net, {opt.use_tp}).sr; };
        total += static_cast<double>(l_tsc(hr, lr, forward, specs).item()) * static_cast<double>(b.size());
    }
    return total / static_cast<double>(samples.size());
}

struct HeatmapReport {
    std::size_t samples = 0, passed = 0;
    double fraction = 0;
    std::vector<double> inside, expected;  // per sample
};

/// Foreground attention mass. For each character step j of a sample, the
/// share of column j's attention that falls on the (LR-resolution) ink mask;
/// averaged over the sample's characters and compared with the mask's
/// area fraction, which is what uniform attention would give.
template <class T>
HeatmapReport heatmap_property(const ParamStore<T>& ps, const NetworkConfig& net,
                               const std::vector<glyph::GlyphSample>& samples, std::size_t batch = 16) {
    if (samples.empty()) throw ContractError("heatmap_property: empty split");
    NoGradGuard ng;
    const glyph::Geometry geo{net.hr_h(), net.hr_w(), net.scale, net.seq_len};
    const std::size_t h = net.lr_h, w = net.lr_w, l = net.seq_len;
    HeatmapReport rep;
    for (std::size_t i = 0; i < samples.size(); i += batch) {
        std::vector<const glyph::GlyphSample*> b;
        for (std::size_t k = i; k < std::min(samples.size(), i + batch); ++k) b.push_back(&samples[k]);
        const auto out = reconstruct_sr(stack_field<T>(b, &glyph::GlyphSample::lr), ps, net, {true});
        for (std::size_t k = 0; k < b.size(); ++k) {
            auto m = b[k]->mask;
            const auto lr_mask = image::box_downsample(ops::reshape(m, Shape{m.dim(0), m.dim(1), 1}), net.scale);
            double area = 0;
            for (double v : lr_mask.data()) area += v;
            area /= static_cast<double>(h * w);
            const auto targets = b[k]->targets(geo);
            double inside = 0;
            std::size_t chars = 0;
            for (std::size_t j = 0; j < l; ++j) {
                if (targets[j] == kBlank) continue;
                const auto col = attention_heatmap_extract(out.attention, j, h, w, k, false);
                double on = 0, all = 0;
                for (std::size_t p = 0; p < h * w; ++p) {
                    on += lr_mask[p] * col[p];
                    all += col[p];
                }
                inside += all > 0 ? on / all : 0.0;
                ++chars;
            }
            if (chars == 0) continue;
            inside /= static_cast<double>(chars);
            rep.inside.push_back(inside);
            rep.expected.push_back(area);
            ++rep.samples;
            rep.passed += inside > area;
        }
    }
    rep.fraction = rep.samples ? static_cast<double>(rep.passed) / rep.samples : 0.0;
    return rep;
}

}  // namespace tatt
