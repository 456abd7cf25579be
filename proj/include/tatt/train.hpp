#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>

#include "tatt/checkpoint.hpp"
#include "tatt/glyph.hpp"

namespace tatt {

/// Seed salts for the independent streams derived from TrainConfig::seed.
inline constexpr std::uint64_t kStreamSalt = 0x7472'6169'6e00ULL;
inline constexpr std::uint64_t kPretrainSalt = 0x7072'6574'7200ULL;
inline constexpr std::uint64_t kFixedDeformSalt = 0x6669'7864'6600ULL;

inline const std::string kRecognizerPath = "recognizer";

/// Prior pretraining schedule used when joint training starts from scratch.
inline constexpr std::size_t kDefaultPretrainSteps = 4000;
inline constexpr std::size_t kDefaultPretrainBatch = 32;
inline constexpr double kDefaultPretrainLr = 2e-3;

struct StepMetrics {
    std::uint64_t step = 0;  // 1-based count of completed steps
    double loss = 0, l_sr = 0;
    std::optional<double> l_tp, l_tsc, l_ce;
    std::optional<double> val_psnr;
};

inline nlohmann::json to_json(const StepMetrics& m) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json j{{"step", m.step}, {"loss", m.loss}};
    if (m.l_ce) {
        j["l_ce"] = *m.l_ce;
    } else {
        j["l_sr"] = m.l_sr;
        j["l_tp"] = opt(m.l_tp);
        j["l_tsc"] = opt(m.l_tsc);
    }
    if (m.val_psnr) j["val_psnr"] = *m.val_psnr;
    return j;
}

/// Fresh state: parameters from `train.seed`, optimizer empty, step 0.
template <class T>
TrainState<T> init_state(const NetworkConfig& net, const TrainConfig& train, const std::string& phase = "joint") {
    train.validate();
    TrainState<T> st;
    st.net = net;
    st.train = train;
    st.phase = phase;
    st.params = init_params<T>(net, train.seed);
    st.rng = Rng(mix_seed(train.seed, kStreamSalt));
    return st;
}

/// Trainability for the joint phase: the recognizer snapshot is always
/// frozen; TP-branch modules are frozen when the branch is off.
template <class T>
void apply_trainability(ParamStore<T>& ps, const TrainConfig& cfg) {
    ps.set_trainable("", true);
    ps.set_trainable(kRecognizerPath + "/", false);
    if (cfg.freeze_tpg || !cfg.use_tp) ps.set_trainable(paths::tpg + "/", false);
    if (!cfg.use_tp) ps.set_trainable(paths::interpreter + "/", false);
}

template <class T>
Tensor<T> stack_field(const std::vector<const glyph::GlyphSample*>& batch, Tensor<double> glyph::GlyphSample::*field) {
    std::vector<Tensor<T>> items;
    items.reserve(batch.size());
    for (const auto* s : batch) items.push_back(image::cast<T>(s->*field));
    return image::stack(items);
}

/// Mean negative log-likelihood of per-step class targets.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& targets) {
    const std::size_t a = logits.shape().back(), rows = logits.size() / a;
    if (targets.size() != rows)
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) + " rows");
    std::vector<std::size_t> idx(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] >= a) throw BoundsError("cross_entropy: class index out of range");
        idx[r] = r * a + targets[r];
    }
    return ops::neg(ops::mean(ops::gather(ops::log_softmax_lastdim(logits), std::move(idx), Shape{rows})));
}

/// Copies the prior generator into a frozen recognizer snapshot.
template <class T>
void snapshot_recognizer(ParamStore<T>& ps) {
    std::vector<std::pair<std::string, Tensor<T>>> copies;
    for (const auto& [path, e] : ps.entries())
        if (path.compare(0, paths::tpg.size() + 1, paths::tpg + "/") == 0)
            copies.emplace_back(kRecognizerPath + path.substr(paths::tpg.size()), e.tensor.clone());
    for (auto& [path, t] : copies) {
        if (ps.contains(path))
            ps.get(path).data() = t.data();
        else
            ps.add(path, t, false);
    }
}

struct LoopHooks {
    std::ostream* metrics = nullptr;
    std::function<void(const StepMetrics&)> on_step;
    std::optional<std::filesystem::path> checkpoint_path;
    const std::vector<glyph::GlyphSample>* validation = nullptr;
};

namespace detail {

template <class T>
bool finite(const Tensor<T>& t) {
    return std::isfinite(static_cast<double>(t.item()));
}

inline void emit(const StepMetrics& m, const LoopHooks& hooks) {
    if (hooks.metrics) *hooks.metrics << to_json(m).dump() << '\n' << std::flush;
    if (hooks.on_step) hooks.on_step(m);
}

template <class T>
void maybe_checkpoint(const TrainState<T>& st, const LoopHooks& hooks) {
    if (hooks.checkpoint_path && st.train.checkpoint_every && st.step % st.train.checkpoint_every == 0)
        save_checkpoint(st, *hooks.checkpoint_path);
}

}  // namespace detail

/// Prior generator pretraining: per-step cross-entropy on freshly rendered
/// clean HR images (box-averaged to the LR geometry inside the generator).
/// Sample k of the stream is glyph sample k of a corpus seeded by
/// mix_seed(seed, salt), so no state beyond the step counter is needed.
/// On completion the generator is copied into the frozen recognizer.
template <class T>
void pretrain_text_prior(TrainState<T>& st, const LoopHooks& hooks = {}) {
    st.train.validate();
    if (st.phase != "tpg") throw ContractError("pretrain_text_prior: state is in phase '" + st.phase + "'");
    auto& ps = st.params;
    ps.set_trainable("", false);
    ps.set_trainable(paths::tpg + "/", true);
    const std::uint64_t stream = mix_seed(st.train.seed, kPretrainSalt);
    const glyph::Geometry geo{st.net.hr_h(), st.net.hr_w(), st.net.scale, st.net.seq_len};
    while (st.step < st.train.steps) {
        std::vector<Tensor<T>> imgs;
        std::vector<std::size_t> targets;
        for (std::size_t b = 0; b < st.train.batch; ++b) {
            const auto s = glyph::synthesize_sample(stream, st.step * st.train.batch + b, geo);
            imgs.push_back(image::cast<T>(s.hr));
            const auto t = s.targets(geo);
            targets.insert(targets.end(), t.begin(), t.end());
        }
        ps.zero_grad();
        auto loss = cross_entropy(text_prior_logits(image::stack(imgs), ps, st.net), targets);
        if (!detail::finite(loss))
            throw NumericError("prior pretraining step " + std::to_string(st.step + 1) + ": non-finite loss; batch stream seed " +
                               std::to_string(stream) + ", first sample index " + std::to_string(st.step * st.train.batch));
        const double value = loss.item();
        backward(loss);
        adam_step(ps, st.adam, st.train.lr);
        ++st.step;
        StepMetrics m;
        m.step = st.step, m.loss = value, m.l_ce = value;
        detail::emit(m, hooks);
        detail::maybe_checkpoint(st, hooks);
    }
    snapshot_recognizer(ps);
}

/// Turns a finished prior-pretraining state into a fresh joint-training
/// state: same parameters (recognizer snapshot included), new optimizer,
/// step 0 and the joint stream seeded from `train.seed`.
template <class T>
void begin_joint(TrainState<T>& st, const TrainConfig& train) {
    train.validate();
    if (st.phase != "tpg") throw ContractError("begin_joint: state is in phase '" + st.phase + "', expected 'tpg'");
    if (!st.params.contains(kRecognizerPath + "/classifier/w"))
        throw ContractError("begin_joint: prior pretraining has not completed (no recognizer snapshot)");
    st.phase = "joint";
    st.train = train;
    st.step = 0;
    st.adam = {};
    st.rng = Rng(mix_seed(train.seed, kStreamSalt));
}

/// Per-sample deformation for one step. One spec is always drawn from the
/// stream per batch element, so toggles never shift later draws.
template <class T>
std::vector<DeformationSpec> draw_deformations(TrainState<T>& st, const std::vector<const glyph::GlyphSample*>& batch) {
    std::vector<DeformationSpec> specs;
    for (const auto* s : batch) {
        auto d = DeformationSpec::sample(st.rng);
        if (st.train.fixed_deform) {
            Rng fixed(mix_seed(st.train.seed ^ kFixedDeformSalt, s->index));
            d = DeformationSpec::sample(fixed);
        }
        specs.push_back(d);
    }
    return specs;
}

template <class T>
double validation_psnr(const ParamStore<T>& ps, const NetworkConfig& net, const std::vector<glyph::GlyphSample>& samples,
                       bool use_tp, std::size_t batch = 16);

/// Joint training from st.step up to st.train.steps. Per step, in order:
///   1. batch indices: `batch` draws of below(n) from the state stream;
///   2. one DeformationSpec per batch element from the same stream;
///   3. F(Y), L_SR; L_TP against the stop-gradient prior of X; second
///      forward F(D(Y)) and L_TSC when enabled with β > 0;
///   4. backward on L_SR + α·L_TP + β·L_TSC, Adam step, metrics record.
template <class T>
void train_loop(TrainState<T>& st, const std::vector<glyph::GlyphSample>& train, const LoopHooks& hooks = {}) {
    const TrainConfig& cfg = st.train;
    cfg.validate();
    if (st.phase != "joint") throw ContractError("train_loop: state is in phase '" + st.phase + "'");
    if (train.empty()) throw ContractError("train_loop: empty training set");
    apply_trainability(st.params, cfg);
    auto& ps = st.params;
    const ForwardOptions fwd{cfg.use_tp};
    const bool want_tp = cfg.use_tp && cfg.alpha != 0.0;
    const bool want_tsc = cfg.tsc && cfg.beta != 0.0;

    while (st.step < cfg.steps) {
        std::vector<const glyph::GlyphSample*> batch;
        for (std::size_t b = 0; b < cfg.batch; ++b) batch.push_back(&train[st.rng.below(train.size())]);
        const auto specs = draw_deformations(st, batch);
        const Tensor<T> Y = stack_field<T>(batch, &glyph::GlyphSample::lr);
        const Tensor<T> X = stack_field<T>(batch, &glyph::GlyphSample::hr);

        ps.zero_grad();
        const auto out = reconstruct_sr(Y, ps, st.net, fwd);
        const auto lsr = l_sr(out.sr, X);
        std::optional<Tensor<T>> ltp, ltsc;
        if (want_tp) {
            TextPrior<T> target;
            {
                NoGradGuard ng;
                target = generate_text_prior(X, ps, st.net);
            }
            ltp = l_tp(*out.prior, target);
        }
        if (want_tsc) {
            const auto second = reconstruct_sr(apply_deformation(Y, specs), ps, st.net, fwd);
            ltsc = l_tsc_from_triplet(apply_deformation(out.sr, specs), second.sr, apply_deformation(X, specs));
        }
        auto total = total_loss(lsr, ltp, ltsc, cfg.weights());

        StepMetrics m;
        m.step = st.step + 1;
        m.loss = total.item();
        m.l_sr = lsr.item();
        if (ltp) m.l_tp = ltp->item();
        if (ltsc) m.l_tsc = ltsc->item();
        if (!std::isfinite(m.loss)) {
            std::ostringstream os;
            os << "training step " << m.step << ": non-finite loss " << to_json(m).dump() << "; batch sample indices [";
            for (std::size_t b = 0; b < batch.size(); ++b) os << (b ? "," : "") << batch[b]->index;
            os << "], sample seeds [";
            for (std::size_t b = 0; b < batch.size(); ++b) os << (b ? "," : "") << batch[b]->seed;
            os << "], run seed " << cfg.seed;
            throw NumericError(os.str());
        }
        backward(total);
        adam_step(ps, st.adam, cfg.lr);
        ++st.step;
        if (hooks.validation && cfg.validate_every && st.step % cfg.validate_every == 0)
            m.val_psnr = validation_psnr(ps, st.net, *hooks.validation, cfg.use_tp);
        detail::emit(m, hooks);
        detail::maybe_checkpoint(st, hooks);
    }
}

template <class T>
double validation_psnr(const ParamStore<T>& ps, const NetworkConfig& net, const std::vector<glyph::GlyphSample>& samples,
                       bool use_tp, std::size_t batch) {
    if (samples.empty()) throw ContractError("validation_psnr: empty split");
    NoGradGuard ng;
    double total = 0;
    for (std::size_t i = 0; i < samples.size(); i += batch) {
        std::vector<const glyph::GlyphSample*> b;
        for (std::size_t k = i; k < std::min(samples.size(), i + batch); ++k) b.push_back(&samples[k]);
        const auto sr = image::clamp01(reconstruct_sr(stack_field<T>(b, &glyph::GlyphSample::lr), ps, net, {use_tp}).sr);
        const auto hr = stack_field<T>(b, &glyph::GlyphSample::hr);
        for (std::size_t k = 0; k < b.size(); ++k) total += psnr(image::unstack(sr, k), image::unstack(hr, k));
    }
    return total / static_cast<double>(samples.size());
}

}  // namespace tatt
