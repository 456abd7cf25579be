#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "tatt/tatt.hpp"

namespace fs = std::filesystem;
using namespace tatt;

namespace {

struct TrainArgs {
    std::string corpus, ckpt, out = "run", phase = "joint";
    std::optional<std::size_t> steps, batch;
    std::optional<double> lr, alpha, beta;
    std::uint64_t seed = 1;
    int precision = 32;
    bool no_tp = false, freeze_tpg = false, fixed_deform = false;
    std::size_t pretrain_steps = kDefaultPretrainSteps, pretrain_batch = kDefaultPretrainBatch;
    double pretrain_lr = kDefaultPretrainLr;
    std::size_t validate_every = 0, checkpoint_every = 0;
    std::string net = "desk";
};

NetworkConfig network_named(const std::string& name) {
    if (name == "desk") return NetworkConfig::desk();
    if (name == "paper") return NetworkConfig::paper();
    if (name == "mini") return NetworkConfig::mini();
    throw ContractError("unknown network configuration '" + name + "' (desk, paper, mini)");
}

TrainConfig joint_config(const TrainArgs& a) {
    TrainConfig c;
    c.seed = a.seed;
    c.precision = a.precision;
    c.steps = a.steps.value_or(c.steps);
    c.batch = a.batch.value_or(c.batch);
    c.lr = a.lr.value_or(c.lr);
    c.alpha = a.alpha.value_or(c.alpha);
    c.beta = a.beta.value_or(c.beta);
    c.use_tp = !a.no_tp;
    c.freeze_tpg = a.freeze_tpg;
    c.fixed_deform = a.fixed_deform;
    c.validate_every = a.validate_every;
    c.checkpoint_every = a.checkpoint_every;
    return c;
}

TrainConfig pretrain_config(const TrainArgs& a) {
    TrainConfig c;
    c.seed = a.seed;
    c.precision = a.precision;
    c.steps = a.phase == "tpg" ? a.steps.value_or(a.pretrain_steps) : a.pretrain_steps;
    c.batch = a.phase == "tpg" ? a.batch.value_or(a.pretrain_batch) : a.pretrain_batch;
    c.lr = a.phase == "tpg" ? a.lr.value_or(a.pretrain_lr) : a.pretrain_lr;
    c.checkpoint_every = a.checkpoint_every;
    return c;
}

int precision_of(const fs::path& ckpt) {
    return static_cast<int>(8 * checkpoint_element_size(read_file_bytes(ckpt), ckpt.string()));
}

void progress(const StepMetrics& m, std::size_t total) {
    if (m.step % 50 == 0 || m.step == total) std::cerr << to_json(m).dump() << '\n';
}

template <class T>
int train(const TrainArgs& a) {
    fs::create_directories(a.out);
    const fs::path model = fs::path(a.out) / "model.ckpt";
    const fs::path metrics_path = fs::path(a.out) / "metrics.jsonl";
    std::optional<TrainState<T>> st;
    bool resumed = false;
    if (!a.ckpt.empty()) {
        st = load_checkpoint<T>(a.ckpt);
        resumed = st->phase == a.phase;
    }
    std::ofstream metrics(metrics_path, resumed ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + metrics_path.string());
    LoopHooks hooks;
    hooks.metrics = &metrics;
    hooks.checkpoint_path = model;

    auto run_pretrain = [&] {
        hooks.on_step = [&](const StepMetrics& m) { progress(m, st->train.steps); };
        pretrain_text_prior(*st, hooks);
    };

    if (a.phase == "tpg") {
        if (!st) st = init_state<T>(network_named(a.net), pretrain_config(a), "tpg");
        else if (st->phase != "tpg") throw ContractError(a.ckpt + " is a joint-phase checkpoint; prior pretraining needs a fresh start or a tpg checkpoint");
        if (a.steps) st->train.steps = *a.steps;
        run_pretrain();
        save_checkpoint(*st, model);
        std::cerr << "prior pretraining finished at step " << st->step << "; wrote " << model << '\n';
        return 0;
    }

    if (a.corpus.empty()) throw ContractError("train: --corpus is required for joint training");
    const auto all = glyph::load_corpus(a.corpus);
    const auto train_set = glyph::select_split(all, glyph::Split::Train);
    const auto val_set = glyph::select_split(all, glyph::Split::Val);
    hooks.validation = &val_set;

    if (!st) {
        st = init_state<T>(network_named(a.net), pretrain_config(a), "tpg");
        std::cerr << "no checkpoint given: pretraining the prior generator for " << st->train.steps << " steps\n";
        run_pretrain();
    }
    if (st->phase == "tpg") {
        if (st->step < st->train.steps) run_pretrain();
        begin_joint(*st, joint_config(a));
        resumed = false;
    } else if (a.steps) {
        st->train.steps = *a.steps;
    }
    hooks.on_step = [&](const StepMetrics& m) { progress(m, st->train.steps); };
    train_loop(*st, train_set, hooks);
    save_checkpoint(*st, model);
    std::cerr << "joint training finished at step " << st->step << "; wrote " << model << " and " << metrics_path << '\n';
    return 0;
}

template <class T>
int eval(const std::string& ckpt, const std::string& corpus, const std::string& split, const std::string& out) {
    const auto st = load_checkpoint<T>(ckpt);
    const auto samples = glyph::select_split(glyph::load_corpus(corpus), glyph::parse_split(split));
    EvalOptions opt;
    opt.use_tp = st.train.use_tp;
    nlohmann::json j = evaluate(st.params, st.net, samples, opt);
    j["split"] = split;
    j["step"] = st.step;
    if (opt.use_tp) j["heatmap_fraction"] = heatmap_property(st.params, st.net, samples).fraction;
    const std::string text = j.dump(2);
    std::cout << text << '\n';
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw IoError("cannot write " + out);
        f << text << '\n';
    }
    return 0;
}

template <class T>
int infer(const std::string& ckpt, const std::string& in, const std::string& out) {
    const auto st = load_checkpoint<T>(ckpt);
    const auto lr = glyph::read_ppm(in);
    NoGradGuard ng;
    const auto sr = image::clamp01(reconstruct_sr(image::cast<T>(lr), st.params, st.net, {st.train.use_tp}).sr);
    glyph::write_ppm(out, image::cast<double>(sr));
    std::cerr << "wrote " << out << " (" << sr.dim(0) << "x" << sr.dim(1) << ")\n";
    return 0;
}

template <class T>
int heatmap(const std::string& ckpt, const std::string& corpus, std::uint64_t seed, std::size_t sample, std::size_t ch,
            const std::string& out) {
    const auto st = load_checkpoint<T>(ckpt);
    const glyph::Geometry geo{st.net.hr_h(), st.net.hr_w(), st.net.scale, st.net.seq_len};
    glyph::GlyphSample s;
    if (corpus.empty()) {
        s = glyph::synthesize_sample(seed, sample, geo);
    } else {
        const auto all = glyph::load_corpus(corpus);
        auto it = std::find_if(all.begin(), all.end(), [&](const auto& g) { return g.index == sample; });
        if (it == all.end()) throw BoundsError("heatmap: corpus has no sample " + std::to_string(sample));
        s = *it;
    }
    const auto targets = s.targets(geo);
    std::size_t step = targets.size(), seen = 0;
    for (std::size_t j = 0; j < targets.size(); ++j)
        if (targets[j] != kBlank && seen++ == ch) {
            step = j;
            break;
        }
    if (step == targets.size())
        throw BoundsError("heatmap: sample " + std::to_string(sample) + " ('" + s.label + "') has no character " + std::to_string(ch));
    NoGradGuard ng;
    const auto res = reconstruct_sr(image::cast<T>(s.lr), st.params, st.net, {true});
    const auto map = attention_heatmap_extract(res.attention, step, st.net.lr_h, st.net.lr_w);
    glyph::write_pgm(out, image::cast<double>(map));
    std::cerr << "sample " << sample << " '" << s.label << "' character " << ch << " ('" << s.label[ch] << "', step " << step
              << "): wrote " << st.net.lr_h << "x" << st.net.lr_w << " map to " << out << '\n';
    return 0;
}

template <class F>
int dispatch(int precision, F&& f) {
    if (precision == 64) return f(double{});
    if (precision == 32) return f(float{});
    throw ContractError("precision must be 32 or 64");
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Text-prior guided super-resolution of synthetic text images"};
    app.require_subcommand(1);

    std::size_t n = 512;
    std::uint64_t seed = 7;
    std::string out;
    auto* synth = app.add_subcommand("synth", "Generate a glyph corpus");
    synth->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
    synth->add_option("--seed", seed, "Corpus seed");
    synth->add_option("--out", out, "Output directory")->required();

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "Pretrain the prior generator or train the network jointly");
    tr->add_option("--corpus", ta.corpus, "Corpus directory (joint phase)");
    tr->add_option("--phase", ta.phase, "tpg (prior generator pretraining) or joint")->check(CLI::IsMember({"tpg", "joint"}));
    tr->add_option("--ckpt", ta.ckpt, "Checkpoint to resume from or to start joint training from");
    tr->add_option("--out", ta.out, "Output directory for model.ckpt and metrics.jsonl");
    tr->add_option("--steps", ta.steps, "Total step target for the phase");
    tr->add_option("--batch", ta.batch, "Batch size")->check(CLI::PositiveNumber);
    tr->add_option("--lr", ta.lr, "Learning rate")->check(CLI::PositiveNumber);
    tr->add_option("--alpha", ta.alpha, "Weight of the prior loss")->check(CLI::NonNegativeNumber);
    tr->add_option("--beta", ta.beta, "Weight of the deformation consistency loss")->check(CLI::NonNegativeNumber);
    tr->add_option("--seed", ta.seed, "Run seed");
    tr->add_option("--precision", ta.precision, "Floating-point width")->check(CLI::IsMember({32, 64}));
    tr->add_flag("--no-tp", ta.no_tp, "Disable the text-prior branch");
    tr->add_flag("--freeze-tpg", ta.freeze_tpg, "Keep the prior generator fixed during joint training");
    tr->add_flag("--fixed-deform", ta.fixed_deform, "One fixed deformation per sample instead of one per step");
    tr->add_option("--net", ta.net, "Network size: desk, paper or mini")->check(CLI::IsMember({"desk", "paper", "mini"}));
    tr->add_option("--pretrain-steps", ta.pretrain_steps, "Prior pretraining steps when joint training starts fresh");
    tr->add_option("--pretrain-batch", ta.pretrain_batch, "Prior pretraining batch size")->check(CLI::PositiveNumber);
    tr->add_option("--pretrain-lr", ta.pretrain_lr, "Prior pretraining learning rate")->check(CLI::PositiveNumber);
    tr->add_option("--validate-every", ta.validate_every, "Validation PSNR every N steps (0: never)");
    tr->add_option("--checkpoint-every", ta.checkpoint_every, "Checkpoint every N steps (0: only at the end)");

    std::string ckpt, corpus, split = "test";
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus split");
    ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
    ev->add_option("--corpus", corpus, "Corpus directory")->required();
    ev->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--out", out, "Also write the report to this file");

    std::string in;
    auto* inf = app.add_subcommand("infer", "Super-resolve one LR pixmap");
    inf->add_option("--ckpt", ckpt, "Checkpoint")->required();
    inf->add_option("--in", in, "Input LR image (.ppm)")->required();
    inf->add_option("--out", out, "Output SR image (.ppm)")->required();

    std::size_t sample = 0, ch = 0;
    auto* hm = app.add_subcommand("heatmap", "Export the attention map of one character as a graymap");
    hm->add_option("--ckpt", ckpt, "Checkpoint")->required();
    hm->add_option("--corpus", corpus, "Corpus directory (default: synthesize the sample from --seed)");
    hm->add_option("--seed", seed, "Corpus seed used when no corpus is given");
    hm->add_option("--sample", sample, "Sample index");
    hm->add_option("--char", ch, "Character position in the label");
    hm->add_option("--out", out, "Output graymap (.pgm)");

    double tol = 1e-4;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
    gc->add_option("--tol", tol, "Relative error tolerance");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        std::cerr << sub->help();
        return e.get_exit_code() ? e.get_exit_code() : 1;
    }

    try {
        if (synth->parsed()) {
            const auto m = glyph::generate_corpus(n, seed, out);
            std::cerr << "wrote " << m.count() << " samples (" << m.count(glyph::Split::Train) << " train, "
                      << m.count(glyph::Split::Val) << " val, " << m.count(glyph::Split::Test) << " test) to " << out << '\n';
            return 0;
        }
        if (tr->parsed()) {
            const int precision = ta.ckpt.empty() ? ta.precision : precision_of(ta.ckpt);
            return dispatch(precision, [&](auto tag) { return train<decltype(tag)>(ta); });
        }
        if (ev->parsed())
            return dispatch(precision_of(ckpt), [&](auto tag) { return eval<decltype(tag)>(ckpt, corpus, split, out); });
        if (inf->parsed())
            return dispatch(precision_of(ckpt), [&](auto tag) { return infer<decltype(tag)>(ckpt, in, out); });
        if (hm->parsed()) {
            if (out.empty()) out = "heatmap_" + std::to_string(sample) + "_" + std::to_string(ch) + ".pgm";
            return dispatch(precision_of(ckpt),
                            [&](auto tag) { return heatmap<decltype(tag)>(ckpt, corpus, seed, sample, ch, out); });
        }
        if (gc->parsed()) {
            bool ok = true;
            run_gradient_suite(tol, [&](const GradCheckResult& r) {
                std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << " rel_err=" << r.error << '\n' << std::flush;
                ok = ok && r.pass;
            });
            return ok ? 0 : 1;
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 2;
    }
    return 0;
}
