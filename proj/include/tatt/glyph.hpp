#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "tatt/font5x7.hpp"
#include "tatt/image.hpp"
#include "tatt/interpreter.hpp"
#include "tatt/warp.hpp"

namespace tatt::glyph {

// ------------------------------------------------------------------ alphabet

inline std::size_t char_to_class(char ch) {
    if (ch >= '0' && ch <= '9') return static_cast<std::size_t>(ch - '0');
    if (ch >= 'a' && ch <= 'z') return 10 + static_cast<std::size_t>(ch - 'a');
    if (ch >= 'A' && ch <= 'Z') return 10 + static_cast<std::size_t>(ch - 'A');
    throw AlphabetError(std::string("character '") + ch + "' is not in [0-9a-z]");
}

inline char class_to_char(std::size_t k) {
    if (k < 10) return static_cast<char>('0' + k);
    if (k < 36) return static_cast<char>('a' + (k - 10));
    return '-';
}

inline void validate_label(const std::string& label) {
    for (char ch : label) char_to_class(ch);
}

/// Reads non-blank steps in order.
inline std::string decode_steps(const std::vector<std::size_t>& steps) {
    std::string s;
    for (auto k : steps)
        if (k != kBlank) s.push_back(class_to_char(k));
    return s;
}

// -------------------------------------------------------------------- layout

/// Canvas and text layout. Glyphs are the 5×7 bitmaps scaled by `glyph_scale`
/// and advanced by `pitch` pixels, centered horizontally and vertically.
struct Geometry {
    std::size_t hr_h = 32, hr_w = 128;
    std::size_t scale = 2;       // HR / LR
    std::size_t seq_len = 16;
    std::size_t glyph_scale = 2;
    std::size_t pitch = 12;

    std::size_t lr_h() const { return hr_h / scale; }
    std::size_t lr_w() const { return hr_w / scale; }
    std::size_t max_chars() const { return (hr_w + pitch - font::kGlyphW * glyph_scale) / pitch; }
    std::size_t text_width(std::size_t n) const { return n == 0 ? 0 : pitch * (n - 1) + font::kGlyphW * glyph_scale; }
    std::size_t origin_x(std::size_t n) const { return ((hr_w - text_width(n)) / 2) & ~std::size_t{1}; }
    std::size_t origin_y() const { return ((hr_h - font::kGlyphH * glyph_scale) / 2) & ~std::size_t{1}; }
};

/// Per-step class targets: the step whose span contains a character's
/// (deformed) center carries that character; all other steps are blank.
inline std::vector<std::size_t> step_targets(const std::string& label, const DeformationSpec& deform,
                                             const Geometry& geo = {}) {
    std::vector<std::size_t> targets(geo.seq_len, kBlank);
    const double step_w = static_cast<double>(geo.hr_w) / geo.seq_len;
    const double cy = geo.origin_y() + font::kGlyphH * geo.glyph_scale / 2.0;
    for (std::size_t j = 0; j < label.size(); ++j) {
        const double cx = geo.origin_x(label.size()) + geo.pitch * j + font::kGlyphW * geo.glyph_scale / 2.0;
        const auto p = deform.map_point(cx, cy, static_cast<double>(geo.hr_w), static_cast<double>(geo.hr_h));
        const double s = std::floor(p[0] / step_w);
        if (s < 0 || s >= static_cast<double>(geo.seq_len)) continue;
        auto& t = targets[static_cast<std::size_t>(s)];
        if (t == kBlank) t = char_to_class(label[j]);
    }
    return targets;
}

// ----------------------------------------------------------------- rendering

struct GlyphStyle {
    DeformationSpec deform;
    double min_contrast = 0.3;
};

struct RenderedGlyph {
    Tensor<double> image;  // [H, W, 3] in [0, 1]
    Tensor<double> mask;   // [H, W], 1 on glyph ink
};

inline double luminance(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

/// Rasterizes `label` with the built-in bitmap font on a randomized
/// background. Colors and background gradient come from `seed`; the
/// deformation in `style` is applied to the ink coverage.
inline RenderedGlyph render_glyph_image(const std::string& label, const GlyphStyle& style, std::uint64_t seed,
                                        const Geometry& geo = {}) {
    validate_label(label);
    if (label.size() > geo.max_chars())
        throw ContractError("render_glyph_image: label of " + std::to_string(label.size()) + " characters exceeds " +
                            std::to_string(geo.max_chars()));
    Rng rng(seed);
    std::array<double, 3> bg{}, fg{}, grad{};
    for (auto& v : bg) v = rng.uniform();
    do {
        for (auto& v : fg) v = rng.uniform();
    } while (std::abs(luminance(fg) - luminance(bg)) < style.min_contrast);
    for (auto& v : grad) v = rng.uniform(-0.1, 0.1);

    const std::size_t H = geo.hr_h, W = geo.hr_w;
    Tensor<double> cover(Shape{H, W, 1});
    const std::size_t x0 = geo.origin_x(label.size()), y0 = geo.origin_y(), gs = geo.glyph_scale;
    for (std::size_t j = 0; j < label.size(); ++j) {
        const std::size_t g = char_to_class(label[j]);
        for (std::size_t r = 0; r < font::kGlyphH; ++r)
            for (std::size_t c = 0; c < font::kGlyphW; ++c) {
                if (!font::ink(g, r, c)) continue;
                for (std::size_t dy = 0; dy < gs; ++dy)
                    for (std::size_t dx = 0; dx < gs; ++dx) {
                        const std::size_t y = y0 + r * gs + dy, x = x0 + geo.pitch * j + c * gs + dx;
                        if (y < H && x < W) cover[y * W + x] = 1.0;
                    }
            }
    }
    {
        NoGradGuard ng;
        cover = apply_deformation(cover, style.deform);
    }

    RenderedGlyph out{Tensor<double>(Shape{H, W, 3}), Tensor<double>(Shape{H, W})};
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const double a = std::clamp(cover[y * W + x], 0.0, 1.0);
            const double t = static_cast<double>(x) / (W - 1) - 0.5;
            for (std::size_t c = 0; c < 3; ++c) {
                const double b = std::clamp(bg[c] + grad[c] * t, 0.0, 1.0);
                out.image[(y * W + x) * 3 + c] = std::clamp(b + a * (fg[c] - b), 0.0, 1.0);
            }
            out.mask[y * W + x] = a > 0.5 ? 1.0 : 0.0;
        }
    return out;
}

// --------------------------------------------------------------- degradation

struct DegradeParams {
    double blur_sigma = 0.0;   // Gaussian σ on the HR image, drawn from [0.5, 1.5]
    double noise_sigma = 0.0;  // additive noise σ on the LR image, drawn from [0, 0.03]
    std::uint64_t noise_seed = 0;

    static DegradeParams sample(std::uint64_t seed) {
        Rng rng(seed);
        DegradeParams p;
        p.blur_sigma = rng.uniform(0.5, 1.5);
        p.noise_sigma = rng.uniform(0.0, 0.03);
        p.noise_seed = rng.next_u64();
        return p;
    }
};

/// blur → box downsample → additive noise → clamp.
inline Tensor<double> degrade_with(const Tensor<double>& hr, const DegradeParams& p, std::size_t scale = 2) {
    auto lr = image::box_downsample(image::gaussian_blur(hr, p.blur_sigma), scale);
    if (p.noise_sigma > 0) {
        Rng rng(p.noise_seed);
        for (auto& v : lr.data()) v += p.noise_sigma * rng.normal();
    }
    return image::clamp01(lr);
}

inline Tensor<double> degrade_to_lr(const Tensor<double>& hr, std::uint64_t seed, std::size_t scale = 2) {
    return degrade_with(hr, DegradeParams::sample(seed), scale);
}

// ------------------------------------------------------------------ PNM files

inline std::vector<unsigned char> encode_pnm(const Tensor<double>& img, bool color) {
    const std::size_t H = img.dim(0), W = img.dim(1), C = color ? 3 : 1;
    if (img.size() != H * W * C) throw DimensionError("encode_pnm: unexpected shape " + shape_str(img.shape()));
    std::string header = std::string(color ? "P6" : "P5") + "\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    std::vector<unsigned char> bytes(header.begin(), header.end());
    for (double v : img.data()) bytes.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    return bytes;
}

inline Tensor<double> decode_pnm(const std::vector<unsigned char>& bytes, bool color, const std::string& what) {
    std::string text(bytes.begin(), bytes.begin() + std::min<std::size_t>(bytes.size(), 64));
    std::istringstream is(text);
    std::string magic;
    std::size_t W = 0, H = 0, maxv = 0;
    is >> magic >> W >> H >> maxv;
    if (!is || magic != (color ? "P6" : "P5") || maxv != 255) throw FormatError(what + ": not a binary 8-bit " + (color ? "PPM" : "PGM"));
    const std::size_t offset = static_cast<std::size_t>(is.tellg()) + 1;
    const std::size_t C = color ? 3 : 1;
    if (bytes.size() != offset + H * W * C) throw FormatError(what + ": truncated pixel data");
    Tensor<double> img(color ? Shape{H, W, 3} : Shape{H, W});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = bytes[offset + i] / 255.0;
    return img;
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot open " + p.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), {});
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + p.string());
}

inline std::uint32_t crc32_of(const std::vector<unsigned char>& bytes) {
    return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

inline void write_ppm(const std::filesystem::path& p, const Tensor<double>& img) { write_bytes(p, encode_pnm(img, true)); }
inline void write_pgm(const std::filesystem::path& p, const Tensor<double>& img) { write_bytes(p, encode_pnm(img, false)); }
inline Tensor<double> read_ppm(const std::filesystem::path& p) { return decode_pnm(read_bytes(p), true, p.string()); }
inline Tensor<double> read_pgm(const std::filesystem::path& p) { return decode_pnm(read_bytes(p), false, p.string()); }

// -------------------------------------------------------------------- corpus

enum class Split { Train, Val, Test };

inline std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw FormatError("unknown split '" + s + "'");
}

struct GlyphSample {
    std::size_t index = 0;
    Tensor<double> hr;    // [32, 128, 3]
    Tensor<double> lr;    // [16, 64, 3]
    Tensor<double> mask;  // [32, 128]
    std::string label;
    DeformationSpec deform;
    std::uint64_t seed = 0;
    Split split = Split::Train;

    std::vector<std::size_t> targets(const Geometry& geo = {}) const { return step_targets(label, deform, geo); }
};

inline constexpr const char* kCorpusVersion = "tatt-corpus-1";

struct ManifestEntry {
    std::size_t index = 0;
    std::string label;
    DeformationSpec deform;
    std::uint64_t seed = 0;
    Split split = Split::Train;
    std::string hr_path, lr_path, mask_path;
    std::uint32_t hr_crc = 0, lr_crc = 0, mask_crc = 0;
};

struct CorpusManifest {
    std::string version = kCorpusVersion;
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> entries;

    std::size_t count() const { return entries.size(); }
    std::size_t count(Split s) const {
        return static_cast<std::size_t>(
            std::count_if(entries.begin(), entries.end(), [s](const ManifestEntry& e) { return e.split == s; }));
    }
};

/// Label length uniform on [3, 10], characters uniform over the 36 symbols.
inline std::string draw_label(Rng& rng, std::size_t min_len = 3, std::size_t max_len = 10) {
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s.push_back(class_to_char(rng.below(36)));
    return s;
}

/// Half of the samples carry a render-time deformation. Aspect stays near 1
/// so the text fits the canvas and step alignment is preserved.
inline DeformationSpec draw_render_deformation(Rng& rng, std::size_t label_len, const Geometry& geo = {}) {
    if (rng.uniform() < 0.5) return DeformationSpec::identity();
    DeformationSpec d;
    d.rotation = rng.uniform(-DeformationSpec::kMaxRotation, DeformationSpec::kMaxRotation);
    d.shear = rng.uniform(-DeformationSpec::kMaxShear, DeformationSpec::kMaxShear);
    const double fit = static_cast<double>(geo.hr_w - 2) / std::max<std::size_t>(geo.text_width(label_len), 1);
    d.aspect = rng.uniform(0.9, std::min(1.1, fit));
    return d;
}

/// Everything about sample `index` of a corpus seeded with `seed`.
inline GlyphSample synthesize_sample(std::uint64_t seed, std::size_t index, const Geometry& geo = {}) {
    GlyphSample s;
    s.index = index;
    s.seed = mix_seed(seed, index);
    Rng rng(s.seed);
    s.label = draw_label(rng);
    s.deform = draw_render_deformation(rng, s.label.size(), geo);
    const std::uint64_t style_seed = rng.next_u64(), degrade_seed = rng.next_u64();
    auto r = render_glyph_image(s.label, GlyphStyle{s.deform}, style_seed, geo);
    s.hr = r.image;
    image::quantize8_inplace(s.hr);
    s.mask = r.mask;
    s.lr = degrade_to_lr(s.hr, degrade_seed, geo.scale);
    image::quantize8_inplace(s.lr);
    return s;
}

inline std::array<std::size_t, 3> split_counts(std::size_t n) {
    const std::size_t train = n * 8 / 10, val = n / 10;
    return {train, val, n - train - val};
}

inline Split split_of(std::size_t index, std::size_t n) {
    const auto c = split_counts(n);
    if (index < c[0]) return Split::Train;
    if (index < c[0] + c[1]) return Split::Val;
    return Split::Test;
}

namespace detail {
inline std::string file_name(std::size_t index, const char* ext) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << index << ext;
    return os.str();
}
}  // namespace detail

/// Writes n samples (80/10/10 train/val/test by index) plus
/// `manifest.jsonl` under `dir`. Output is a pure function of `seed`.
inline CorpusManifest generate_corpus(std::size_t n, std::uint64_t seed, const std::filesystem::path& dir,
                                      const Geometry& geo = {}) {
    if (n == 0) throw ContractError("generate_corpus: n must be at least 1");
    namespace fs = std::filesystem;
    std::error_code ec;
    for (const char* sub : {"hr", "lr", "mask"}) {
        fs::create_directories(dir / sub, ec);
        if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
    }
    CorpusManifest m;
    m.seed = seed;
    std::ostringstream lines;
    const auto counts = split_counts(n);
    lines << nlohmann::json{{"version", m.version}, {"count", n}, {"seed", seed}, {"train", counts[0]},
                            {"val", counts[1]}, {"test", counts[2]}}
                 .dump()
          << '\n';
    for (std::size_t i = 0; i < n; ++i) {
        GlyphSample s = synthesize_sample(seed, i, geo);
        ManifestEntry e;
        e.index = i, e.label = s.label, e.deform = s.deform, e.seed = s.seed, e.split = split_of(i, n);
        e.hr_path = "hr/" + detail::file_name(i, ".ppm");
        e.lr_path = "lr/" + detail::file_name(i, ".ppm");
        e.mask_path = "mask/" + detail::file_name(i, ".pgm");
        const auto hr = encode_pnm(s.hr, true), lr = encode_pnm(s.lr, true), mk = encode_pnm(s.mask, false);
        write_bytes(dir / e.hr_path, hr);
        write_bytes(dir / e.lr_path, lr);
        write_bytes(dir / e.mask_path, mk);
        e.hr_crc = crc32_of(hr), e.lr_crc = crc32_of(lr), e.mask_crc = crc32_of(mk);
        lines << nlohmann::json{{"index", e.index},       {"label", e.label},       {"rotation", e.deform.rotation},
                                {"shear", e.deform.shear}, {"aspect", e.deform.aspect}, {"seed", e.seed},
                                {"split", split_name(e.split)}, {"hr", e.hr_path},   {"lr", e.lr_path},
                                {"mask", e.mask_path},    {"hr_crc", e.hr_crc},     {"lr_crc", e.lr_crc},
                                {"mask_crc", e.mask_crc}}
                     .dump()
              << '\n';
        m.entries.push_back(std::move(e));
    }
    const std::string text = lines.str();
    write_bytes(dir / "manifest.jsonl", std::vector<unsigned char>(text.begin(), text.end()));
    return m;
}

inline CorpusManifest read_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw IoError("cannot open manifest " + manifest_path.string());
    CorpusManifest m;
    std::string line;
    std::size_t lineno = 0, expected = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError(manifest_path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
        }
        if (lineno == 1) {
            m.version = j.at("version").get<std::string>();
            if (m.version != kCorpusVersion) throw FormatError("unsupported corpus version " + m.version);
            m.seed = j.at("seed").get<std::uint64_t>();
            expected = j.at("count").get<std::size_t>();
            continue;
        }
        ManifestEntry e;
        e.index = j.at("index").get<std::size_t>();
        e.label = j.at("label").get<std::string>();
        e.deform = {j.at("rotation").get<double>(), j.at("shear").get<double>(), j.at("aspect").get<double>()};
        e.seed = j.at("seed").get<std::uint64_t>();
        e.split = parse_split(j.at("split").get<std::string>());
        e.hr_path = j.at("hr").get<std::string>();
        e.lr_path = j.at("lr").get<std::string>();
        e.mask_path = j.at("mask").get<std::string>();
        e.hr_crc = j.at("hr_crc").get<std::uint32_t>();
        e.lr_crc = j.at("lr_crc").get<std::uint32_t>();
        e.mask_crc = j.at("mask_crc").get<std::uint32_t>();
        m.entries.push_back(std::move(e));
    }
    if (lineno == 0) throw FormatError("empty manifest " + manifest_path.string());
    if (m.entries.size() != expected)
        throw FormatError("manifest lists " + std::to_string(m.entries.size()) + " samples, header says " +
                          std::to_string(expected));
    return m;
}

/// Streams samples in manifest order, verifying file checksums.
class CorpusReader {
public:
    explicit CorpusReader(const std::filesystem::path& manifest_path)
        : root_(manifest_path.parent_path()), manifest_(read_manifest(manifest_path)) {}

    const CorpusManifest& manifest() const { return manifest_; }
    std::size_t size() const { return manifest_.count(); }

    GlyphSample load(std::size_t position) const {
        const ManifestEntry& e = manifest_.entries.at(position);
        auto fetch = [&](const std::string& rel, std::uint32_t crc) {
            auto bytes = read_bytes(root_ / rel);
            if (crc32_of(bytes) != crc)
                throw ChecksumError("sample " + std::to_string(e.index) + ": checksum mismatch in " + rel);
            return bytes;
        };
        GlyphSample s;
        s.index = e.index, s.label = e.label, s.deform = e.deform, s.seed = e.seed, s.split = e.split;
        s.hr = decode_pnm(fetch(e.hr_path, e.hr_crc), true, e.hr_path);
        s.lr = decode_pnm(fetch(e.lr_path, e.lr_crc), true, e.lr_path);
        s.mask = decode_pnm(fetch(e.mask_path, e.mask_crc), false, e.mask_path);
        return s;
    }

    std::optional<GlyphSample> next() {
        if (cursor_ >= size()) return std::nullopt;
        return load(cursor_++);
    }

    void rewind() { cursor_ = 0; }

private:
    std::filesystem::path root_;
    CorpusManifest manifest_;
    std::size_t cursor_ = 0;
};

/// Accepts either a corpus directory or its manifest path.
inline std::filesystem::path manifest_path(const std::filesystem::path& p) {
    return std::filesystem::is_directory(p) ? p / "manifest.jsonl" : p;
}

inline std::vector<GlyphSample> load_corpus(const std::filesystem::path& path) {
    CorpusReader reader(manifest_path(path));
    std::vector<GlyphSample> out;
    while (auto s = reader.next()) out.push_back(std::move(*s));
    return out;
}

/// Seeded permutation of [0, n) (Fisher-Yates).
inline std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

inline std::vector<GlyphSample> select_split(const std::vector<GlyphSample>& all, Split s) {
    std::vector<GlyphSample> out;
    for (const auto& g : all)
        if (g.split == s) out.push_back(g);
    return out;
}

}  // namespace tatt::glyph
