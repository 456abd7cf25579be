#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "tatt/ops.hpp"
#include "tatt/rng.hpp"

namespace tatt {

/// Parameters of the random deformation D. Identity is (0, 0, 1).
struct DeformationSpec {
    double rotation = 0.0;  // degrees, [-10, 10]
    double shear = 0.0;     // [-0.3, 0.3]
    double aspect = 1.0;    // horizontal scale, [0.5, 2.0]

    static constexpr double kMaxRotation = 10.0;
    static constexpr double kMaxShear = 0.3;
    static constexpr double kMinAspect = 0.5;
    static constexpr double kMaxAspect = 2.0;

    static DeformationSpec identity() { return {}; }

    bool is_identity() const { return rotation == 0.0 && shear == 0.0 && aspect == 1.0; }

    void validate() const {
        if (!(std::abs(rotation) <= kMaxRotation) || !(std::abs(shear) <= kMaxShear) ||
            !(aspect >= kMinAspect && aspect <= kMaxAspect))
            throw ContractError("DeformationSpec out of range: rotation=" + std::to_string(rotation) +
                                " shear=" + std::to_string(shear) + " aspect=" + std::to_string(aspect));
    }

    /// Uniform draw over the full declared ranges.
    static DeformationSpec sample(Rng& rng) {
        DeformationSpec s;
        s.rotation = rng.uniform(-kMaxRotation, kMaxRotation);
        s.shear = rng.uniform(-kMaxShear, kMaxShear);
        s.aspect = rng.uniform(kMinAspect, kMaxAspect);
        return s;
    }

    /// Forward linear part M = R(θ)·Shear(s)·diag(aspect, 1) acting on
    /// centered (x, y) coordinates; row-major 2×2.
    std::array<double, 4> matrix() const {
        const double t = rotation * std::numbers::pi / 180.0, c = std::cos(t), s = std::sin(t);
        // Shear·Aspect = [[a, shear], [0, 1]]
        const double m00 = aspect, m01 = shear, m10 = 0.0, m11 = 1.0;
        return {c * m00 - s * m10, c * m01 - s * m11, s * m00 + c * m10, s * m01 + c * m11};
    }

    std::array<double, 4> inverse() const {
        const auto m = matrix();
        const double det = m[0] * m[3] - m[1] * m[2];
        return {m[3] / det, -m[1] / det, -m[2] / det, m[0] / det};
    }

    /// Where content at pixel-edge coordinate (x, y) lands in a W×H image.
    std::array<double, 2> map_point(double x, double y, double W, double H) const {
        const auto m = matrix();
        const double cx = x - W / 2, cy = y - H / 2;
        return {m[0] * cx + m[1] * cy + W / 2, m[2] * cx + m[3] * cy + H / 2};
    }
};

namespace detail {

/// Bilinear resampling map for one H×W×C image at `base` in a flat buffer.
template <class T>
void append_warp_rows(ops::SparseMap<T>& map, const DeformationSpec& spec, std::size_t base, std::size_t H,
                      std::size_t W, std::size_t C) {
    if (spec.is_identity()) {
        for (std::size_t i = 0; i < H * W * C; ++i) {
            map.add(base + i, T(1));
            map.end_row();
        }
        return;
    }
    const auto inv = spec.inverse();
    const double hw = W / 2.0, hh = H / 2.0;
    for (std::size_t oy = 0; oy < H; ++oy)
        for (std::size_t ox = 0; ox < W; ++ox) {
            const double px = ox + 0.5 - hw, py = oy + 0.5 - hh;
            double sx = inv[0] * px + inv[1] * py + hw - 0.5;
            double sy = inv[2] * px + inv[3] * py + hh - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
            sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
            const std::size_t x0 = static_cast<std::size_t>(std::floor(sx));
            const std::size_t y0 = static_cast<std::size_t>(std::floor(sy));
            const std::size_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            const double fx = sx - x0, fy = sy - y0;
            const std::array<std::pair<std::size_t, double>, 4> taps{{{y0 * W + x0, (1 - fx) * (1 - fy)},
                                                                      {y0 * W + x1, fx * (1 - fy)},
                                                                      {y1 * W + x0, (1 - fx) * fy},
                                                                      {y1 * W + x1, fx * fy}}};
            for (std::size_t c = 0; c < C; ++c) {
                for (const auto& [pix, wgt] : taps)
                    if (wgt != 0.0) map.add(base + pix * C + c, static_cast<T>(wgt));
                map.end_row();
            }
        }
}

}  // namespace detail

/// Center-anchored affine warp (rotation ∘ shear ∘ aspect) with bilinear
/// sampling and replicate-border fill. img: [B,H,W,C] with one spec per
/// sample, or [H,W,C] with a single spec. Differentiable w.r.t. the image.
template <class T>
Tensor<T> apply_deformation(const Tensor<T>& img, const std::vector<DeformationSpec>& specs) {
    if (img.rank() != 3 && img.rank() != 4) throw DimensionError("apply_deformation: bad rank " + shape_str(img.shape()));
    const bool batched = img.rank() == 4;
    const std::size_t B = batched ? img.dim(0) : 1;
    const std::size_t H = img.dim(img.rank() - 3), W = img.dim(img.rank() - 2), C = img.dim(img.rank() - 1);
    if (specs.size() != B)
        throw ContractError("apply_deformation: " + std::to_string(specs.size()) + " specs for batch of " + std::to_string(B));
    auto map = std::make_shared<ops::SparseMap<T>>();
    for (std::size_t b = 0; b < B; ++b) {
        specs[b].validate();
        detail::append_warp_rows(*map, specs[b], b * H * W * C, H, W, C);
    }
    return ops::sparse_linear<T>(img, std::move(map), img.shape());
}

template <class T>
Tensor<T> apply_deformation(const Tensor<T>& img, const DeformationSpec& spec) {
    const std::size_t B = img.rank() == 4 ? img.dim(0) : 1;
    return apply_deformation(img, std::vector<DeformationSpec>(B, spec));
}

}  // namespace tatt
