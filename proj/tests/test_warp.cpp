#include <cmath>
#include <numbers>

#include "test_util.hpp"

using namespace tatt;
using tatt::test::random_tensor;
using D = double;

namespace {

/// Independent bilinear warp: for each output pixel, solve M·s = p for the
/// source point by Cramer's rule and interpolate with clamped coordinates.
Tensor<D> oracle_warp(const Tensor<D>& img, const DeformationSpec& d) {
    const std::size_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
    const D t = d.rotation * std::numbers::pi / 180.0;
    // R(t) · [[aspect, shear], [0, 1]]
    const D a = std::cos(t) * d.aspect, b = std::cos(t) * d.shear - std::sin(t);
    const D c = std::sin(t) * d.aspect, e = std::sin(t) * d.shear + std::cos(t);
    const D det = a * e - b * c;
    Tensor<D> out(img.shape());
    for (std::size_t oy = 0; oy < H; ++oy)
        for (std::size_t ox = 0; ox < W; ++ox) {
            const D px = ox + 0.5 - W / 2.0, py = oy + 0.5 - H / 2.0;
            const D sx = std::clamp((px * e - b * py) / det + W / 2.0 - 0.5, 0.0, W - 1.0);
            const D sy = std::clamp((a * py - c * px) / det + H / 2.0 - 0.5, 0.0, H - 1.0);
            const std::size_t x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
            const std::size_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            const D fx = sx - x0, fy = sy - y0;
            for (std::size_t ch = 0; ch < C; ++ch) {
                auto at = [&](std::size_t y, std::size_t x) { return img[(y * W + x) * C + ch]; };
                out[(oy * W + ox) * C + ch] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                                              fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
            }
        }
    return out;
}

D interior_mean_abs_diff(const Tensor<D>& a, const Tensor<D>& b, std::size_t margin) {
    const std::size_t H = a.dim(0), W = a.dim(1), C = a.dim(2);
    D s = 0;
    std::size_t n = 0;
    for (std::size_t y = margin; y < H - margin; ++y)
        for (std::size_t x = margin; x < W - margin; ++x)
            for (std::size_t c = 0; c < C; ++c, ++n) s += std::abs(a[(y * W + x) * C + c] - b[(y * W + x) * C + c]);
    return s / static_cast<D>(n);
}

}  // namespace

TEST(Deformation, IdentityIsBitExact) {
    Rng rng(1);
    auto img = random_tensor(rng, {2, 8, 12, 3}, 0, 1);
    auto out = apply_deformation(img, DeformationSpec::identity());
    EXPECT_EQ(out.data(), img.data());
}

TEST(Deformation, OutOfRangeSpecRejected) {
    Tensor<D> img(Shape{4, 4, 3});
    EXPECT_THROW(apply_deformation(img, DeformationSpec{11.0, 0.0, 1.0}), ContractError);
    EXPECT_THROW(apply_deformation(img, DeformationSpec{0.0, 0.31, 1.0}), ContractError);
    EXPECT_THROW(apply_deformation(img, DeformationSpec{0.0, 0.0, 0.4}), ContractError);
    EXPECT_THROW(apply_deformation(img, DeformationSpec{0.0, 0.0, 2.1}), ContractError);
    EXPECT_THROW(apply_deformation(Tensor<D>(Shape{2, 4, 4, 3}), std::vector<DeformationSpec>(3)), ContractError);
}

TEST(Deformation, MatchesScalarOracle) {
    Rng rng(2);
    for (int i = 0; i < 10; ++i) {
        auto img = random_tensor(rng, {9, 14, 3}, 0, 1);
        const auto spec = DeformationSpec::sample(rng);
        auto got = apply_deformation(img, spec), want = oracle_warp(img, spec);
        for (std::size_t k = 0; k < img.size(); ++k) ASSERT_NEAR(got[k], want[k], 1e-12) << k;
    }
}

TEST(Deformation, BatchUsesOneSpecPerSample) {
    Rng rng(3);
    auto a = random_tensor(rng, {6, 10, 3}, 0, 1), b = random_tensor(rng, {6, 10, 3}, 0, 1);
    const DeformationSpec sa{4.0, 0.1, 1.3}, sb{-9.0, -0.25, 0.7};
    auto out = apply_deformation(image::stack<D>({a, b}), {sa, sb});
    EXPECT_EQ(image::unstack(out, 0).data(), apply_deformation(a, sa).data());
    EXPECT_EQ(image::unstack(out, 1).data(), apply_deformation(b, sb).data());
}

TEST(Deformation, RotationRoundTripRecoversInterior) {
    // Band-limited renders: two bilinear passes over hard 8-bit edges lose more.
    const glyph::Geometry geo;
    for (std::size_t i = 0; i < 8; ++i) {
        const auto img = image::gaussian_blur(glyph::synthesize_sample(11, i, geo).hr, 1.0);
        for (D theta : {3.0, 7.0, 10.0}) {
            auto back = apply_deformation(apply_deformation(img, DeformationSpec{theta, 0, 1}), DeformationSpec{-theta, 0, 1});
            EXPECT_LT(interior_mean_abs_diff(back, img, 8), 0.02) << "sample " << i << " theta " << theta;
        }
    }
}

TEST(Deformation, CommutesWithDownsamplingOnInterior) {
    const glyph::Geometry geo;
    Rng rng(4);
    for (std::size_t i = 0; i < 8; ++i) {
        const auto hr = image::gaussian_blur(glyph::synthesize_sample(12, i, geo).hr, 1.0);
        DeformationSpec spec = DeformationSpec::sample(rng);
        auto a = image::box_downsample(apply_deformation(hr, spec), 2);
        auto b = apply_deformation(image::box_downsample(hr, 2), spec);
        EXPECT_LT(interior_mean_abs_diff(a, b, 4), 0.03) << "sample " << i;
    }
}

TEST(Deformation, GradientMatchesFiniteDifferences) {
    Rng rng(5);
    auto img = random_tensor(rng, {2, 5, 7, 2}, 0, 1);
    auto w = random_tensor(rng, {2, 5, 7, 2});
    img.set_requires_grad(true);
    const std::vector<DeformationSpec> specs{{6.0, 0.2, 1.4}, {-3.0, -0.1, 0.6}};
    auto err = gradient_check<D>([&] { return ops::sum(ops::mul(apply_deformation(img, specs), w)); }, {img});
    EXPECT_LT(err, 1e-8);
}

TEST(Deformation, MapPointFollowsContent) {
    // A bright dot moved by the warp appears where map_point says it goes.
    const std::size_t H = 32, W = 64;
    Tensor<D> img(Shape{H, W, 1});
    img[(20 * W + 40)] = 1.0;
    const DeformationSpec spec{8.0, 0.15, 1.2};
    auto out = apply_deformation(img, spec);
    D sx = 0, sy = 0, m = 0;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const D v = out[y * W + x];
            sx += v * (x + 0.5), sy += v * (y + 0.5), m += v;
        }
    const auto p = spec.map_point(40.5, 20.5, W, H);
    EXPECT_NEAR(sx / m, p[0], 0.75);
    EXPECT_NEAR(sy / m, p[1], 0.75);
}
