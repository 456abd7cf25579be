#include <cmath>
#include <limits>

#include "test_util.hpp"

using namespace tatt;
using tatt::test::random_tensor;
using D = double;

namespace {

constexpr D kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;

std::vector<D> luma_of(const Tensor<D>& img) {
    std::vector<D> l(img.size() / 3);
    for (std::size_t p = 0; p < l.size(); ++p) l[p] = 0.299 * img[3 * p] + 0.587 * img[3 * p + 1] + 0.114 * img[3 * p + 2];
    return l;
}

struct Stats {
    std::vector<D> mean;
    std::vector<std::vector<D>> cov;  // population (co)variances
};

/// Statistics of the images' luminance over one window.
Stats window_stats(const std::vector<std::vector<D>>& lumas, std::size_t W, std::size_t y0, std::size_t x0,
                   std::size_t wy, std::size_t wx) {
    const std::size_t k = lumas.size();
    Stats s{std::vector<D>(k, 0.0), std::vector<std::vector<D>>(k, std::vector<D>(k, 0.0))};
    const D n = static_cast<D>(wy * wx);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t y = y0; y < y0 + wy; ++y)
            for (std::size_t x = x0; x < x0 + wx; ++x) s.mean[i] += lumas[i][y * W + x] / n;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t y = y0; y < y0 + wy; ++y)
                for (std::size_t x = x0; x < x0 + wx; ++x)
                    s.cov[i][j] += (lumas[i][y * W + x] - s.mean[i]) * (lumas[j][y * W + x] - s.mean[j]) / n;
    return s;
}

D oracle_ssim(const Tensor<D>& a, const Tensor<D>& b, std::size_t H, std::size_t W) {
    const std::vector<std::vector<D>> l{luma_of(a), luma_of(b)};
    D total = 0;
    std::size_t windows = 0;
    for (std::size_t y = 0; y + 8 <= H; y += 8)
        for (std::size_t x = 0; x + 8 <= W; x += 8, ++windows) {
            const auto s = window_stats(l, W, y, x, 8, 8);
            const D mx = s.mean[0], my = s.mean[1];
            total += (2 * mx * my + kC1) * (2 * s.cov[0][1] + kC2) /
                     ((mx * mx + my * my + kC1) * (s.cov[0][0] + s.cov[1][1] + kC2));
        }
    return total / static_cast<D>(windows);
}

D oracle_tssim(const Tensor<D>& a, const Tensor<D>& b, const Tensor<D>& c, std::size_t H, std::size_t W) {
    const std::vector<std::vector<D>> l{luma_of(a), luma_of(b), luma_of(c)};
    D total = 0;
    std::size_t windows = 0;
    for (std::size_t y = 0; y + 8 <= H; y += 8)
        for (std::size_t x = 0; x + 8 <= W; x += 8, ++windows) {
            const auto s = window_stats(l, W, y, x, 8, 8);
            const auto& m = s.mean;
            const auto& v = s.cov;
            total += (m[0] * m[1] + m[1] * m[2] + m[0] * m[2] + kC1) * (v[0][1] + v[1][2] + v[0][2] + kC2) /
                     ((m[0] * m[0] + m[1] * m[1] + m[2] * m[2] + kC1) * (v[0][0] + v[1][1] + v[2][2] + kC2));
        }
    return total / static_cast<D>(windows);
}

/// 2× pixel replication of [.., H, W, C].
Tensor<D> nearest2(const Tensor<D>& lr) {
    const std::size_t r = lr.rank(), H = lr.dim(r - 3), W = lr.dim(r - 2), C = lr.dim(r - 1);
    const std::size_t B = lr.size() / (H * W * C);
    Shape s = lr.shape();
    s[r - 3] *= 2;
    s[r - 2] *= 2;
    Tensor<D> out(s);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < 2 * H; ++y)
            for (std::size_t x = 0; x < 2 * W; ++x)
                for (std::size_t c = 0; c < C; ++c)
                    out[((b * 2 * H + y) * 2 * W + x) * C + c] = lr[((b * H + y / 2) * W + x / 2) * C + c];
    return out;
}

Tensor<D> rand_image(Rng& rng, std::size_t H, std::size_t W) { return random_tensor(rng, {H, W, 3}, 0, 1); }

}  // namespace

TEST(SrLoss, KnownValuesAndShapeCheck) {
    Tensor<D> z(Shape{2, 4, 3}), o(Shape{2, 4, 3}, 1.0);
    EXPECT_EQ(l_sr(z, z).item(), 0.0);
    EXPECT_EQ(l_sr(z, o).item(), 1.0);
    EXPECT_THROW(l_sr(z, Tensor<D>(Shape{4, 2, 3})), DimensionError);
}

TEST(SrLoss, GradientIsScaledResidual) {
    Rng rng(1);
    auto sr = random_tensor(rng, {3, 4, 3}), hr = random_tensor(rng, {3, 4, 3});
    sr.set_requires_grad(true);
    backward(l_sr(sr, hr));
    for (std::size_t i = 0; i < sr.size(); ++i) EXPECT_NEAR(sr.grad()[i], 2 * (sr[i] - hr[i]) / 36.0, 1e-15);
}

TEST(TpLoss, KnownValues) {
    TextPrior<D> target{Tensor<D>(Shape{1, 2}, std::vector<D>{1, 0})};
    TextPrior<D> pred{Tensor<D>(Shape{1, 2}, std::vector<D>{0.5, 0.5})};
    EXPECT_NEAR(l_tp(pred, target).item(), 0.5 + std::log(2.0), 1e-7);
    EXPECT_NEAR(l_tp(target, target).item(), 0.0, 1e-12);
    TextPrior<D> negative{Tensor<D>(Shape{1, 2}, std::vector<D>{1.5, -0.5})};
    EXPECT_THROW(l_tp(negative, target), ContractError);
}

TEST(TpLoss, GradientMatchesFiniteDifferences) {
    Rng rng(2);
    auto logits = random_tensor(rng, {3, 5});
    TextPrior<D> target{ops::softmax_lastdim(random_tensor(rng, {3, 5}))};
    logits.set_requires_grad(true);
    auto err = gradient_check<D>([&] { return l_tp(TextPrior<D>{ops::softmax_lastdim(logits)}, target); }, {logits});
    EXPECT_LT(err, 1e-6);
}

TEST(Ssim, IdentitySymmetryAndShapeCheck) {
    Rng rng(3);
    auto x = rand_image(rng, 16, 24), y = rand_image(rng, 16, 24);
    EXPECT_NEAR(ssim(x, x).item(), 1.0, 1e-12);
    EXPECT_EQ(ssim(x, y).item(), ssim(y, x).item());
    EXPECT_THROW(ssim(x, rand_image(rng, 16, 16)), DimensionError);
}

TEST(Ssim, MatchesScalarOracle) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        auto x = rand_image(rng, 8, 8), y = rand_image(rng, 8, 8);
        EXPECT_NEAR(ssim(x, y).item(), oracle_ssim(x, y, 8, 8), 1e-10);
        auto a = rand_image(rng, 16, 32), b = rand_image(rng, 16, 32);
        EXPECT_NEAR(ssim(a, b).item(), oracle_ssim(a, b, 16, 32), 1e-10);
    }
}

TEST(Tssim, IdentityIsOne) {
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        auto x = rand_image(rng, 16, 64);
        EXPECT_NEAR(tssim(x, x, x).item(), 1.0, 1e-12);
    }
}

TEST(Tssim, PermutationSymmetryIsExact) {
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        auto x = rand_image(rng, 16, 16), y = rand_image(rng, 16, 16), z = rand_image(rng, 16, 16);
        const D v = tssim(x, y, z).item();
        EXPECT_EQ(tssim(x, z, y).item(), v);
        EXPECT_EQ(tssim(y, x, z).item(), v);
        EXPECT_EQ(tssim(y, z, x).item(), v);
        EXPECT_EQ(tssim(z, x, y).item(), v);
        EXPECT_EQ(tssim(z, y, x).item(), v);
    }
}

TEST(Tssim, ConstantImagesMatchClosedForm) {
    for (auto [a, b, c] : {std::array<D, 3>{0.2, 0.5, 0.9}, {0.0, 0.0, 1.0}, {0.3, 0.3, 0.31}, {1, 1, 1}}) {
        auto gray = [](D v) { return Tensor<D>(Shape{8, 16, 3}, v); };
        const D expected = (a * b + b * c + a * c + kC1) / (a * a + b * b + c * c + kC1);
        EXPECT_NEAR(tssim(gray(a), gray(b), gray(c)).item(), expected, 1e-12);
    }
}

TEST(Tssim, MatchesScalarOracle) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(100 + seed);
        auto x = rand_image(rng, 8, 8), y = rand_image(rng, 8, 8), z = rand_image(rng, 8, 8);
        EXPECT_NEAR(tssim(x, y, z).item(), oracle_tssim(x, y, z, 8, 8), 1e-10);
        auto a = rand_image(rng, 16, 24), b = rand_image(rng, 16, 24), c = rand_image(rng, 16, 24);
        EXPECT_NEAR(tssim(a, b, c).item(), oracle_tssim(a, b, c, 16, 24), 1e-10);
    }
}

TEST(Tssim, BoundedAboveByOne) {
    Rng rng(6);
    D worst = -std::numeric_limits<D>::infinity();
    for (int i = 0; i < 2000; ++i) {
        auto x = rand_image(rng, 8, 8), y = rand_image(rng, 8, 8), z = rand_image(rng, 8, 8);
        worst = std::max(worst, tssim(x, y, z).item());
    }
    EXPECT_LE(worst, 1.0 + 1e-9);
}

TEST(Tssim, GlobalWindowUsesWholeImage) {
    Rng rng(7);
    auto x = rand_image(rng, 4, 6), y = rand_image(rng, 4, 6), z = rand_image(rng, 4, 6);
    SsimOptions opt;
    opt.window = SsimWindow::Global;
    const std::vector<std::vector<D>> l{luma_of(x), luma_of(y), luma_of(z)};
    const auto s = window_stats(l, 6, 0, 0, 4, 6);
    const auto& m = s.mean;
    const auto& v = s.cov;
    const D expected = (m[0] * m[1] + m[1] * m[2] + m[0] * m[2] + kC1) * (v[0][1] + v[1][2] + v[0][2] + kC2) /
                       ((m[0] * m[0] + m[1] * m[1] + m[2] * m[2] + kC1) * (v[0][0] + v[1][1] + v[2][2] + kC2));
    EXPECT_NEAR(tssim(x, y, z, opt).item(), expected, 1e-12);
}

TEST(TscLoss, IdentityUpscalerOnExactPairIsZero) {
    Rng rng(8);
    auto y = rand_image(rng, 4, 8);
    auto up = [](const Tensor<D>& lr) { return nearest2(lr); };
    auto x = up(y);
    const auto specs = std::vector<DeformationSpec>{DeformationSpec::identity()};
    auto yb = ops::reshape(y, Shape{1, 4, 8, 3}), xb = ops::reshape(x, Shape{1, 8, 16, 3});
    EXPECT_NEAR(l_tsc(xb, yb, up, specs).item(), 0.0, 1e-12);
}

TEST(TscLoss, RangeAndOracleComposition) {
    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
        auto a = rand_image(rng, 8, 16), b = rand_image(rng, 8, 16), c = rand_image(rng, 8, 16);
        const D v = l_tsc_from_triplet(a, b, c).item();
        EXPECT_GE(v, 0.0);
        EXPECT_LT(v, 2.0);
        EXPECT_NEAR(v, 1.0 - oracle_tssim(a, b, c, 8, 16), 1e-10);
    }
}

TEST(TscLoss, DecreasesAsSecondBranchApproachesTarget) {
    Rng rng(10);
    for (int trial = 0; trial < 5; ++trial) {
        auto a = rand_image(rng, 16, 32), b = rand_image(rng, 16, 32), c = rand_image(rng, 16, 32);
        D prev = std::numeric_limits<D>::infinity();
        for (int k = 0; k <= 10; ++k) {
            const D t = k / 10.0;
            auto blend = ops::add(ops::scale(b, 1 - t), ops::scale(c, t));
            const D v = l_tsc_from_triplet(a, blend, c).item();
            EXPECT_LT(v, prev) << "t=" << t;
            prev = v;
        }
    }
}

TEST(TscLoss, AppliesTheSameDeformationToAllBranches) {
    Rng rng(11);
    auto y = random_tensor(rng, {2, 8, 16, 3}, 0, 1), x = random_tensor(rng, {2, 16, 32, 3}, 0, 1);
    auto up = [](const Tensor<D>& lr) { return nearest2(lr); };
    std::vector<DeformationSpec> specs{{5.0, 0.1, 1.2}, {-7.0, -0.2, 0.8}};
    auto expected = l_tsc_from_triplet(apply_deformation(up(y), specs), up(apply_deformation(y, specs)),
                                       apply_deformation(x, specs));
    EXPECT_EQ(l_tsc(x, y, up, specs).item(), expected.item());
}

TEST(TotalLoss, WeightedSumAndDisabledTerms) {
    Tensor<D> sr(Shape{}, std::vector<D>{1.0}), tp(Shape{}, std::vector<D>{0.5}), tsc(Shape{}, std::vector<D>{0.2});
    EXPECT_NEAR(total_loss<D>(sr, tp, tsc, LossWeights{}).item(), 1.52, 1e-15);
    EXPECT_EQ(total_loss<D>(sr, tp, tsc, LossWeights{1.0, 0.0}).item(), 1.5);
    EXPECT_EQ(total_loss<D>(sr, std::nullopt, std::nullopt, LossWeights{}).item(), 1.0);
}

TEST(TotalLoss, GradientIsSumOfComponentGradients) {
    Rng rng(12);
    auto p = random_tensor(rng, {4});
    auto q = random_tensor(rng, {4});
    auto terms = [&] {
        return std::array<Tensor<D>, 3>{ops::sum(ops::square(p)), ops::sum(ops::mul(p, q)), ops::sum(ops::exp(p))};
    };
    p.set_requires_grad(true);
    auto t = terms();
    backward(total_loss<D>(t[0], t[1], t[2], LossWeights{}));
    const auto g = p.grad().data();
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g[i], 2 * p[i] + q[i] + 0.1 * std::exp(p[i]), 1e-14);
    auto err = gradient_check<D>([&] { auto u = terms(); return total_loss<D>(u[0], u[1], u[2], LossWeights{}); }, {p});
    EXPECT_LT(err, 1e-8);
}

TEST(Psnr, KnownValues) {
    Tensor<D> z(Shape{2, 2, 3}), o(Shape{2, 2, 3}, 1.0), t(Shape{2, 2, 3}, 0.1);
    EXPECT_EQ(psnr(z, o), 0.0);
    EXPECT_NEAR(psnr(z, t), 20.0, 1e-12);
    EXPECT_TRUE(std::isinf(psnr(o, o)));
}
