#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace tatt;
using tatt::test::random_tensor;
using D = double;
using namespace tatt::test::oracle;

namespace {

Mat scalar_layer_norm(Mat x, const Tensor<D>& gain, const Tensor<D>& bias) {
    for (auto& row : x) {
        const D c = static_cast<D>(row.size());
        const D mu = std::accumulate(row.begin(), row.end(), 0.0) / c;
        D var = 0;
        for (D v : row) var += (v - mu) * (v - mu);
        var /= c;
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mu) / std::sqrt(var + 1e-5) * gain[j] + bias[j];
    }
    return x;
}

Mat scalar_ffn(const Mat& x, const ParamStore<D>& ps, const std::string& path) {
    const auto& w1 = ps.get(path + "/fc1/w");
    const auto& b1 = ps.get(path + "/fc1/b");
    const auto& w2 = ps.get(path + "/fc2/w");
    const auto& b2 = ps.get(path + "/fc2/b");
    const std::size_t c = x[0].size(), hid = b1.size();
    auto h = mat_mul(x, to_mat(w1, c, hid));
    for (auto& row : h)
        for (std::size_t j = 0; j < hid; ++j) row[j] = std::max(0.0, row[j] + b1[j]);
    auto y = mat_mul(h, to_mat(w2, hid, c));
    for (auto& row : y)
        for (std::size_t j = 0; j < c; ++j) row[j] += b2[j];
    return y;
}

Mat add(Mat a, const Mat& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
    return a;
}

void expect_mat_near(const Tensor<D>& t, const Mat& m, D tol, std::size_t offset = 0) {
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m[i].size(); ++j) ASSERT_NEAR(t[offset + i * m[i].size() + j], m[i][j], tol);
}

}  // namespace

TEST(FixedPositionalEncoding, KnownValues) {
    auto pe = fixed_positional_encoding<D>(2, 4);
    EXPECT_EQ(std::vector<D>(pe.data().begin(), pe.data().begin() + 4), (std::vector<D>{0, 1, 0, 1}));
    EXPECT_DOUBLE_EQ(pe[4], std::sin(1.0));
    EXPECT_DOUBLE_EQ(pe[5], std::cos(1.0));
    EXPECT_NEAR(pe[6], std::sin(0.01), 1e-15);
    EXPECT_NEAR(pe[7], std::cos(0.01), 1e-15);
}

TEST(FixedPositionalEncoding, RangeAndOddChannels) {
    auto pe = fixed_positional_encoding<D>(512, 64);
    for (D v : pe.data()) EXPECT_LE(std::abs(v), 1.0);
    EXPECT_THROW(fixed_positional_encoding<D>(4, 5), DimensionError);
}

TEST(RecurrentPositionalEncoding, ZeroParametersGiveZeroCode) {
    ParamStore<D> ps;
    Rng rng(1);
    init_recurrent_positional_encoding(ps, rng, "rpe", 16, 64, 64);
    for (auto* name : {"rpe/param", "rpe/fwd/z/b", "rpe/fwd/n/b"}) tatt::test::fill(ps.get(name), 0);
    auto code = recurrent_positional_encoding(ps, "rpe");
    EXPECT_EQ(code.shape(), (Shape{16, 64, 64}));
    for (D v : code.data()) EXPECT_EQ(v, 0.0);
}

TEST(RecurrentPositionalEncoding, ScansLeftToRightOnly) {
    ParamStore<D> ps;
    Rng rng(2);
    init_recurrent_positional_encoding(ps, rng, "rpe", 2, 5, 4);
    auto before = recurrent_positional_encoding(ps, "rpe");
    ps.get("rpe/param")[(1 * 5 + 3) * 4 + 2] += 0.5;  // row 1, column 3
    auto after = recurrent_positional_encoding(ps, "rpe");
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
            D diff = 0;
            for (std::size_t c = 0; c < 4; ++c) diff += std::abs(after[(y * 5 + x) * 4 + c] - before[(y * 5 + x) * 4 + c]);
            if (y == 1 && x >= 3)
                EXPECT_GT(diff, 0.0);
            else
                EXPECT_EQ(diff, 0.0);
        }
}

TEST(CrossAttentionHead, SingleKeyReturnsProjectedValue) {
    Rng rng(3);
    auto f_e = random_tensor(rng, {1, 4}), f_i = random_tensor(rng, {6, 4});
    auto wa = random_tensor(rng, {4, 3}), wb = random_tensor(rng, {4, 3}), wg = random_tensor(rng, {4, 3});
    auto r = cross_attention_head(f_e, f_i, wa, wb, wg);
    auto v = ops::matmul(f_e, wg);
    for (std::size_t q = 0; q < 6; ++q) {
        EXPECT_EQ(r.weights.heads[0][q], 1.0);
        for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(r.out[q * 3 + d], v[d], 1e-15);
    }
}

TEST(CrossAttentionHead, IdenticalKeysSplitEvenly) {
    Rng rng(4);
    auto row = random_tensor(rng, {1, 4});
    auto f_e = ops::concat_lastdim<D>({row, row});
    f_e = ops::reshape(f_e, Shape{2, 4});
    auto f_i = random_tensor(rng, {5, 4});
    auto r = cross_attention_head(f_e, f_i, random_tensor(rng, {4, 2}), random_tensor(rng, {4, 2}), random_tensor(rng, {4, 2}));
    for (D v : r.weights.heads[0].data()) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(CrossAttentionHead, HandSizedScalarOracle) {
    // l=2 keys, hw=2 queries, d_k=1
    Tensor<D> f_e(Shape{2, 2}, std::vector<D>{0.5, -1.0, 2.0, 0.25});
    Tensor<D> f_i(Shape{2, 2}, std::vector<D>{1.0, 0.0, -0.5, 1.5});
    Tensor<D> wa(Shape{2, 1}, std::vector<D>{0.3, -0.7});
    Tensor<D> wb(Shape{2, 1}, std::vector<D>{1.1, 0.4});
    Tensor<D> wg(Shape{2, 1}, std::vector<D>{-0.2, 0.9});
    auto r = cross_attention_head(f_e, f_i, wa, wb, wg);
    const D k0 = 0.5 * 1.1 - 1.0 * 0.4, k1 = 2.0 * 1.1 + 0.25 * 0.4;
    const D v0 = 0.5 * -0.2 - 1.0 * 0.9, v1 = 2.0 * -0.2 + 0.25 * 0.9;
    const D qs[2] = {1.0 * 0.3, -0.5 * 0.3 + 1.5 * -0.7};
    for (std::size_t q = 0; q < 2; ++q) {
        const D e0 = std::exp(qs[q] * k0), e1 = std::exp(qs[q] * k1);
        EXPECT_NEAR(r.weights.heads[0][q * 2], e0 / (e0 + e1), 1e-15);
        EXPECT_NEAR(r.out[q], (e0 * v0 + e1 * v1) / (e0 + e1), 1e-15);
    }
}

TEST(CrossAttentionHead, ShapeMismatchThrows) {
    Rng rng(5);
    EXPECT_THROW(cross_attention_head(random_tensor(rng, {2, 4}), random_tensor(rng, {3, 5}), random_tensor(rng, {4, 2}),
                                      random_tensor(rng, {4, 2}), random_tensor(rng, {4, 2})),
                 DimensionError);
    EXPECT_THROW(cross_attention_head(random_tensor(rng, {2, 4}), random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2}),
                                      random_tensor(rng, {4, 3}), random_tensor(rng, {4, 2})),
                 DimensionError);
}

TEST(CrossAttentionHead, InvariantToLogitShift) {
    // A constant extra key channel adds the same amount to every logit of a query.
    Rng rng(6);
    auto f_e = random_tensor(rng, {3, 2}), f_i = random_tensor(rng, {4, 2});
    auto wa = random_tensor(rng, {2, 2}), wb = random_tensor(rng, {2, 2}), wg = random_tensor(rng, {2, 2});
    auto base = cross_attention_head(f_e, f_i, wa, wb, wg);
    auto widen = [](const Tensor<D>& t, std::size_t rows, D extra) {
        Tensor<D> r(Shape{rows, 3});
        for (std::size_t i = 0; i < rows; ++i) {
            r[i * 3] = t[i * 2];
            r[i * 3 + 1] = t[i * 2 + 1];
            r[i * 3 + 2] = extra;
        }
        return r;
    };
    auto stack = [](const Tensor<D>& w, std::vector<D> last) {
        Tensor<D> r(Shape{3, 2});
        for (std::size_t i = 0; i < 4; ++i) r[i] = w[i];
        r[4] = last[0];
        r[5] = last[1];
        return r;
    };
    auto shifted = cross_attention_head(widen(f_e, 3, 1.0), widen(f_i, 4, 0.0), stack(wa, {0.3, -0.2}),
                                        stack(wb, {2.5, -1.5}), stack(wg, {0.0, 0.0}));
    for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(shifted.weights.heads[0][i], base.weights.heads[0][i], 1e-14);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(shifted.out[i], base.out[i], 1e-14);
}

TEST(MultiHeadAttention, RowsSumToOneAndMatchScalarOracle) {
    std::size_t instances = 0;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        Rng rng(seed);
        AttentionConfig cfg;
        cfg.heads = 1 + rng.below(4);
        cfg.channels = cfg.heads * (1 + rng.below(4));
        cfg.d_k = 1 + rng.below(5);
        const std::size_t l = 1 + rng.below(6), hw = 1 + rng.below(9);
        ParamStore<D> ps;
        init_multi_head_attention(ps, rng, "mca", cfg);
        auto f_e = random_tensor(rng, {l, cfg.channels}, -3, 3), f_i = random_tensor(rng, {hw, cfg.channels}, -3, 3);
        auto r = multi_head_cross_attention(f_e, f_i, cfg, ps, "mca");
        auto [out, maps] = scalar_mca(to_mat(f_e, l, cfg.channels), to_mat(f_i, hw, cfg.channels), cfg, ps, "mca");
        expect_mat_near(r.out, out, 1e-10);
        ASSERT_EQ(r.weights.heads.size(), cfg.heads);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            expect_mat_near(r.weights.heads[h], maps[h], 1e-10);
            for (std::size_t q = 0; q < hw; ++q) {
                D s = 0;
                for (std::size_t k = 0; k < l; ++k) {
                    const D a = r.weights.heads[h][q * l + k];
                    EXPECT_GE(a, 0.0);
                    EXPECT_LE(a, 1.0);
                    s += a;
                }
                EXPECT_NEAR(s, 1.0, 1e-6);
            }
        }
        ++instances;
    }
    EXPECT_GE(instances, 50u);
}

TEST(MultiHeadAttention, SingleHeadIsHeadThenOutputProjection) {
    Rng rng(7);
    AttentionConfig cfg{1, 4, 3, 8};
    ParamStore<D> ps;
    init_multi_head_attention(ps, rng, "m", cfg);
    auto f_e = random_tensor(rng, {3, 4}), f_i = random_tensor(rng, {5, 4});
    auto head = cross_attention_head(f_e, f_i, ps.get("m/head0/w_alpha"), ps.get("m/head0/w_beta"), ps.get("m/head0/w_gamma"));
    auto expected = ops::matmul(head.out, ps.get("m/w_o"));
    EXPECT_EQ(multi_head_cross_attention(f_e, f_i, cfg, ps, "m").out.data(), expected.data());
}

TEST(MultiHeadAttention, PaperShapesAndHeadCountInvariance) {
    for (std::size_t heads : {1, 2, 4}) {
        Rng rng(8);
        AttentionConfig cfg{heads, 64, 64, 64};
        ParamStore<D> ps;
        init_multi_head_attention(ps, rng, "m", cfg);
        auto r = multi_head_cross_attention(random_tensor(rng, {16, 64}), random_tensor(rng, {1024, 64}), cfg, ps, "m");
        EXPECT_EQ(r.out.shape(), (Shape{1024, 64}));
        EXPECT_EQ(r.weights.heads.size(), heads);
        EXPECT_EQ(r.weights.heads[0].shape(), (Shape{1024, 16}));
    }
}

TEST(MultiHeadAttention, IndivisibleChannelsRejected) {
    AttentionConfig cfg{3, 64, 64, 64};
    ParamStore<D> ps;
    Rng rng(9);
    EXPECT_ANY_THROW(init_multi_head_attention(ps, rng, "m", cfg));
}

TEST(MultiHeadSelfAttention, ScalarOracleThreeTokens) {
    Rng rng(10);
    AttentionConfig cfg{1, 2, 2, 4};
    ParamStore<D> ps;
    init_multi_head_attention(ps, rng, "s", cfg);
    auto x = random_tensor(rng, {3, 2});
    auto [out, maps] = scalar_mca(to_mat(x, 3, 2), to_mat(x, 3, 2), cfg, ps, "s");
    expect_mat_near(multi_head_self_attention(x, cfg, ps, "s"), out, 1e-12);
}

TEST(MultiHeadSelfAttention, PermutationEquivariant) {
    Rng rng(11);
    AttentionConfig cfg{2, 8, 4, 8};
    ParamStore<D> ps;
    init_multi_head_attention(ps, rng, "s", cfg);
    auto x = ops::add(random_tensor(rng, {5, 8}), fixed_positional_encoding<D>(5, 8));
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Tensor<D> xp(Shape{5, 8});
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t c = 0; c < 8; ++c) xp[i * 8 + c] = x[perm[i] * 8 + c];
    auto y = multi_head_self_attention(x, cfg, ps, "s"), yp = multi_head_self_attention(xp, cfg, ps, "s");
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(yp[i * 8 + c], y[perm[i] * 8 + c], 1e-9);
}

TEST(MultiHeadSelfAttention, SingleTokenIgnoresQuery) {
    Rng rng(12);
    AttentionConfig cfg{1, 4, 3, 4};
    ParamStore<D> ps;
    init_multi_head_attention(ps, rng, "s", cfg);
    auto x = random_tensor(rng, {1, 4});
    auto expected = ops::matmul(ops::matmul(x, ps.get("s/head0/w_gamma")), ps.get("s/w_o"));
    expect_mat_near(multi_head_self_attention(x, cfg, ps, "s"), to_mat(expected, 1, 4), 1e-15);
}

TEST(FeedForward, ZeroWeightsAndPositionWise) {
    Rng rng(13);
    ParamStore<D> ps;
    init_feed_forward(ps, rng, "f", 4, 6);
    auto x = random_tensor(rng, {3, 4});
    auto y = feed_forward_network(x, ps, "f");
    expect_mat_near(y, scalar_ffn(to_mat(x, 3, 4), ps, "f"), 1e-14);
    Tensor<D> xs(Shape{3, 4});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 4; ++c) xs[i * 4 + c] = x[(2 - i) * 4 + c];
    auto ys = feed_forward_network(xs, ps, "f");
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(ys[i * 4 + c], y[(2 - i) * 4 + c]);
    for (auto& [name, e] : ps.entries()) tatt::test::fill(e.tensor, 0);
    const auto zero = feed_forward_network(x, ps, "f");
    for (D v : zero.data()) EXPECT_EQ(v, 0.0);
}

namespace {

InterpreterConfig small_interpreter(std::size_t l, std::size_t h, std::size_t w, std::size_t c, std::size_t heads) {
    InterpreterConfig ic;
    ic.attention = AttentionConfig{heads, c, c / heads, 2 * c};
    ic.seq_len = l;
    ic.feat_h = h;
    ic.feat_w = w;
    return ic;
}

TextPrior<D> random_prior(Rng& rng, std::size_t l, std::size_t a = kAlphabetSize) {
    return {ops::softmax_lastdim(random_tensor(rng, {l, a}, -2, 2))};
}

}  // namespace

TEST(Interpreter, DefaultShapes) {
    Rng rng(14);
    InterpreterConfig ic;
    ParamStore<D> ps;
    init_interpreter(ps, rng, "i", ic);
    auto enc = encode_prior(random_prior(rng, 16), ps, "i", ic);
    EXPECT_EQ(enc.f_e.shape(), (Shape{16, 64}));
    auto dec = decode_to_tp_map(enc, random_tensor(rng, {16, 64, 64}), ps, "i", ic);
    EXPECT_EQ(dec.tp_map.map.shape(), (Shape{16, 64, 64}));
    ASSERT_EQ(dec.weights.heads.size(), 4u);
    EXPECT_EQ(dec.weights.heads[0].shape(), (Shape{1024, 16}));
}

TEST(Interpreter, UnnormalizedPriorAndChannelMismatchRejected) {
    Rng rng(15);
    auto ic = small_interpreter(3, 2, 2, 4, 1);
    ParamStore<D> ps;
    init_interpreter(ps, rng, "i", ic);
    TextPrior<D> bad{Tensor<D>(Shape{3, kAlphabetSize}, 0.5)};
    EXPECT_THROW(encode_prior(bad, ps, "i", ic), ContractError);
    auto enc = encode_prior(random_prior(rng, 3), ps, "i", ic);
    EXPECT_THROW(decode_to_tp_map(enc, random_tensor(rng, {2, 2, 5}), ps, "i", ic), DimensionError);
}

TEST(Interpreter, EncoderIsNotPermutationSymmetric) {
    Rng rng(16);
    auto ic = small_interpreter(4, 2, 2, 8, 2);
    ParamStore<D> ps;
    init_interpreter(ps, rng, "i", ic);
    auto p = random_prior(rng, 4);
    Tensor<D> swapped = p.probs;
    for (std::size_t j = 0; j < kAlphabetSize; ++j) std::swap(swapped[j], swapped[kAlphabetSize + j]);
    auto a = encode_prior(p, ps, "i", ic).f_e, b = encode_prior(TextPrior<D>{swapped}, ps, "i", ic).f_e;
    D diff = 0;
    for (std::size_t c = 0; c < 8; ++c) diff += std::abs(a[c] - b[8 + c]) + std::abs(a[8 + c] - b[c]);
    EXPECT_GT(diff, 1e-6);
}

TEST(Interpreter, SingleKeyPriorGivesSpatiallyConstantMapWithoutRpe) {
    Rng rng(17);
    auto ic = small_interpreter(1, 3, 4, 4, 2);
    ParamStore<D> ps;
    init_interpreter(ps, rng, "i", ic);
    for (auto& [name, e] : ps.entries())
        if (name.rfind("i/dec/rpe", 0) == 0) tatt::test::fill(e.tensor, 0);
    auto enc = encode_prior(random_prior(rng, 1), ps, "i", ic);
    auto map = decode_to_tp_map(enc, random_tensor(rng, {3, 4, 4}), ps, "i", ic).tp_map.map;
    for (std::size_t p = 1; p < 12; ++p)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(map[p * 4 + c], map[c]);
}

TEST(Interpreter, DecoderMatchesScalarOracle) {
    Rng rng(18);
    auto ic = small_interpreter(2, 2, 2, 2, 1);
    ParamStore<D> ps;
    init_interpreter(ps, rng, "i", ic);
    for (auto& [name, e] : ps.entries())
        if (name.find("/ln") != std::string::npos)
            for (auto& v : e.tensor.data()) v = rng.uniform(0.5, 1.5);
    auto enc = encode_prior(random_prior(rng, 2), ps, "i", ic);
    auto f_i = random_tensor(rng, {2, 2, 2});
    auto dec = decode_to_tp_map(enc, f_i, ps, "i", ic);

    auto rpe = recurrent_positional_encoding(ps, "i/dec/rpe");
    Mat q = to_mat(f_i, 4, 2);
    for (std::size_t p = 0; p < 4; ++p)
        for (std::size_t c = 0; c < 2; ++c) q[p][c] += rpe[p * 2 + c];
    auto [mca, maps] = scalar_mca(to_mat(enc.f_e, 2, 2), q, ic.attention, ps, "i/dec/layer0/mca");
    auto y = scalar_layer_norm(mca, ps.get("i/dec/layer0/ln1/gain"), ps.get("i/dec/layer0/ln1/bias"));
    y = scalar_layer_norm(add(y, scalar_ffn(y, ps, "i/dec/layer0/ffn")), ps.get("i/dec/layer0/ln2/gain"),
                          ps.get("i/dec/layer0/ln2/bias"));
    expect_mat_near(dec.tp_map.map, y, 1e-10);
    expect_mat_near(dec.weights.heads[0], maps[0], 1e-12);
}

TEST(Interpreter, EncoderMatchesScalarOracle) {
    Rng rng(19);
    auto ic = small_interpreter(3, 2, 2, 4, 2);
    ParamStore<D> ps;
    init_interpreter(ps, rng, "i", ic);
    auto prior = random_prior(rng, 3);
    auto f_e = encode_prior(prior, ps, "i", ic).f_e;

    Mat x = mat_mul(to_mat(prior.probs, 3, kAlphabetSize), to_mat(ps.get("i/enc/in_proj/w"), kAlphabetSize, 4));
    auto pe = fixed_positional_encoding<D>(3, 4);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 4; ++c) x[i][c] += ps.get("i/enc/in_proj/b")[c] + pe[i * 4 + c];
    auto msa = scalar_mca(x, x, ic.attention, ps, "i/enc/layer0/msa").first;
    x = scalar_layer_norm(add(x, msa), ps.get("i/enc/layer0/ln1/gain"), ps.get("i/enc/layer0/ln1/bias"));
    x = scalar_layer_norm(add(x, scalar_ffn(x, ps, "i/enc/layer0/ffn")), ps.get("i/enc/layer0/ln2/gain"),
                          ps.get("i/enc/layer0/ln2/bias"));
    expect_mat_near(f_e, x, 1e-10);
}

TEST(HeatmapExtract, UniformAttentionIsAllZero) {
    AttentionWeights<D> w{{Tensor<D>(Shape{6, 4}, 0.25), Tensor<D>(Shape{6, 4}, 0.25)}};
    auto m = attention_heatmap_extract(w, 2, 2, 3);
    EXPECT_EQ(m.shape(), (Shape{2, 3}));
    for (D v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(HeatmapExtract, OneHotCellAndBounds) {
    Tensor<D> a(Shape{6, 2}, 0.5);
    a[4 * 2 + 1] = 1.0;
    a[4 * 2 + 0] = 0.0;
    for (std::size_t p = 0; p < 6; ++p)
        if (p != 4) a[p * 2 + 1] = 0.0, a[p * 2] = 1.0;
    auto m = attention_heatmap_extract(AttentionWeights<D>{{a}}, 1, 2, 3);
    for (std::size_t p = 0; p < 6; ++p) EXPECT_EQ(m[p], p == 4 ? 1.0 : 0.0);
    EXPECT_THROW(attention_heatmap_extract(AttentionWeights<D>{{a}}, 2, 2, 3), BoundsError);
}

TEST(HeatmapExtract, AveragesHeadsBeforeNormalizing) {
    Tensor<D> a(Shape{2, 1}, std::vector<D>{0.2, 0.6}), b(Shape{2, 1}, std::vector<D>{0.4, 0.0});
    auto raw = attention_heatmap_extract(AttentionWeights<D>{{a, b}}, 0, 1, 2, 0, false);
    EXPECT_NEAR(raw[0], 0.3, 1e-15);
    EXPECT_NEAR(raw[1], 0.3, 1e-15);
}
