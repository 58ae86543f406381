#include <gtest/gtest.h>

#include <cmath>

#include "kernel_oracle.hpp"
#include "ssw/gradient_suite.hpp"

using namespace ssw;
using V = Var<double>;

namespace {

Tensor<double> rnd(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
    return random_uniform<double>(std::move(s), seed, lo, hi);
}

void zero(const Var<double>& v) { v.node()->value.fill(0.0); }

}  // namespace

TEST(WindowPartition, RoundTripIsExact) {
    for (std::size_t m : {1u, 2u, 3u, 6u}) {
        auto x = V::constant(rnd({2, 6, 12, 3}, m));
        auto w = window_partition(x, m);
        EXPECT_EQ(w.shape(), (Shape{2 * (6 / m) * (12 / m), m * m, 3}));
        EXPECT_EQ(window_reverse(w, m, 2, 6, 12).value(), x.value());
    }
}

TEST(WindowPartition, WholeMapWindowKeepsRowMajorOrder) {
    auto x = V::constant(rnd({1, 4, 4, 2}, 1));
    auto w = window_partition(x, 4);
    EXPECT_EQ(w.shape(), (Shape{1, 16, 2}));
    EXPECT_EQ(w.value().data()[0], x.value().data()[0]);
    for (std::size_t i = 0; i < 32; ++i) EXPECT_EQ(w.value()[i], x.value()[i]);
}

TEST(WindowPartition, WindowTokensComeFromTheirTile) {
    Tensor<double> ramp({1, 4, 6, 1});
    for (std::size_t i = 0; i < 24; ++i) ramp[i] = double(i);
    auto w = window_partition(V::constant(ramp), 2).value();
    for (std::size_t wy = 0; wy < 2; ++wy)
        for (std::size_t wx = 0; wx < 3; ++wx)
            for (std::size_t p = 0; p < 4; ++p)
                EXPECT_EQ(w.at(wy * 3 + wx, p, 0), ramp.at(0, wy * 2 + p / 2, wx * 2 + p % 2, 0));
}

TEST(WindowPartition, RejectsNonDividingWindow) {
    EXPECT_THROW(window_partition(V::constant(Tensor<double>({1, 6, 6, 1})), 4), ShapeError);
}

TEST(ShiftMask, InteriorWindowsAreUnmasked) {
    auto mask = build_shift_mask<double>(16, 16, 4, 2);
    ASSERT_EQ(mask.shape(), (Shape{16, 16, 16}));
    for (std::size_t wy = 0; wy < 3; ++wy)
        for (std::size_t wx = 0; wx < 3; ++wx)
            for (std::size_t k = 0; k < 256; ++k) EXPECT_EQ(mask[(wy * 4 + wx) * 256 + k], 0.0);
}

TEST(ShiftMask, SingleWindowSplitsIntoQuadrants) {
    for (std::size_t m : {4u, 6u, 8u}) {
        const std::size_t s = m / 2;
        auto mask = build_shift_mask<double>(m, m, m, s);
        for (std::size_t a = 0; a < m * m; ++a)
            for (std::size_t b = 0; b < m * m; ++b) {
                const bool same = (a / m >= s) == (b / m >= s) && (a % m >= s) == (b % m >= s);
                EXPECT_EQ(mask.at(0, a, b), same ? 0.0 : -kMaskLarge) << m << " " << a << " " << b;
            }
    }
}

TEST(ShiftMask, ZeroShiftHasNoMask) {
    EXPECT_THROW(build_shift_mask<double>(8, 8, 4, 0), std::invalid_argument);
}

TEST(CyclicShift, RoundTripIsExact) {
    auto x = V::constant(rnd({1, 8, 8, 3}, 2));
    auto y = cyclic_roll(cyclic_roll(x, 1, -2), 2, -2);
    EXPECT_NE(y.value(), x.value());
    y = cyclic_roll(cyclic_roll(y, 1, 2), 2, 2);
    EXPECT_EQ(y.value(), x.value());
}

TEST(WindowAttention, SingleTokenIsValueProjection) {
    ParameterSet<double> ps;
    WindowAttention<double> attn(ps, "a", 4, 1, 2);
    detail::randomize(ps, 3);
    auto x = V::constant(rnd({5, 1, 4}, 4));
    auto wv = slice(attn.qkv().weight, 0, 8, 4);
    auto bv = slice(attn.qkv().bias, 0, 8, 4);
    auto ref = attn.proj()(linear(x, wv, bv));
    EXPECT_LT(max_abs_diff(attn(x).value(), ref.value()), 1e-12);
}

TEST(WindowAttention, FullMapWindowMatchesDenseAttention) {
    for (std::size_t heads : {1u, 2u, 4u}) {
        ParameterSet<double> ps;
        WindowAttention<double> attn(ps, "a", 8, 4, heads);
        detail::randomize(ps, 5 + heads, -0.5, 0.5);
        zero(attn.bias_table());
        auto x = rnd({1, 4, 4, 8}, 6);
        auto y = attn(window_partition(V::constant(x), 4));
        auto ref = oracle::dense_attention(x.reshaped({16, 8}), attn.qkv().weight.value(), attn.qkv().bias.value(),
                                   attn.proj().weight.value(), attn.proj().bias.value(), heads);
        EXPECT_LT(max_abs_diff(y.value().reshaped({16, 8}), ref), 1e-5);
    }
}

TEST(WindowAttention, RelativeBiasChangesLogitsAndCanBeDisabled) {
    ParameterSet<double> with, without;
    WindowAttention<double> a(with, "a", 4, 2, 1, true), b(without, "a", 4, 2, 1, false);
    EXPECT_EQ(with.element_count() - without.element_count(), 9u);
    EXPECT_FALSE(b.bias_table().valid());
    detail::randomize(with, 7);
    auto x = V::constant(rnd({3, 4, 4}, 8));
    auto y1 = a(x).value();
    zero(a.bias_table());
    EXPECT_GT(max_abs_diff(y1, a(x).value()), 1e-6);
}

TEST(WindowAttention, ShiftedMaskBlocksCrossRegionMass) {
    const std::size_t h = 8, m = 4, s = 2;
    ParameterSet<float> ps;
    WindowAttention<float> attn(ps, "a", 6, m, 2);
    for (auto& p : ps.all()) p.mutable_value() = random_uniform<float>(p.value().shape(), 9, -2.0f, 2.0f);
    auto x = Var<float>::constant(random_uniform<float>({1, h, h, 6}, 10, -3.0f, 3.0f));
    auto rolled = cyclic_roll(cyclic_roll(x, 1, -long(s)), 2, -long(s));
    auto mask = build_shift_mask<float>(h, h, m, s);
    Var<float> probs;
    attn(window_partition(rolled, m), &mask, &probs);
    ASSERT_EQ(probs.shape(), (Shape{4, 2, 16, 16}));
    const auto labels = shift_region_labels(h, h, m, s);
    auto label_of = [&](std::size_t win, std::size_t p) {
        return labels[((win / 2) * m + p / m) * h + (win % 2) * m + p % m];
    };
    double worst_cross = 0, worst_row = 0;
    for (std::size_t w = 0; w < 4; ++w)
        for (std::size_t hd = 0; hd < 2; ++hd)
            for (std::size_t a = 0; a < 16; ++a) {
                double cross = 0, row = 0;
                for (std::size_t b = 0; b < 16; ++b) {
                    const double p = probs.value().at(w, hd, a, b);
                    row += p;
                    if (label_of(w, a) != label_of(w, b)) cross += p;
                }
                worst_cross = std::max(worst_cross, cross);
                worst_row = std::max(worst_row, std::abs(row - 1.0));
            }
    EXPECT_LE(worst_cross, 1e-6);
    EXPECT_LE(worst_row, 1e-6);
}

TEST(SwinBlock, EffectiveWindowShrinksOnSmallMaps) {
    ParameterSet<double> ps;
    SwinBlock<double> blk(ps, "b", 4, {8, 4, 1, true});
    EXPECT_EQ(blk.effective_window(16, 16), (std::pair<std::size_t, std::size_t>{8, 4}));
    EXPECT_EQ(blk.effective_window(6, 20), (std::pair<std::size_t, std::size_t>{6, 0}));
    EXPECT_THROW(SwinBlock<double>(ps, "c", 4, {4, 4, 1, true}), std::invalid_argument);
}

TEST(SwinBlockPair, PreservesShapeIncludingPaddedExtents) {
    ParameterSet<float> ps;
    SwinBlockPair<float> pair(ps, "p", 8, 4, 2);
    init_parameters(ps, 11);
    for (Shape s : {Shape{2, 8, 8, 8}, Shape{1, 10, 6, 8}, Shape{1, 3, 3, 8}}) {
        auto x = Var<float>::constant(random_uniform<float>(s, 12));
        auto y = pair(pair(x));
        EXPECT_EQ(y.shape(), s);
        EXPECT_TRUE(y.value().all_finite());
    }
}

TEST(SwinBlockPair, ZeroOutputProjectionsGiveIdentity) {
    ParameterSet<double> ps;
    SwinBlockPair<double> pair(ps, "p", 4, 4, 2);
    detail::randomize(ps, 13);
    for (const auto* blk : {&pair.regular(), &pair.shifted()}) {
        zero(blk->attention().proj().weight);
        zero(blk->attention().proj().bias);
        zero(blk->mlp().fc2.weight);
        zero(blk->mlp().fc2.bias);
    }
    auto x = V::constant(rnd({1, 8, 8, 4}, 14));
    EXPECT_EQ(pair(x).value(), x.value());
}

TEST(SwinBlockPair, GradientCheck8x8) {
    ParameterSet<double> ps;
    SwinBlockPair<double> pair(ps, "p", 4, 4, 2);
    detail::randomize(ps, 15);
    auto x = V::leaf(rnd({1, 8, 8, 4}, 16));
    auto rep = gradcheck("swin_pair_8x8", [&] { return random_projection(pair(x), 17); }, detail::with_params({x}, ps));
    EXPECT_LE(rep.max_rel_error, kGradTolerance) << rep.worst;
    EXPECT_GT(rep.nonzero, 0u);
}

TEST(PatchMerging, OutputShape) {
    ParameterSet<double> ps;
    PatchMerging<double> merge(ps, "m", 3);
    init_parameters(ps, 1);
    EXPECT_EQ(merge(V::constant(rnd({1, 4, 4, 3}, 2))).shape(), (Shape{1, 2, 2, 6}));
    EXPECT_THROW(merge(V::constant(rnd({1, 5, 4, 3}, 2))), ShapeError);
}

TEST(PatchMerging, GatherMatchesIndexOracle) {
    Tensor<double> ramp({1, 4, 4, 2});
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = double(i);
    auto g = PatchMerging<double>::gather(V::constant(ramp)).value();
    const std::size_t dy[4] = {0, 1, 0, 1}, dx[4] = {0, 0, 1, 1};
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t q = 0; q < 4; ++q)
                for (std::size_t c = 0; c < 2; ++c)
                    EXPECT_EQ(g.at(0, i, j, q * 2 + c), ramp.at(0, 2 * i + dy[q], 2 * j + dx[q], c));
}

TEST(PatchMerging, ParameterCount) {
    for (std::size_t c : {1u, 3u, 36u}) {
        ParameterSet<float> ps;
        PatchMerging<float> merge(ps, "m", c);
        EXPECT_EQ(ps.element_count(), 4 * c * 2 * c + 2 * 4 * c);
    }
}

TEST(DefaultHeads, DividesChannels) {
    EXPECT_EQ(default_heads(8), 1u);
    EXPECT_EQ(default_heads(36), 1u);
    EXPECT_EQ(default_heads(72), 2u);
    EXPECT_EQ(default_heads(144), 4u);
    for (std::size_t c = 1; c < 600; ++c) EXPECT_EQ(c % default_heads(c), 0u);
}
