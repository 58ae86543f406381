#include <gtest/gtest.h>

#include <random>

#include "morph_oracle.hpp"
#include "ssw/gradient_suite.hpp"

using namespace ssw;
using V = Var<double>;

namespace {

V grid(const oracle::Grid& g, std::size_t h, std::size_t w) { return V::constant(Tensor<double>({1, 1, h, w}, g)); }

oracle::Grid values(const V& v) { return {v.value().data().begin(), v.value().data().end()}; }

oracle::Grid disk(std::size_t n, double r) {
    oracle::Grid g(n * n);
    const double c = double(n - 1) / 2;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] = std::hypot(i - c, j - c) <= r ? 1.0 : 0.0;
    return g;
}

oracle::Grid random_binary(std::size_t n, std::mt19937_64& rng, double p = 0.5) {
    std::bernoulli_distribution coin(p);
    oracle::Grid g(n);
    for (auto& v : g) v = coin(rng) ? 1.0 : 0.0;
    return g;
}

/// Vessel-like target: two crossing thick lines.
oracle::Grid vessels(std::size_t n) {
    oracle::Grid g(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const bool a = (i >= n / 3 && i < n / 3 + 3);
            const bool b = std::abs(long(j) - long(i) / 2 - 4) <= 1;
            g[i * n + j] = (a || b) ? 1.0 : 0.0;
        }
    return g;
}

}  // namespace

TEST(SoftMorphology, ErodeOfOnesIsOnes) {
    auto e = soft_erode(V::constant(Tensor<double>({1, 1, 6, 7}, 1.0)));
    for (double v : e.value().data()) EXPECT_EQ(v, 1.0);
}

TEST(SoftMorphology, DilatePointGivesBlock) {
    oracle::Grid g(49, 0.0);
    g[3 * 7 + 3] = 1.0;
    auto d = values(soft_dilate(grid(g, 7, 7)));
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 7; ++j)
            EXPECT_EQ(d[i * 7 + j], (i >= 2 && i <= 4 && j >= 2 && j <= 4) ? 1.0 : 0.0);
}

TEST(SoftMorphology, ErodeIsCrossMinimum) {
    auto m = random_uniform<double>({1, 1, 5, 5}, 3, 0, 1);
    oracle::Grid g(m.data().begin(), m.data().end());
    EXPECT_EQ(values(soft_erode(V::constant(m))), oracle::erode_cross(g, 5, 5));
}

TEST(SoftMorphology, ClosingOfDiskMatchesIntegerOracle) {
    for (double r : {2.0, 3.5, 6.0}) {
        auto d = disk(17, r);
        auto closed = values(soft_erode(soft_dilate(grid(d, 17, 17))));
        EXPECT_EQ(closed, oracle::erode_cross(oracle::dilate_box(d, 17, 17), 17, 17));
        for (std::size_t p = 0; p < d.size(); ++p)
            if (d[p] == 1.0) {
                EXPECT_EQ(closed[p], 1.0);
            }
    }
}

TEST(SoftSkeleton, ZerosStayZero) {
    auto s = soft_skeleton(V::constant(Tensor<double>({1, 1, 8, 8})));
    for (double v : s.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(SoftSkeleton, ThinLineIsReproduced) {
    const std::size_t h = 9, w = 20;
    oracle::Grid line(h * w, 0.0);
    for (std::size_t j = 3; j < 17; ++j) line[4 * w + j] = 1.0;
    auto s = values(soft_skeleton(grid(line, h, w)));
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const double v = s[i * w + j];
            if (line[i * w + j] == 0.0) {
                EXPECT_EQ(v, 0.0);
            } else if (j >= 5 && j < 15) {
                EXPECT_EQ(v, 1.0) << j;
            }
        }
    // Vertical and diagonal lines too.
    oracle::Grid diag(16 * 16, 0.0);
    for (std::size_t i = 2; i < 14; ++i) diag[i * 16 + i] = 1.0;
    auto sd = values(soft_skeleton(grid(diag, 16, 16)));
    for (std::size_t i = 4; i < 12; ++i) EXPECT_EQ(sd[i * 16 + i], 1.0);
}

TEST(SoftSkeleton, BoundedByInputAndUnitRange) {
    auto m = random_uniform<double>({2, 1, 12, 12}, 4, 0, 1);
    auto s = soft_skeleton(V::constant(m)).value();
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_GE(s[i], 0.0);
        EXPECT_LE(s[i], m[i] + 1e-12);
    }
}

TEST(SoftSkeleton, FivePixelBarMatchesThinningOracle) {
    const std::size_t h = 15, w = 30;
    oracle::Grid bar(h * w, 0.0);
    std::vector<int> bin(h * w, 0);
    for (std::size_t i = 5; i < 10; ++i)
        for (std::size_t j = 3; j < 27; ++j) bar[i * w + j] = 1.0, bin[i * w + j] = 1;
    auto soft = values(soft_skeleton(grid(bar, h, w)));
    auto thin = oracle::zhang_suen(bin, h, w);
    std::size_t inter = 0, uni = 0;
    for (std::size_t p = 0; p < h * w; ++p) {
        const bool a = soft[p] > 0.5, b = thin[p] != 0;
        inter += a && b;
        uni += a || b;
    }
    EXPECT_GE(double(inter) / double(uni), 0.8) << inter << "/" << uni;
}

TEST(ClDiceLoss, PerfectPredictionNearZero) {
    for (std::size_t n : {16u, 32u}) {
        auto t = vessels(n);
        auto loss = cl_dice_loss(grid(t, n, n), grid(t, n, n));
        EXPECT_GE(loss.value().item(), 0.0);
        EXPECT_LE(loss.value().item(), 0.02) << n;
    }
}

TEST(ClDiceLoss, DisjointDiceTermIsOne) {
    auto t = vessels(16);
    oracle::Grid inv(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) inv[i] = 1.0 - t[i];
    auto terms = cl_dice_terms(grid(inv, 16, 16), grid(t, 16, 16));
    EXPECT_EQ(terms.dice.value().item(), 1.0);
}

TEST(ClDiceLoss, HalfPlaneMatchesScalarReference) {
    const std::size_t n = 12;
    oracle::Grid half(n * n, 0.0), flat(n * n, 0.5);
    for (std::size_t p = 0; p < n * n / 2; ++p) half[p] = 1.0;
    auto terms = cl_dice_terms(grid(flat, n, n), grid(half, n, n));
    const double y = double(n * n / 2), total = double(n * n);
    EXPECT_NEAR(terms.dice.value().item(), 1.0 - 2.0 * (0.5 * y) / (0.5 * total + y + 1.0), 1e-12);
    EXPECT_NEAR(terms.total.value().item(), oracle::cl_dice(flat, half, n, n), 1e-12);
}

TEST(ClDiceLoss, RandomMasksMatchScalarReference) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto p = random_uniform<double>({1, 1, 10, 10}, 100 + seed, 0, 1);
        std::mt19937_64 rng(seed);
        auto t = random_binary(100, rng, 0.4);
        auto got = cl_dice_loss(V::constant(p), grid(t, 10, 10)).value().item();
        EXPECT_NEAR(got, oracle::cl_dice({p.data().begin(), p.data().end()}, t, 10, 10), 1e-12);
    }
}

TEST(ClDiceLoss, StaysInUnitInterval) {
    std::mt19937_64 rng(5);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto p = random_uniform<double>({1, 1, 12, 12}, seed, 0, 1);
        auto t = random_binary(144, rng, 0.3);
        const double v = cl_dice_loss(V::constant(p), grid(t, 12, 12)).value().item();
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(ClDiceLoss, FlippingPixelsNeverImprovesPerfectPrediction) {
    const std::size_t n = 24;
    auto t = vessels(n);
    const double perfect = cl_dice_loss(grid(t, n, n), grid(t, n, n)).value().item();
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<std::size_t> pick(0, n * n - 1);
    for (int trial = 0; trial < 30; ++trial) {
        auto p = t;
        const int flips = 1 + trial % 10;
        for (int f = 0; f < flips; ++f) {
            auto& v = p[pick(rng)];
            v = 1.0 - v;
        }
        EXPECT_GE(cl_dice_loss(grid(p, n, n), grid(t, n, n)).value().item(), perfect) << trial;
    }
}

TEST(ClDiceLoss, RejectsShapeMismatch) {
    EXPECT_THROW(cl_dice_loss(V::constant(Tensor<double>({1, 1, 4, 4})), V::constant(Tensor<double>({1, 1, 4, 5}))),
                 ShapeError);
}

TEST(ClDiceLoss, GradientCheck8x8) {
    auto p = V::leaf(random_uniform<double>({1, 1, 8, 8}, 7, 0.05, 0.95));
    std::mt19937_64 rng(8);
    auto t = grid(random_binary(64, rng, 0.4), 8, 8);
    auto rep = gradcheck("cl_dice", [&] { return cl_dice_loss(p, t); }, {p});
    EXPECT_LE(rep.max_rel_error, kGradTolerance) << rep.worst;
    EXPECT_GT(rep.nonzero, 0u);
}

TEST(Metrics, HandCountedCases) {
    Tensor<double> a({1, 1, 2, 4}, std::vector<double>{1, 1, 1, 1, 0, 0, 0, 0});
    Tensor<double> b({1, 1, 2, 4}, std::vector<double>{0, 0, 1, 1, 1, 1, 0, 0});
    EXPECT_DOUBLE_EQ(dice_score(a, a), 1.0);
    EXPECT_DOUBLE_EQ(jaccard_score(a, a), 1.0);
    Tensor<double> c({1, 1, 2, 4}, std::vector<double>{0, 0, 0, 0, 1, 1, 1, 1});
    EXPECT_DOUBLE_EQ(dice_score(a, c), 0.0);
    EXPECT_DOUBLE_EQ(jaccard_score(a, c), 0.0);
    EXPECT_DOUBLE_EQ(dice_score(a, b), 0.5);
    EXPECT_DOUBLE_EQ(jaccard_score(a, b), 1.0 / 3.0);
    Tensor<double> empty({1, 1, 2, 4});
    EXPECT_DOUBLE_EQ(dice_score(empty, empty), 1.0);
    EXPECT_DOUBLE_EQ(jaccard_score(empty, empty), 1.0);
}

TEST(Metrics, PredictionThresholdedAtHalf) {
    Tensor<double> p({1, 1, 1, 4}, std::vector<double>{0.2, 0.5, 0.51, 0.9});
    Tensor<double> t({1, 1, 1, 4}, std::vector<double>{0, 0, 1, 1});
    EXPECT_DOUBLE_EQ(dice_score(p, t), 1.0);
}

TEST(Metrics, JaccardIsDiceOverTwoMinusDice) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> density(0.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
        auto p = random_binary(64, rng, density(rng)), t = random_binary(64, rng, density(rng));
        Tensor<double> pt({1, 1, 8, 8}, p), tt({1, 1, 8, 8}, t);
        const double d = dice_score(pt, tt), j = jaccard_score(pt, tt);
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
        EXPECT_NEAR(j, d / (2.0 - d), 1e-15);
    }
}
