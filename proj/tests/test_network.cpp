#include <gtest/gtest.h>

#include <cmath>

#include "param_oracle.hpp"
#include "ssw/gradient_suite.hpp"

using namespace ssw;
using F = Var<float>;

namespace {

ArchitectureConfig small(Variant v, std::size_t c, std::size_t depth, std::size_t k = 3) {
    ArchitectureConfig cfg;
    cfg.variant = v;
    cfg.init_channels = c;
    cfg.depth = depth;
    cfg.kernel_points = k;
    cfg.window = 4;
    return cfg;
}

bool ablated(const std::string& name) {
    return name.find(".embed.") != std::string::npos || name.find(".swin.") != std::string::npos ||
           name.find(".merge.") != std::string::npos;
}

}  // namespace

TEST(ArchitectureConfig, PresetsAndValidation) {
    EXPECT_EQ(ArchitectureConfig::dual_branch().init_channels, 72u);
    EXPECT_EQ(ArchitectureConfig::alternating().init_channels, 108u);
    EXPECT_EQ(parse_variant("alt"), Variant::Alternating);
    EXPECT_THROW(parse_variant("tri"), std::invalid_argument);
    auto bad = ArchitectureConfig::dual_branch();
    bad.kernel_points = 8;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = ArchitectureConfig::dual_branch();
    bad.depth = 0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(ArchitectureConfig, ChannelsDoublePerStage) {
    auto cfg = ArchitectureConfig::dual_branch();
    std::vector<std::size_t> seq;
    for (std::size_t k = 0; k < 4; ++k) seq.push_back(cfg.stage_channels(k));
    EXPECT_EQ(seq, (std::vector<std::size_t>{72, 144, 288, 576}));
}

TEST(SegmentationModel, DescribeDefaultOn304) {
    SegmentationModel<float> model(small(Variant::DualBranch, 72, 4, 9));
    auto [enc, dec] = model.describe(304, 304);
    ASSERT_EQ(enc.size(), 4u);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(enc[k].out_channels, 72u << k);
        EXPECT_EQ(enc[k].out_extent_h, 304u >> (k + 1));
    }
    EXPECT_EQ(dec.back().out_extent_w, 304u);
}

TEST(SegmentationModel, ShapeAuditMatchesDescription) {
    for (Variant v : {Variant::DualBranch, Variant::Alternating})
        for (std::size_t depth = 1; depth <= 3; ++depth)
            for (std::size_t c : {4u, 12u}) {
                SegmentationModel<float> model(small(v, c, depth), 1);
                const std::size_t h = 26, w = 30;
                ForwardTrace trace;
                auto y = model.forward(F::constant(random_uniform<float>({2, 3, h, w}, 2)), &trace);
                auto [enc, dec] = model.describe(h, w);
                EXPECT_EQ(trace.padded_input, (Shape{2, 3, model.padded_extent(h), model.padded_extent(w)}));
                for (std::size_t k = 0; k < depth; ++k) {
                    EXPECT_EQ(trace.encoder_outputs[k], (Shape{2, enc[k].out_channels, enc[k].out_extent_h, enc[k].out_extent_w}));
                    EXPECT_EQ(trace.skips[k], (Shape{2, enc[k].skip_channels, enc[k].in_extent_h, enc[k].in_extent_w}));
                    EXPECT_EQ(trace.decoder_outputs[k], (Shape{2, dec[k].out_channels, dec[k].out_extent_h, dec[k].out_extent_w}));
                    EXPECT_EQ(enc[k].out_channels, c << k);
                    EXPECT_EQ(enc[k].out_extent_h, trace.padded_input[2] >> (k + 1));
                    EXPECT_EQ(dec[depth - 1 - k].out_extent_h, enc[k].in_extent_h);
                }
                EXPECT_EQ(y.shape(), (Shape{2, 1, h, w}));
            }
}

TEST(SegmentationModel, DepthOneHalvesOnce) {
    SegmentationModel<float> model(small(Variant::DualBranch, 8, 1), 3);
    ForwardTrace trace;
    model.forward(F::constant(random_uniform<float>({1, 3, 16, 16}, 4)), &trace);
    ASSERT_EQ(trace.encoder_outputs.size(), 1u);
    EXPECT_EQ(trace.encoder_outputs[0], (Shape{1, 8, 8, 8}));
}

TEST(SegmentationModel, RejectsTooSmallInput) {
    SegmentationModel<float> model(small(Variant::DualBranch, 8, 3, 9), 3);
    EXPECT_EQ(model.config().min_extent(), 36u);
    try {
        model.forward(F::constant(Tensor<float>({1, 3, 24, 64})));
        FAIL() << "expected rejection";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("minimum extent is 36"), std::string::npos);
    }
    EXPECT_THROW(model.forward(F::constant(Tensor<float>({1, 2, 64, 64}))), ShapeError);
}

TEST(SegmentationModel, OutputIsProbabilityAndDeterministic) {
    auto run = [] {
        SegmentationModel<float> model(ArchitectureConfig::lightweight(), 5);
        return model.forward(F::constant(random_uniform<float>({1, 3, 64, 64}, 6))).value();
    };
    auto a = run();
    EXPECT_EQ(a.shape(), (Shape{1, 1, 64, 64}));
    for (float v : a.data()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
    EXPECT_EQ(a, run());
}

TEST(SegmentationModel, InitIsDeterministicAndStartsRigid) {
    SegmentationModel<float> a(ArchitectureConfig::lightweight(), 9), b(ArchitectureConfig::lightweight(), 9),
        c(ArchitectureConfig::lightweight(), 10);
    bool differs = false;
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        const auto& pa = a.parameters().all()[i];
        EXPECT_EQ(pa.value(), b.parameters().all()[i].value()) << pa.name;
        differs |= !(pa.value() == c.parameters().all()[i].value());
        if (pa.name.find(".offset.") != std::string::npos) {
            for (float v : pa.value().data()) EXPECT_EQ(v, 0.0f) << pa.name;
        }
        if (pa.name.ends_with(".gamma")) {
            for (float v : pa.value().data()) EXPECT_EQ(v, 1.0f) << pa.name;
        }
    }
    EXPECT_TRUE(differs);
}

TEST(SegmentationModel, InitKeepsLogitScaleSane) {
    SegmentationModel<float> model(ArchitectureConfig::lightweight(), 11);
    auto x = random_uniform<float>({1, 3, 64, 64}, 12, -std::sqrt(3.0f), std::sqrt(3.0f));
    auto y = model.forward_logits(F::constant(x)).value();
    double mean = 0, sq = 0;
    for (float v : y.data()) mean += v;
    mean /= double(y.size());
    for (float v : y.data()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / double(y.size()));
    EXPECT_GE(sd, 0.01);
    EXPECT_LE(sd, 10.0);
}

TEST(ParameterCount, SingleConvClosedForm) {
    ParameterSet<float> ps;
    Conv2d<float> conv(ps, "c", 3, 8, 3);
    EXPECT_EQ(ps.element_count(), 224u);
}

TEST(ParameterCount, MatchesAnalyticEnumeration) {
    for (Variant v : {Variant::DualBranch, Variant::Alternating})
        for (std::size_t depth : {1u, 2u, 4u})
            for (std::size_t c : {12u, 36u})
                for (std::size_t k : {5u, 9u}) {
                    auto cfg = small(v, c, depth, k);
                    cfg.window = 8;
                    cfg.relative_bias = (k == 9);
                    SegmentationModel<float> model(cfg);
                    EXPECT_EQ(model.count_parameters(), oracle::model(cfg)) << to_string(v) << depth << c << k;
                }
    EXPECT_EQ(SegmentationModel<float>(ArchitectureConfig::lightweight()).count_parameters(),
              oracle::model(ArchitectureConfig::lightweight()));
}

TEST(ParameterCount, DoublingChannelsRoughlyQuadruples) {
    for (Variant v : {Variant::DualBranch, Variant::Alternating}) {
        auto lo = ArchitectureConfig::dual_branch();
        lo.variant = v;
        lo.init_channels = 36;
        auto hi = lo;
        hi.init_channels = 72;
        const double ratio = double(oracle::model(hi)) / double(oracle::model(lo));
        EXPECT_GE(ratio, 3.5) << to_string(v);
        EXPECT_LE(ratio, 4.5) << to_string(v);
    }
}

TEST(ParameterCount, LightweightNearOneHundredSeventyThousand) {
    const auto n = SegmentationModel<float>(ArchitectureConfig::lightweight()).count_parameters();
    EXPECT_EQ(n, 176119u);
    EXPECT_GE(n, 150000u);
    EXPECT_LE(n, 190000u);
}

TEST(SegmentationModel, EveryParameterReceivesGradient) {
    for (Variant v : {Variant::DualBranch, Variant::Alternating}) {
        auto cfg = ArchitectureConfig::lightweight();
        cfg.variant = v;
        SegmentationModel<float> model(cfg, 13);
        auto x = F::constant(random_uniform<float>({1, 3, 40, 40}, 14));
        backward(random_projection(model.forward(x), 15));
        for (const auto& p : model.parameters().all()) {
            double norm = 0;
            for (float g : p.grad().data()) norm += double(g) * g;
            EXPECT_GT(norm, 0.0) << to_string(v) << " " << p.name;
        }
    }
}

TEST(SegmentationModel, ZeroedSwinBranchLeavesDsconvEncoder) {
    SegmentationModel<float> model(ArchitectureConfig::lightweight(), 16);
    auto x = F::constant(random_uniform<float>({1, 3, 40, 40}, 17));
    auto before = model.forward(x).value();
    for (auto& p : model.parameters().all())
        if (ablated(p.name)) p.mutable_value().fill(0.0f);
    ForwardTrace trace;
    auto after = model.forward(x, &trace).value();
    EXPECT_EQ(after.shape(), before.shape());
    EXPECT_TRUE(after.all_finite());
    EXPECT_GT(max_abs_diff(after, before), 0.0);
    backward(random_projection(model.forward(x), 18));
    for (const auto& p : model.parameters().all()) {
        if (ablated(p.name) || p.name.find(".fuse.") == std::string::npos) continue;
        double norm = 0;
        for (float g : p.grad().data()) norm += double(g) * g;
        EXPECT_GT(norm, 0.0) << p.name;
    }
}
