#include <gtest/gtest.h>

#include "ahan/hca.hpp"
#include "test_util.hpp"

using namespace ahan;
using ahan::testing::grad_error;
using ahan::testing::rand_tensor;
using ahan::testing::row_stochastic_error;

namespace {

TokenSeq seq(std::size_t rows, std::size_t cols, std::size_t d, std::uint64_t seed) {
    return TokenSeq{Var(rand_tensor({rows * cols + 1, d}, seed)), {rows, cols}, true};
}

RegionSpec all_patches(std::size_t n) {
    RegionSpec r{"eyes", {}};
    for (std::size_t i = 0; i < n; ++i) r.patch_indices.push_back(i);
    return r;
}

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v) {
    return scaled_attention(Var(q), Var(k), Var(v)).value();
}

}  // namespace

TEST(RegionSpec, RejectsOutOfRangeAndEmpty) {
    EXPECT_THROW((RegionSpec{"eyes", {0, 16}}.validate(16)), std::out_of_range);
    EXPECT_THROW((RegionSpec{"eyes", {}}.validate(16)), std::invalid_argument);
}

TEST(RegionSpec, DefaultDeskRegions) {
    const auto regions = default_regions({4, 4});
    ASSERT_EQ(regions.size(), 4u);
    EXPECT_EQ(regions[0].patch_indices, (std::vector<std::size_t>{0, 1, 2, 3}));
    EXPECT_EQ(regions[1].patch_indices, (std::vector<std::size_t>{5, 6}));
    EXPECT_EQ(regions[2].patch_indices, (std::vector<std::size_t>{9, 10}));
    EXPECT_EQ(regions[3].patch_indices, (std::vector<std::size_t>{4, 7, 8, 11, 12, 13, 14, 15}));
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(regions[k].name, kRegionNames[k]);
}

TEST(RegionSpec, DefaultPaperRegionsFitGrid) {
    for (const auto& r : default_regions({14, 14})) EXPECT_NO_THROW(r.validate(196)) << r.name;
}

TEST(Downsample, ScaleOneDropsOnlyClassToken) {
    TokenSeq x = seq(4, 4, 3, 1);
    TokenSeq d = downsample_tokens(x, 1);
    EXPECT_EQ(d.tokens.value().storage(), x.patch_tokens().value().storage());
    EXPECT_FALSE(d.has_cls);
}

TEST(Downsample, SingleBlockAverages) {
    TokenSeq x = seq(2, 2, 3, 2);
    Tensor d = downsample_tokens(x, 2).tokens.value();
    const Tensor& t = x.tokens.value();
    ASSERT_EQ(d.shape(), (Shape{1, 3}));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(d(0, c), (t(1, c) + t(2, c) + t(3, c) + t(4, c)) / 4.0, 1e-15);
}

TEST(Downsample, MatchesBlockLoop) {
    TokenSeq x = seq(4, 4, 5, 3);
    Tensor d = downsample_tokens(x, 2).tokens.value();
    const Tensor& t = x.tokens.value();
    for (std::size_t br = 0; br < 2; ++br)
        for (std::size_t bc = 0; bc < 2; ++bc)
            for (std::size_t c = 0; c < 5; ++c) {
                double s = 0;
                for (std::size_t dr = 0; dr < 2; ++dr)
                    for (std::size_t dc = 0; dc < 2; ++dc) s += t(1 + (2 * br + dr) * 4 + 2 * bc + dc, c);
                EXPECT_NEAR(d(br * 2 + bc, c), s / 4.0, 1e-12);
            }
}

TEST(Downsample, NonDivisibleGridThrows) {
    EXPECT_THROW(downsample_tokens(seq(14, 14, 2, 4), 4), DimensionError);
}

TEST(RegionCrossAttention, FullRegionIdentityIsSelfAttention) {
    TokenSeq x = seq(4, 4, 6, 5);
    HcaParams p = HcaParams::identity(6, 1, 1);
    Tensor patches = x.patch_tokens().value();
    Tensor out = region_cross_attention(x, all_patches(16), 1, p.proj[0][0]).value();
    EXPECT_LE(max_abs_diff(out, attend(patches, patches, patches)), 1e-14);
}

TEST(RegionCrossAttention, IdenticalTokensGiveProjectedToken) {
    Tensor t({17, 4});
    for (std::size_t r = 0; r < 17; ++r)
        for (std::size_t c = 0; c < 4; ++c) t(r, c) = 0.1 * (c + 1);
    TokenSeq x{Var(t), {4, 4}, true};
    std::mt19937_64 rng(6);
    HcaParams p = HcaParams::init(4, 1, 1, rng, 0.5);
    Tensor out = region_cross_attention(x, RegionSpec{"nose", {1, 5, 6}}, 2, p.proj[0][0]).value();
    Tensor projected = matmul(Var(Tensor::matrix({{0.1, 0.2, 0.3, 0.4}})), p.proj[0][0].wv).value();
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out(r, c), projected(0, c), 1e-14);
}

TEST(RegionCrossAttention, MatchesHandComposition) {
    TokenSeq x = seq(4, 4, 5, 7);
    std::mt19937_64 rng(8);
    HcaParams p = HcaParams::init(5, 1, 1, rng, 0.4);
    const RegionSpec region{"mouth", {2, 9, 14}};
    const auto& pr = p.proj[0][0];
    Tensor patches = x.patch_tokens().value();
    Tensor region_rows({3, 5});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 5; ++c) region_rows(i, c) = patches(region.patch_indices[i], c);
    Tensor coarse = downsample_tokens(x, 2).tokens.value();
    Tensor expect = attend(matmul(Var(region_rows), pr.wq).value(), matmul(Var(coarse), pr.wk).value(),
                           matmul(Var(coarse), pr.wv).value());
    EXPECT_LE(max_abs_diff(region_cross_attention(x, region, 2, pr).value(), expect), 1e-12);
}

TEST(RegionCrossAttention, InvalidIndexThrows) {
    HcaParams p = HcaParams::identity(3, 1, 1);
    EXPECT_THROW(region_cross_attention(seq(2, 2, 3, 9), RegionSpec{"jaw", {4}}, 1, p.proj[0][0]), std::out_of_range);
}

TEST(AggregateScales, SingleScaleIsMeanPool) {
    Var a(rand_tensor({3, 4}, 10));
    std::vector<Var> per{a};
    Tensor f = aggregate_scales(per, Var(Tensor::vector({2.7}))).value();
    EXPECT_EQ(f.storage(), mean_pool(a, 0).value().storage());
}

TEST(AggregateScales, IdenticalInputsIgnoreLogits) {
    Var a(rand_tensor({3, 4}, 11));
    std::vector<Var> per{a, a};
    Tensor f = aggregate_scales(per, Var(Tensor::vector({-1.3, 4.0}))).value();
    EXPECT_LE(max_abs_diff(f, mean_pool(a, 0).value()), 1e-15);
}

TEST(AggregateScales, ZeroLogitsAverage) {
    std::vector<Var> per{Var(rand_tensor({3, 4}, 12)), Var(rand_tensor({2, 4}, 13)), Var(rand_tensor({5, 4}, 14))};
    Tensor f = aggregate_scales(per, Var(Tensor::vector({0, 0, 0}))).value();
    for (std::size_t c = 0; c < 4; ++c) {
        double s = 0;
        for (const auto& a : per) {
            double m = 0;
            for (std::size_t r = 0; r < a.shape()[0]; ++r) m += a.value()(r, c);
            s += m / static_cast<double>(a.shape()[0]);
        }
        EXPECT_NEAR(f[c], s / 3.0, 1e-12);
    }
}

TEST(AggregateScales, EmptyListThrows) {
    std::vector<Var> none;
    EXPECT_ANY_THROW(aggregate_scales(none, Var(Tensor::vector({0}))));
}

TEST(HcaParams, ScaleWeightsSumToOne) {
    std::mt19937_64 rng(15);
    HcaParams p = HcaParams::init(4, 4, 3, rng);
    p.scale_logits.mutable_value() = rand_tensor({4, 3}, 16, -4, 4);
    Tensor w = p.scale_weights();
    EXPECT_LE(row_stochastic_error(w), 1e-9);
}

TEST(HcaForward, OutputIsFourRegionsWide) {
    std::mt19937_64 rng(17);
    const auto regions = default_regions({4, 4});
    const std::vector<std::size_t> scales{1, 2};
    Tensor f = hca_forward(seq(4, 4, 8, 18), regions, scales, HcaParams::init(8, 4, 2, rng)).value();
    EXPECT_EQ(f.shape(), (Shape{32}));
}

TEST(HcaForward, ThreeScalesGiveTwelveAttentionMaps) {
    std::mt19937_64 rng(19);
    const auto regions = default_regions({8, 8});
    const std::vector<std::size_t> scales{1, 2, 4};
    AttentionRecorder rec;
    hca_forward(seq(8, 8, 4, 20), regions, scales, HcaParams::init(4, 4, 3, rng), &rec);
    EXPECT_EQ(rec.entries().size(), 12u);
    for (const auto& [site, w] : rec.entries()) EXPECT_LE(row_stochastic_error(w), 1e-9) << site;
}

TEST(HcaForward, ReducesToPooledSelfAttention) {
    TokenSeq x = seq(4, 4, 6, 21);
    std::vector<RegionSpec> regions(4, all_patches(16));
    const std::vector<std::size_t> scales{1};
    Tensor f = hca_forward(x, regions, scales, HcaParams::identity(6, 4, 1)).value();
    Tensor patches = x.patch_tokens().value();
    Tensor pooled = mean_pool(Var(attend(patches, patches, patches)), 0).value();
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(f[k * 6 + c], pooled[c], 1e-10);
}

TEST(HcaForward, ScaleOrderDoesNotMatter) {
    std::mt19937_64 rng(22);
    HcaParams p = HcaParams::init(4, 4, 2, rng, 0.5);
    p.scale_logits.mutable_value() = rand_tensor({4, 2}, 23);
    HcaParams swapped = p;
    swapped.scale_logits = Var::parameter(Tensor({4, 2}));
    for (std::size_t k = 0; k < 4; ++k) {
        swapped.proj[k] = {p.proj[k][1], p.proj[k][0]};
        swapped.scale_logits.mutable_value()(k, 0) = p.scale_logits.value()(k, 1);
        swapped.scale_logits.mutable_value()(k, 1) = p.scale_logits.value()(k, 0);
    }
    const auto regions = default_regions({4, 4});
    TokenSeq x = seq(4, 4, 4, 24);
    const std::vector<std::size_t> s12{1, 2}, s21{2, 1};
    EXPECT_LE(max_abs_diff(hca_forward(x, regions, s12, p).value(), hca_forward(x, regions, s21, swapped).value()),
              1e-15);
}

TEST(HcaForward, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(25);
    HcaParams p = HcaParams::init(8, 4, 2, rng, 0.3);
    p.scale_logits.mutable_value() = rand_tensor({4, 2}, 26);
    const auto regions = default_regions({4, 4});
    const std::vector<std::size_t> scales{1, 2};
    auto f = [&](const Var& t) { return sum(hca_forward(TokenSeq{t, {4, 4}, true}, regions, scales, p)); };
    EXPECT_LT(grad_error(f, rand_tensor({17, 8}, 27)), 1e-4);
    auto g = [&](const Var& logits) {
        HcaParams q = p;
        q.scale_logits = logits;
        return sum(mul(hca_forward(TokenSeq{Var(rand_tensor({17, 8}, 27)), {4, 4}, true}, regions, scales, q),
                       Var(rand_tensor({32}, 28))));
    };
    EXPECT_LT(grad_error(g, p.scale_logits.value()), 1e-4);
}
