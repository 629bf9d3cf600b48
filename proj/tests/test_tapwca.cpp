#include <gtest/gtest.h>

#include "ahan/tapwca.hpp"
#include "test_util.hpp"

using namespace ahan;
using ahan::testing::grad_error;
using ahan::testing::rand_tensor;
using ahan::testing::row_stochastic_error;

namespace {

TokenSeq seq(std::uint64_t seed) { return TokenSeq{Var(rand_tensor({5, 8}, seed)), {2, 2}, true}; }

TapwcaConfig always(std::size_t first, std::size_t last) { return TapwcaConfig{true, 1.0, first, last, 0}; }

}  // namespace

TEST(CombineKv, AnchorRowsFirst) {
    Tensor ka = rand_tensor({3, 4}, 1), kt = rand_tensor({3, 4}, 2), va = rand_tensor({3, 4}, 3),
           vt = rand_tensor({3, 4}, 4);
    CombinedKV c = combine_kv(Var(ka), Var(kt), Var(va), Var(vt));
    ASSERT_EQ(c.keys.shape(), (Shape{6, 4}));
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_EQ(c.keys.value()(r, j), ka(r, j));
            EXPECT_EQ(c.keys.value()(r + 3, j), kt(r, j));
            EXPECT_EQ(c.values.value()(r, j), va(r, j));
            EXPECT_EQ(c.values.value()(r + 3, j), vt(r, j));
        }
}

TEST(CombineKv, MissingTwinLeavesAnchor) {
    Tensor ka = rand_tensor({3, 4}, 5), va = rand_tensor({3, 4}, 6);
    CombinedKV c = combine_kv(Var(ka), Var(), Var(va), Var());
    EXPECT_EQ(c.keys.value().storage(), ka.storage());
    EXPECT_EQ(c.values.value().storage(), va.storage());
}

TEST(CombineKv, WidthMismatchThrows) {
    EXPECT_THROW(combine_kv(Var(Tensor({3, 4})), Var(Tensor({3, 5})), Var(Tensor({3, 4})), Var(Tensor({3, 4}))),
                 DimensionError);
}

TEST(TaAttention, DuplicatedTwinEqualsSelfAttention) {
    for (int s = 0; s < 10; ++s) {
        Tensor q = rand_tensor({4, 3}, 10 + s, -2, 2), k = rand_tensor({4, 3}, 30 + s, -2, 2), v = rand_tensor({4, 3}, 50 + s);
        CombinedKV c = combine_kv(Var(k), Var(k), Var(v), Var(v));
        Tensor ta = ta_attention(Var(q), c.keys, c.values).value();
        Tensor plain = scaled_attention(Var(q), Var(k), Var(v)).value();
        EXPECT_LE(max_abs_diff(ta, plain), 1e-12);
    }
}

TEST(TaAttention, HopelessTwinKeysReduceToAnchorOnly) {
    Tensor q({2, 2}, 1.0), k = rand_tensor({3, 2}, 11), v = rand_tensor({3, 2}, 12);
    Tensor kt({3, 2}, -1e4), vt = rand_tensor({3, 2}, 13, 5, 9);
    CombinedKV c = combine_kv(Var(k), Var(kt), Var(v), Var(vt));
    EXPECT_LE(max_abs_diff(ta_attention(Var(q), c.keys, c.values).value(),
                           scaled_attention(Var(q), Var(k), Var(v)).value()),
              1e-12);
}

TEST(TaAttention, MatchesConcatenateThenAttend) {
    Tensor q = rand_tensor({5, 4}, 14), ka = rand_tensor({5, 4}, 15), kt = rand_tensor({5, 4}, 16),
           va = rand_tensor({5, 4}, 17), vt = rand_tensor({5, 4}, 18);
    Tensor k({10, 4}), v({10, 4});
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
            k(r, c) = ka(r, c);
            k(r + 5, c) = kt(r, c);
            v(r, c) = va(r, c);
            v(r + 5, c) = vt(r, c);
        }
    CombinedKV comb = combine_kv(Var(ka), Var(kt), Var(va), Var(vt));
    Tensor out = ta_attention(Var(q), comb.keys, comb.values).value();
    EXPECT_EQ(out.shape(), (Shape{5, 4}));
    EXPECT_LE(max_abs_diff(out, scaled_attention(Var(q), Var(k), Var(v)).value()), 1e-12);
}

TEST(TaAttention, CombinedRowsSumToOne) {
    std::mt19937_64 rng(19);
    AttnParams p = AttnParams::init(8, 2, rng, 0.5);
    for (int s = 0; s < 10; ++s) {
        AttentionRecorder rec;
        ta_multi_head(Var(rand_tensor({5, 8}, 20 + s)), Var(rand_tensor({5, 8}, 40 + s)), p, &rec, "ta");
        ASSERT_EQ(rec.entries().size(), 2u);
        for (const auto& [site, w] : rec.entries()) {
            EXPECT_EQ(w.cols(), 10u);
            EXPECT_LE(row_stochastic_error(w), 1e-9) << site;
        }
    }
}

TEST(Gate, ProbabilityZeroNeverOpens) {
    std::mt19937_64 rng(21);
    TapwcaConfig c{true, 0.0, 1, 2, 0};
    for (int i = 0; i < 1000; ++i) EXPECT_FALSE(draw_gate(c, rng));
}

TEST(Gate, SeededSequenceRepeats) {
    TapwcaConfig c{true, 0.5, 1, 2, 0};
    std::mt19937_64 a(22), b(22);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(draw_gate(c, a), draw_gate(c, b));
}

TEST(Gate, PaperRangeDistractsFourLayers) {
    EXPECT_EQ(distracted_layers(always(6, 9), 12, Mode::train, true), (std::vector<std::size_t>{6, 7, 8, 9}));
    EXPECT_TRUE(distracted_layers(always(6, 9), 12, Mode::infer, true).empty());
    EXPECT_TRUE(distracted_layers(always(6, 9), 12, Mode::train, false).empty());
}

TEST(Config, RangeValidation) {
    EXPECT_NO_THROW(always(6, 9).validate(12));
    EXPECT_ANY_THROW(always(6, 9).validate(8));
    EXPECT_ANY_THROW(always(0, 2).validate(8));
    EXPECT_ANY_THROW(always(4, 3).validate(8));
    EXPECT_ANY_THROW((TapwcaConfig{true, 1.5, 1, 2, 0}.validate(4)));
}

TEST(GatedLayer, InferIsPlainBlock) {
    std::mt19937_64 rng(23);
    BlockParams p = BlockParams::init(8, 2, 4, rng, 0.3);
    TokenSeq a = seq(24), t = seq(25);
    Tensor plain = transformer_block(a, p).tokens.value();
    Tensor on = gated_layer_forward(2, a, &t, p, always(1, 3), Mode::infer, true).tokens.value();
    TapwcaConfig disabled = always(1, 3);
    disabled.enabled = false;
    Tensor off = gated_layer_forward(2, a, nullptr, p, disabled, Mode::infer, false).tokens.value();
    EXPECT_EQ(on.storage(), plain.storage());
    EXPECT_EQ(off.storage(), plain.storage());
}

TEST(GatedLayer, ClosedGateOrOutOfRangeIsPlain) {
    std::mt19937_64 rng(26);
    BlockParams p = BlockParams::init(8, 2, 4, rng, 0.3);
    TokenSeq a = seq(27), t = seq(28);
    Tensor plain = transformer_block(a, p).tokens.value();
    EXPECT_EQ(gated_layer_forward(2, a, &t, p, always(1, 3), Mode::train, false).tokens.value().storage(),
              plain.storage());
    EXPECT_EQ(gated_layer_forward(5, a, &t, p, always(1, 3), Mode::train, true).tokens.value().storage(),
              plain.storage());
}

TEST(GatedLayer, OpenGateUsesTwin) {
    std::mt19937_64 rng(29);
    BlockParams p = BlockParams::init(8, 2, 4, rng, 0.3);
    TokenSeq a = seq(30), t = seq(31);
    Tensor plain = transformer_block(a, p).tokens.value();
    Tensor ta = gated_layer_forward(2, a, &t, p, always(1, 3), Mode::train, true).tokens.value();
    EXPECT_EQ(ta.shape(), plain.shape());
    EXPECT_GT(max_abs_diff(ta, plain), 1e-6);
    // A twin identical to the anchor changes nothing.
    Tensor dup = gated_layer_forward(2, a, &a, p, always(1, 3), Mode::train, true).tokens.value();
    EXPECT_LE(max_abs_diff(dup, plain), 1e-12);
}

TEST(GatedLayer, MissingTwinThrowsWhenDistracting) {
    std::mt19937_64 rng(32);
    BlockParams p = BlockParams::init(8, 2, 4, rng);
    EXPECT_THROW(gated_layer_forward(2, seq(33), nullptr, p, always(1, 3), Mode::train, true), std::invalid_argument);
}

TEST(GatedLayer, GradientFlowsToAnchorAndTwin) {
    std::mt19937_64 rng(34);
    BlockParams p = BlockParams::init(8, 2, 4, rng, 0.3);
    Tensor weights = rand_tensor({5, 8}, 35);
    Tensor twin = rand_tensor({5, 8}, 36);
    auto f = [&](const Var& x) {
        TokenSeq t{Var(twin), {2, 2}, true};
        return sum(mul(gated_layer_forward(1, TokenSeq{x, {2, 2}, true}, &t, p, always(1, 1), Mode::train, true).tokens,
                       Var(weights)));
    };
    EXPECT_LT(grad_error(f, rand_tensor({5, 8}, 37)), 1e-4);
    auto g = [&](const Var& x) {
        TokenSeq t{x, {2, 2}, true};
        return sum(mul(gated_layer_forward(1, TokenSeq{Var(rand_tensor({5, 8}, 37)), {2, 2}, true}, &t, p, always(1, 1),
                                           Mode::train, true)
                           .tokens,
                       Var(weights)));
    };
    EXPECT_LT(grad_error(g, twin), 1e-4);
}
