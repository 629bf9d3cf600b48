#include <cmath>

#include <gtest/gtest.h>

#include "ahan/attention.hpp"
#include "test_util.hpp"

using namespace ahan;
using ahan::testing::grad_error;
using ahan::testing::rand_tensor;
using ahan::testing::row_stochastic_error;

namespace {

// Weights first, then the weighted sum, without the library's fused path.
Tensor two_step_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    const double scale = std::sqrt(static_cast<double>(q.cols()));
    Tensor w({q.rows(), k.rows()});
    for (std::size_t i = 0; i < q.rows(); ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < k.rows(); ++j) {
            double s = 0;
            for (std::size_t c = 0; c < q.cols(); ++c) s += q(i, c) * k(j, c);
            w(i, j) = s / scale;
            mx = std::max(mx, w(i, j));
        }
        double z = 0;
        for (std::size_t j = 0; j < k.rows(); ++j) z += (w(i, j) = std::exp(w(i, j) - mx));
        for (std::size_t j = 0; j < k.rows(); ++j) w(i, j) /= z;
    }
    Tensor out({q.rows(), v.cols()});
    for (std::size_t i = 0; i < q.rows(); ++i)
        for (std::size_t c = 0; c < v.cols(); ++c)
            for (std::size_t j = 0; j < k.rows(); ++j) out(i, c) += w(i, j) * v(j, c);
    return out;
}

AttnParams identity_attn(std::size_t d) {
    AttnParams p;
    p.wq = {Var::parameter(Tensor::identity(d))};
    p.wk = {Var::parameter(Tensor::identity(d))};
    p.wv = {Var::parameter(Tensor::identity(d))};
    p.wo = Var::parameter(Tensor::identity(d));
    return p;
}

void zero_all(const std::vector<Var>& params) {
    for (Var v : params) v.mutable_value().fill(0.0);
}

}  // namespace

TEST(ScaledAttention, EqualKeysAverageValues) {
    Tensor k({4, 3}, 0.7);
    Tensor v = rand_tensor({4, 3}, 1);
    Tensor out = scaled_attention(Var(rand_tensor({2, 3}, 2)), Var(k), Var(v)).value();
    Tensor m = mean_pool(Var(v), 0).value();
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out(i, c), m[c], 1e-15);
}

TEST(ScaledAttention, SingleKeyReturnsValue) {
    Tensor v = rand_tensor({1, 3}, 3);
    Tensor out = scaled_attention(Var(rand_tensor({3, 3}, 4)), Var(rand_tensor({1, 3}, 5)), Var(v)).value();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out(i, c), v(0, c));
}

TEST(ScaledAttention, MatchesTwoStepOracle) {
    Tensor q = rand_tensor({3, 2}, 6), k = rand_tensor({4, 2}, 7), v = rand_tensor({4, 2}, 8);
    EXPECT_LE(max_abs_diff(scaled_attention(Var(q), Var(k), Var(v)).value(), two_step_attention(q, k, v)), 1e-12);
}

TEST(ScaledAttention, RowMismatchThrows) {
    EXPECT_THROW(scaled_attention(Var(Tensor({2, 2})), Var(Tensor({3, 2})), Var(Tensor({4, 2}))), DimensionError);
}

TEST(ScaledAttention, JointKeyValuePermutationInvariant) {
    Tensor q = rand_tensor({3, 4}, 9), k = rand_tensor({5, 4}, 10), v = rand_tensor({5, 4}, 11);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Tensor a = scaled_attention(Var(q), Var(k), Var(v)).value();
    Tensor b = scaled_attention(Var(q), take_rows(Var(k), perm), take_rows(Var(v), perm)).value();
    EXPECT_LE(max_abs_diff(a, b), 1e-14);
}

TEST(ScaledAttention, RecordedWeightsAreRowStochastic) {
    for (int s = 0; s < 10; ++s) {
        AttentionRecorder rec;
        scaled_attention(Var(rand_tensor({5, 4}, 20 + s, -3, 3)), Var(rand_tensor({7, 4}, 40 + s, -3, 3)),
                         Var(rand_tensor({7, 4}, 60 + s)), &rec, "x");
        ASSERT_NE(rec.find("x"), nullptr);
        EXPECT_LE(row_stochastic_error(*rec.find("x")), 1e-9);
    }
}

TEST(Mhsa, IdentityProjectionsSingleHead) {
    Tensor x = rand_tensor({5, 4}, 12);
    TokenSeq seq{Var(x), {2, 2}, true};
    Tensor out = mhsa(seq, identity_attn(4)).tokens.value();
    EXPECT_LE(max_abs_diff(out, scaled_attention(Var(x), Var(x), Var(x)).value()), 1e-14);
}

TEST(Mhsa, ShapePreserved) {
    std::mt19937_64 rng(13);
    TokenSeq seq{Var(rand_tensor({17, 8}, 14)), {4, 4}, true};
    EXPECT_EQ(mhsa(seq, AttnParams::init(8, 4, rng)).tokens.shape(), (Shape{17, 8}));
}

TEST(Mhsa, TwoHeadsMatchManualDecomposition) {
    std::mt19937_64 rng(15);
    AttnParams p = AttnParams::init(6, 2, rng, 0.5);
    Tensor x = rand_tensor({5, 6}, 16);
    Tensor out = mhsa(TokenSeq{Var(x), {2, 2}, true}, p).tokens.value();
    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < 2; ++h) {
        Tensor q = matmul(Var(x), p.wq[h]).value(), k = matmul(Var(x), p.wk[h]).value(),
               v = matmul(Var(x), p.wv[h]).value();
        heads.push_back(two_step_attention(q, k, v));
    }
    Tensor joined({5, 6});
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
            joined(r, c) = heads[0](r, c);
            joined(r, c + 3) = heads[1](r, c);
        }
    EXPECT_LE(max_abs_diff(out, matmul(Var(joined), p.wo).value()), 1e-12);
}

TEST(Mhsa, WidthMismatchThrows) {
    std::mt19937_64 rng(17);
    EXPECT_ANY_THROW(mhsa(TokenSeq{Var(Tensor({5, 6})), {2, 2}, true}, AttnParams::init(8, 2, rng)));
}

TEST(Mhsa, HeadSitesRecorded) {
    std::mt19937_64 rng(18);
    AttentionRecorder rec;
    transformer_block(TokenSeq{Var(rand_tensor({5, 8}, 19)), {2, 2}, true}, BlockParams::init(8, 2, 4, rng), &rec,
                      "block3");
    EXPECT_NE(rec.find(block_head_site(3, 0)), nullptr);
    EXPECT_NE(rec.find(block_head_site(3, 1)), nullptr);
    for (const auto& [site, w] : rec.entries()) EXPECT_LE(row_stochastic_error(w), 1e-9) << site;
}

TEST(TransformerBlock, ZeroSubBlocksAreIdentity) {
    std::mt19937_64 rng(20);
    BlockParams p = BlockParams::init(8, 2, 4, rng);
    zero_all(p.attn.parameters());
    zero_all({p.ff_w1, p.ff_b1, p.ff_w2, p.ff_b2});
    Tensor x = rand_tensor({5, 8}, 21);
    EXPECT_EQ(transformer_block(TokenSeq{Var(x), {2, 2}, true}, p).tokens.value().storage(), x.storage());
}

TEST(TransformerBlock, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(22);
    BlockParams p = BlockParams::init(8, 2, 4, rng, 0.3);
    Tensor weights = rand_tensor({5, 8}, 23);
    auto f = [&](const Var& x) { return sum(mul(transformer_block(TokenSeq{x, {2, 2}, true}, p).tokens, Var(weights))); };
    EXPECT_LT(grad_error(f, rand_tensor({5, 8}, 24)), 1e-4);
    // parameter gradients too
    Tensor w1 = p.ff_w1.value();
    auto g = [&](const Var& w) {
        BlockParams q = p;
        q.ff_w1 = w;
        return sum(mul(transformer_block(TokenSeq{Var(rand_tensor({5, 8}, 24)), {2, 2}, true}, q).tokens, Var(weights)));
    };
    EXPECT_LT(grad_error(g, w1), 1e-4);
    auto h = [&](const Var& w) {
        BlockParams q = p;
        q.attn.wq[1] = w;
        return sum(mul(transformer_block(TokenSeq{Var(rand_tensor({5, 8}, 24)), {2, 2}, true}, q).tokens, Var(weights)));
    };
    EXPECT_LT(grad_error(h, p.attn.wq[1].value()), 1e-4);
}

TEST(TransformerBlock, TwelveBlockStackKeepsTokenCount) {
    std::mt19937_64 rng(25);
    TokenSeq x{Var(rand_tensor({17, 8}, 26)), {4, 4}, true};
    for (int l = 0; l < 12; ++l) x = transformer_block(x, BlockParams::init(8, 2, 4, rng));
    EXPECT_EQ(x.tokens.shape(), (Shape{17, 8}));
    EXPECT_TRUE(x.tokens.value().all_finite());
}
