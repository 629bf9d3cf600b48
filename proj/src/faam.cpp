#include "ahan/faam.hpp"

#include <string>
#include <vector>

namespace ahan {

FaamParams FaamParams::init(std::size_t width, std::mt19937_64& rng, double stddev) {
    return {Var::parameter(Tensor::randn({width, width}, rng, stddev)),
            Var::parameter(Tensor::randn({width, width}, rng, stddev)),
            Var::parameter(Tensor::randn({width, width}, rng, stddev))};
}

FaamParams FaamParams::identity(std::size_t width) {
    return {Var::parameter(Tensor::identity(width)), Var::parameter(Tensor::identity(width)),
            Var::parameter(Tensor::identity(width))};
}

std::pair<HalfTokens, HalfTokens> split_halves(const TokenSeq& x) {
    const GridShape g = x.grid;
    if (g.cols % 2 != 0) {
        throw DimensionError("split_halves: grid " + std::to_string(g.rows) + "x" + std::to_string(g.cols) +
                             " has an odd number of columns");
    }
    const std::size_t half = g.cols / 2;
    const std::size_t offset = x.has_cls ? 1 : 0;
    std::vector<std::size_t> left, right;
    for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = 0; c < g.cols; ++c) (c < half ? left : right).push_back(offset + r * g.cols + c);
    const GridShape hg{g.rows, half};
    return {HalfTokens{take_rows(x.tokens, left), Side::left, hg},
            HalfTokens{take_rows(x.tokens, right), Side::right, hg}};
}

HalfTokens hflip(const HalfTokens& h) {
    std::vector<std::size_t> order;
    order.reserve(h.grid.count());
    for (std::size_t r = 0; r < h.grid.rows; ++r)
        for (std::size_t c = 0; c < h.grid.cols; ++c) order.push_back(r * h.grid.cols + (h.grid.cols - 1 - c));
    return HalfTokens{take_rows(h.tokens, order), h.side, h.grid};
}

AsymAttention asym_cross_attention(const HalfTokens& left, const HalfTokens& right_flipped, const FaamParams& params,
                                   AttentionRecorder* recorder) {
    if (left.tokens.shape() != right_flipped.tokens.shape()) {
        throw DimensionError("asym_cross_attention: halves " + shape_str(left.tokens.shape()) + " and " +
                             shape_str(right_flipped.tokens.shape()) + " differ");
    }
    Var ql = matmul(left.tokens, params.wq);
    Var kl = matmul(left.tokens, params.wk);
    Var vl = matmul(left.tokens, params.wv);
    Var qr = matmul(right_flipped.tokens, params.wq);
    Var kr = matmul(right_flipped.tokens, params.wk);
    Var vr = matmul(right_flipped.tokens, params.wv);
    return {scaled_attention(ql, kr, vr, recorder, kFaamLeftToRight),
            scaled_attention(qr, kl, vl, recorder, kFaamRightToLeft)};
}

Var asymmetry_signature(const Var& a_lr, const Var& a_rl) {
    if (a_lr.shape() != a_rl.shape()) {
        throw DimensionError("asymmetry_signature: " + shape_str(a_lr.shape()) + " vs " + shape_str(a_rl.shape()));
    }
    return mean_pool(abs(sub(a_lr, a_rl)), 0);
}

Var faam_forward(const TokenSeq& x, const FaamParams& params, AttentionRecorder* recorder) {
    auto [left, right] = split_halves(x);
    AsymAttention a = asym_cross_attention(left, hflip(right), params, recorder);
    return asymmetry_signature(a.left_to_right, a.right_to_left);
}

}  // namespace ahan
