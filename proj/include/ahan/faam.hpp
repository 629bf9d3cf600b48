#pragma once

#include <random>
#include <utility>

#include "ahan/attention.hpp"
#include "ahan/token_embed.hpp"

namespace ahan {

enum class Side { left, right };

/// One vertical half of the patch grid, rows in grid order.
struct HalfTokens {
    Var tokens;  // (rows * cols/2) x d
    Side side = Side::left;
    GridShape grid;
};

/// One projection set shared by both attention directions.
struct FaamParams {
    Var wq, wk, wv;  // d x d

    static FaamParams init(std::size_t width, std::mt19937_64& rng, double stddev = 0.02);
    static FaamParams identity(std::size_t width);
    std::vector<Var> parameters() const { return {wq, wk, wv}; }
};

struct AsymAttention {
    Var left_to_right;  // left queries against right keys/values
    Var right_to_left;  // right queries against left keys/values
};

inline constexpr const char* kFaamLeftToRight = "faam/lr";
inline constexpr const char* kFaamRightToLeft = "faam/rl";

/// Columns [0, cols/2) go left, the rest right. The class token is excluded.
std::pair<HalfTokens, HalfTokens> split_halves(const TokenSeq& x);

/// Reverse column order within every grid row.
HalfTokens hflip(const HalfTokens& h);

AsymAttention asym_cross_attention(const HalfTokens& left, const HalfTokens& right_flipped, const FaamParams& params,
                                   AttentionRecorder* recorder = nullptr);

/// Token-axis mean of |a_lr - a_rl|.
Var asymmetry_signature(const Var& a_lr, const Var& a_rl);

/// split -> flip right -> bidirectional attention -> signature; width d.
Var faam_forward(const TokenSeq& x, const FaamParams& params, AttentionRecorder* recorder = nullptr);

}  // namespace ahan
