#pragma once

#include <cstddef>
#include <random>

#include "ahan/autograd.hpp"

namespace ahan {

struct GridShape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t count() const { return rows * cols; }
    bool operator==(const GridShape&) const = default;
};

/// Token embeddings over a patch grid. When has_cls is set, row 0 is the class token.
struct TokenSeq {
    Var tokens;
    GridShape grid;
    bool has_cls = true;

    std::size_t width() const { return tokens.shape()[1]; }
    std::size_t token_count() const { return tokens.shape()[0]; }
    /// Patch rows only, class token dropped.
    Var patch_tokens() const;
    /// Class token as a [1 x d] row.
    Var cls_token() const;
};

struct EmbedParams {
    Var projection;  // (P*P*C) x d
    Var cls_token;   // 1 x d
    Var pos_embed;   // (N+1) x d

    static EmbedParams init(std::size_t patch_values, std::size_t num_patches, std::size_t width,
                            std::mt19937_64& rng, double stddev = 0.02);
};

/// Split an H x W x C image into non-overlapping patch rows, top-left to bottom-right.
Tensor patchify(const Tensor& image, std::size_t patch);

/// Class token plus projected patches, positional embeddings added.
TokenSeq embed(const Tensor& patches, const EmbedParams& params, GridShape grid);

}  // namespace ahan
