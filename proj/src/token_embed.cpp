#include "ahan/token_embed.hpp"

#include <numeric>
#include <string>
#include <vector>

namespace ahan {

Var TokenSeq::patch_tokens() const {
    if (!has_cls) return tokens;
    std::vector<std::size_t> idx(token_count() - 1);
    std::iota(idx.begin(), idx.end(), std::size_t{1});
    return take_rows(tokens, idx);
}

Var TokenSeq::cls_token() const {
    if (!has_cls) throw std::logic_error("token sequence has no class token");
    const std::size_t zero = 0;
    return take_rows(tokens, std::span<const std::size_t>(&zero, 1));
}

EmbedParams EmbedParams::init(std::size_t patch_values, std::size_t num_patches, std::size_t width,
                              std::mt19937_64& rng, double stddev) {
    EmbedParams p;
    p.projection = Var::parameter(Tensor::randn({patch_values, width}, rng, stddev));
    p.cls_token = Var::parameter(Tensor::randn({1, width}, rng, stddev));
    p.pos_embed = Var::parameter(Tensor::randn({num_patches + 1, width}, rng, stddev));
    return p;
}

Tensor patchify(const Tensor& image, std::size_t patch) {
    if (image.rank() != 3) throw DimensionError("patchify: expected H x W x C image, got " + shape_str(image.shape()));
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw DimensionError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                             " is not divisible by patch " + std::to_string(patch));
    }
    const std::size_t gr = h / patch, gc = w / patch;
    Tensor out(Shape{gr * gc, patch * patch * c});
    for (std::size_t pr = 0; pr < gr; ++pr)
        for (std::size_t pc = 0; pc < gc; ++pc) {
            auto dst = out.row(pr * gc + pc);
            std::size_t k = 0;
            for (std::size_t y = 0; y < patch; ++y)
                for (std::size_t x = 0; x < patch; ++x)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        dst[k++] = image[((pr * patch + y) * w + (pc * patch + x)) * c + ch];
        }
    return out;
}

TokenSeq embed(const Tensor& patches, const EmbedParams& params, GridShape grid) {
    if (patches.rank() != 2 || patches.dim(0) != grid.count()) {
        throw DimensionError("embed: patches " + shape_str(patches.shape()) + " do not match a " +
                             std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " grid");
    }
    const std::size_t d = params.projection.shape()[1];
    if (params.projection.shape()[0] != patches.dim(1)) {
        throw DimensionError("embed: projection " + shape_str(params.projection.shape()) + " does not accept patches " +
                             shape_str(patches.shape()));
    }
    if (params.cls_token.shape() != Shape{1, d} || params.pos_embed.shape() != Shape{grid.count() + 1, d}) {
        throw DimensionError("embed: class token " + shape_str(params.cls_token.shape()) + " / positional table " +
                             shape_str(params.pos_embed.shape()) + " inconsistent with width " + std::to_string(d));
    }
    Var projected = matmul(Var(patches), params.projection);
    Var seq = concat({params.cls_token, projected}, 0);
    return TokenSeq{add(seq, params.pos_embed), grid, true};
}

}  // namespace ahan
