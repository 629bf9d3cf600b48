#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ahan/attention.hpp"
#include "ahan/token_embed.hpp"

namespace ahan {

/// Canonical region order; f_HCA concatenates per-region features in this order.
inline constexpr std::array<std::string_view, 4> kRegionNames = {"eyes", "nose", "mouth", "jaw"};

/// Half-open patch-grid rectangle [row0, row1) x [col0, col1).
struct RegionRect {
    std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;
};

/// A named subset of patch indices standing in for a semantic facial region.
struct RegionSpec {
    std::string name;
    std::vector<std::size_t> patch_indices;  // sorted, unique

    /// Throws when empty or any index is outside [0, num_patches).
    void validate(std::size_t num_patches) const;
    static RegionSpec from_rects(std::string name, std::span<const RegionRect> rects, GridShape grid);
};

/// Rectangles for eyes (upper band), nose (centre), mouth (lower centre) and jaw (bottom rows plus sides).
std::vector<std::vector<RegionRect>> default_region_rects(GridShape grid);
std::vector<RegionSpec> default_regions(GridShape grid);

struct HcaProjection {
    Var wq, wk, wv;  // d x d
};

struct HcaParams {
    std::vector<std::vector<HcaProjection>> proj;  // [region][scale]
    Var scale_logits;                              // regions x scales

    static HcaParams init(std::size_t width, std::size_t regions, std::size_t scales, std::mt19937_64& rng,
                          double stddev = 0.02);
    /// Identity projections and zero logits.
    static HcaParams identity(std::size_t width, std::size_t regions, std::size_t scales);

    std::size_t regions() const { return proj.size(); }
    std::size_t scales() const { return proj.empty() ? 0 : proj[0].size(); }
    /// Softmax of the logits per region, as plain values.
    Tensor scale_weights() const;
    std::vector<Var> parameters() const;
};

/// Average non-overlapping s x s blocks of patch tokens. The class token is dropped.
TokenSeq downsample_tokens(const TokenSeq& x, std::size_t s);

/// Region queries at base resolution against keys/values of the grid downsampled by s.
Var region_cross_attention(const TokenSeq& x, const RegionSpec& region, std::size_t s, const HcaProjection& proj,
                           AttentionRecorder* recorder = nullptr, std::string_view site = {});

/// sum_s softmax(logits)_s * mean over rows of per_scale[s]; logits holds one value per scale.
Var aggregate_scales(std::span<const Var> per_scale, const Var& logits);

/// Per-region features concatenated in region order; width regions.size() * d.
Var hca_forward(const TokenSeq& x, std::span<const RegionSpec> regions, std::span<const std::size_t> scales,
                const HcaParams& params, AttentionRecorder* recorder = nullptr);

std::string hca_site(std::string_view region, std::size_t scale);

}  // namespace ahan
