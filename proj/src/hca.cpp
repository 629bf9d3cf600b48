#include "ahan/hca.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace ahan {

void RegionSpec::validate(std::size_t num_patches) const {
    if (patch_indices.empty()) throw std::invalid_argument("region '" + name + "' has no patches");
    for (auto i : patch_indices) {
        if (i >= num_patches) {
            throw std::out_of_range("region '" + name + "' index " + std::to_string(i) + " outside [0, " +
                                    std::to_string(num_patches) + ")");
        }
    }
}

RegionSpec RegionSpec::from_rects(std::string name, std::span<const RegionRect> rects, GridShape grid) {
    std::set<std::size_t> idx;
    for (const auto& r : rects) {
        if (r.row0 >= r.row1 || r.col0 >= r.col1 || r.row1 > grid.rows || r.col1 > grid.cols) {
            throw std::out_of_range("region '" + name + "' rectangle [" + std::to_string(r.row0) + "," +
                                    std::to_string(r.row1) + ")x[" + std::to_string(r.col0) + "," +
                                    std::to_string(r.col1) + ") does not fit a " + std::to_string(grid.rows) + "x" +
                                    std::to_string(grid.cols) + " grid");
        }
        for (std::size_t row = r.row0; row < r.row1; ++row)
            for (std::size_t col = r.col0; col < r.col1; ++col) idx.insert(row * grid.cols + col);
    }
    RegionSpec spec{std::move(name), {idx.begin(), idx.end()}};
    spec.validate(grid.count());
    return spec;
}

std::vector<std::vector<RegionRect>> default_region_rects(GridShape grid) {
    if (grid.rows < 4 || grid.cols < 3) {
        throw std::invalid_argument("default regions need at least a 4x3 grid, got " + std::to_string(grid.rows) +
                                    "x" + std::to_string(grid.cols));
    }
    const std::size_t band = grid.rows / 4 + (grid.rows % 4 >= 2 ? 1 : 0);
    const std::size_t third = std::max<std::size_t>(1, grid.rows / 3);
    const std::size_t eyes_end = std::min(third, grid.rows - 3);
    const std::size_t nose_end = std::min(eyes_end + std::max<std::size_t>(1, band), grid.rows - 2);
    const std::size_t mouth_end = std::min(nose_end + std::max<std::size_t>(1, band), grid.rows - 1);
    const std::size_t side = std::max<std::size_t>(1, grid.cols / 7);
    const std::size_t c0 = side, c1 = grid.cols - side;
    return {
        {{0, 0, eyes_end, grid.cols}},
        {{eyes_end, c0, nose_end, c1}},
        {{nose_end, c0, mouth_end, c1}},
        {{mouth_end, 0, grid.rows, grid.cols}, {eyes_end, 0, mouth_end, c0}, {eyes_end, c1, mouth_end, grid.cols}},
    };
}

std::vector<RegionSpec> default_regions(GridShape grid) {
    const auto rects = default_region_rects(grid);
    std::vector<RegionSpec> out;
    for (std::size_t k = 0; k < kRegionNames.size(); ++k)
        out.push_back(RegionSpec::from_rects(std::string(kRegionNames[k]), rects[k], grid));
    return out;
}

HcaParams HcaParams::init(std::size_t width, std::size_t regions, std::size_t scales, std::mt19937_64& rng,
                          double stddev) {
    HcaParams p;
    p.proj.resize(regions);
    for (auto& per_region : p.proj)
        for (std::size_t s = 0; s < scales; ++s)
            per_region.push_back({Var::parameter(Tensor::randn({width, width}, rng, stddev)),
                                  Var::parameter(Tensor::randn({width, width}, rng, stddev)),
                                  Var::parameter(Tensor::randn({width, width}, rng, stddev))});
    p.scale_logits = Var::parameter(Tensor::zeros({regions, scales}));
    return p;
}

HcaParams HcaParams::identity(std::size_t width, std::size_t regions, std::size_t scales) {
    HcaParams p;
    p.proj.resize(regions);
    for (auto& per_region : p.proj)
        for (std::size_t s = 0; s < scales; ++s)
            per_region.push_back({Var::parameter(Tensor::identity(width)), Var::parameter(Tensor::identity(width)),
                                  Var::parameter(Tensor::identity(width))});
    p.scale_logits = Var::parameter(Tensor::zeros({regions, scales}));
    return p;
}

Tensor HcaParams::scale_weights() const {
    return softmax(Var(scale_logits.value()), 1).value();
}

std::vector<Var> HcaParams::parameters() const {
    std::vector<Var> out;
    for (const auto& per_region : proj)
        for (const auto& p : per_region) {
            out.push_back(p.wq);
            out.push_back(p.wk);
            out.push_back(p.wv);
        }
    out.push_back(scale_logits);
    return out;
}

TokenSeq downsample_tokens(const TokenSeq& x, std::size_t s) {
    if (s == 0) throw std::invalid_argument("downsample_tokens: scale must be positive");
    if (x.grid.rows % s != 0 || x.grid.cols % s != 0) {
        throw DimensionError("downsample_tokens: grid " + std::to_string(x.grid.rows) + "x" +
                             std::to_string(x.grid.cols) + " is not divisible by scale " + std::to_string(s));
    }
    Var patches = x.patch_tokens();
    if (s == 1) return TokenSeq{patches, x.grid, false};
    return TokenSeq{grid_avg_pool(patches, x.grid.rows, x.grid.cols, s), GridShape{x.grid.rows / s, x.grid.cols / s},
                    false};
}

Var region_cross_attention(const TokenSeq& x, const RegionSpec& region, std::size_t s, const HcaProjection& proj,
                           AttentionRecorder* recorder, std::string_view site) {
    region.validate(x.grid.count());
    Var patches = x.patch_tokens();
    Var q = matmul(take_rows(patches, region.patch_indices), proj.wq);
    TokenSeq coarse = downsample_tokens(x, s);
    Var k = matmul(coarse.tokens, proj.wk);
    Var v = matmul(coarse.tokens, proj.wv);
    return scaled_attention(q, k, v, recorder, site);
}

Var aggregate_scales(std::span<const Var> per_scale, const Var& logits) {
    if (per_scale.empty()) throw std::invalid_argument("aggregate_scales: no scales");
    if (logits.size() != per_scale.size()) {
        throw DimensionError("aggregate_scales: " + std::to_string(logits.size()) + " logits for " +
                             std::to_string(per_scale.size()) + " scales");
    }
    const std::size_t d = per_scale[0].shape()[1];
    for (const auto& a : per_scale)
        if (a.shape().size() != 2 || a.shape()[1] != d) throw DimensionError("aggregate_scales: width mismatch");
    Var alpha = softmax(reshape(logits, {per_scale.size()}), 0);
    Var f;
    for (std::size_t s = 0; s < per_scale.size(); ++s) {
        const std::size_t idx = s;
        Var weighted = mul_scalar(mean_pool(per_scale[s], 0), gather(alpha, std::span<const std::size_t>(&idx, 1)));
        f = f.defined() ? add(f, weighted) : weighted;
    }
    return f;
}

Var hca_forward(const TokenSeq& x, std::span<const RegionSpec> regions, std::span<const std::size_t> scales,
                const HcaParams& params, AttentionRecorder* recorder) {
    if (regions.size() != params.regions() || scales.size() != params.scales()) {
        throw DimensionError("hca_forward: parameters cover " + std::to_string(params.regions()) + " regions x " +
                             std::to_string(params.scales()) + " scales, got " + std::to_string(regions.size()) +
                             " x " + std::to_string(scales.size()));
    }
    const std::size_t n_scales = scales.size();
    std::vector<Var> features;
    for (std::size_t k = 0; k < regions.size(); ++k) {
        std::vector<Var> per_scale;
        for (std::size_t si = 0; si < n_scales; ++si) {
            const std::string site = recorder ? hca_site(regions[k].name, scales[si]) : std::string();
            per_scale.push_back(region_cross_attention(x, regions[k], scales[si], params.proj[k][si], recorder, site));
        }
        std::vector<std::size_t> row(n_scales);
        std::iota(row.begin(), row.end(), k * n_scales);
        features.push_back(aggregate_scales(per_scale, gather(params.scale_logits, row)));
    }
    return concat(features, 0);
}

std::string hca_site(std::string_view region, std::size_t scale) {
    return "hca/" + std::string(region) + "/s" + std::to_string(scale);
}

}  // namespace ahan
