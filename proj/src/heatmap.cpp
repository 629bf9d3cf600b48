#include "ahan/heatmap.hpp"

#include <algorithm>
#include <stdexcept>

#include "ahan/faam.hpp"
#include "ahan/hca.hpp"
#include "ahan/image_io.hpp"

namespace ahan {

namespace {

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) return out;
        start = pos + 1;
    }
}

std::size_t parse_count(const std::string& s) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) return 0;
    return std::stoul(s);
}

// Mean over the rows of an attention matrix, skipping `skip_cols` leading key columns.
std::vector<double> column_means(const Tensor& w, std::size_t first_row, std::size_t last_row, std::size_t skip_cols) {
    std::vector<double> out(w.cols() - skip_cols, 0.0);
    for (std::size_t r = first_row; r < last_row; ++r)
        for (std::size_t c = skip_cols; c < w.cols(); ++c) out[c - skip_cols] += w(r, c);
    for (auto& v : out) v /= static_cast<double>(last_row - first_row);
    return out;
}

[[noreturn]] void bad_selector(std::string_view selector, const ModelConfig& config) {
    std::string msg = "invalid attention selector '" + std::string(selector) + "'; valid options:";
    for (const auto& s : valid_selectors(config)) msg += " " + s;
    throw std::invalid_argument(msg);
}

const Tensor& need(const AttentionRecorder& recorder, const std::string& site) {
    const Tensor* w = recorder.find(site);
    if (!w) throw std::runtime_error("no attention recorded at " + site);
    return *w;
}

}  // namespace

std::vector<std::string> valid_selectors(const ModelConfig& config) {
    std::vector<std::string> out;
    for (std::size_t l = 1; l <= config.depth; ++l) out.push_back("block:" + std::to_string(l));
    for (const auto& r : config.region_specs())
        for (auto s : config.scales) out.push_back("hca:" + r.name + ":" + std::to_string(s));
    out.push_back("faam:lr");
    out.push_back("faam:rl");
    return out;
}

AttentionGrid select_attention(const AttentionRecorder& recorder, const ModelConfig& config,
                               std::string_view selector) {
    const auto parts = split(selector, ':');
    const GridShape grid = config.grid();
    if (parts.size() == 2 && parts[0] == "block") {
        const std::size_t layer = parse_count(parts[1]);
        if (layer < 1 || layer > config.depth) bad_selector(selector, config);
        std::vector<double> acc(grid.count(), 0.0);
        for (std::size_t h = 0; h < config.heads; ++h) {
            const auto row = column_means(need(recorder, block_head_site(layer, h)), 0, 1, 1);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += row[i] / static_cast<double>(config.heads);
        }
        return {grid, acc};
    }
    if (parts.size() == 3 && parts[0] == "hca") {
        const auto regions = config.region_specs();
        const bool known = std::any_of(regions.begin(), regions.end(), [&](const auto& r) { return r.name == parts[1]; });
        const std::size_t scale = parse_count(parts[2]);
        if (!known || std::find(config.scales.begin(), config.scales.end(), scale) == config.scales.end()) {
            bad_selector(selector, config);
        }
        const Tensor& w = need(recorder, hca_site(parts[1], scale));
        return {{grid.rows / scale, grid.cols / scale}, column_means(w, 0, w.rows(), 0)};
    }
    if (parts.size() == 2 && parts[0] == "faam" && (parts[1] == "lr" || parts[1] == "rl")) {
        const Tensor& w = need(recorder, parts[1] == "lr" ? kFaamLeftToRight : kFaamRightToLeft);
        return {{grid.rows, grid.cols / 2}, column_means(w, 0, w.rows(), 0)};
    }
    bad_selector(selector, config);
}

Tensor render_heatmap(const AttentionGrid& attention, std::size_t height, std::size_t width) {
    if (attention.values.size() != attention.grid.count() || attention.values.empty()) {
        throw DimensionError("render_heatmap: " + std::to_string(attention.values.size()) + " values for a " +
                             std::to_string(attention.grid.rows) + "x" + std::to_string(attention.grid.cols) +
                             " grid");
    }
    const auto [lo, hi] = std::minmax_element(attention.values.begin(), attention.values.end());
    const double range = *hi - *lo;
    Tensor out({height, width, 1});
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const std::size_t gr = y * attention.grid.rows / height;
            const std::size_t gc = x * attention.grid.cols / width;
            const double v = attention.values[gr * attention.grid.cols + gc];
            out[y * width + x] = range > 0.0 ? (v - *lo) / range : 0.5;
        }
    return out;
}

Tensor export_attention_map(const AhanWeights& weights, const ModelConfig& config, const Tensor& image,
                            std::string_view selector, const std::filesystem::path& out) {
    AttentionRecorder recorder;
    ForwardOptions opts;
    opts.mode = Mode::infer;
    opts.recorder = &recorder;
    // Validate before paying for the forward pass.
    const auto valid = valid_selectors(config);
    if (std::find(valid.begin(), valid.end(), selector) == valid.end()) bad_selector(selector, config);
    ahan_forward(image, weights, config, opts);
    const AttentionGrid grid = select_attention(recorder, config, selector);
    const std::size_t h = image.dim(0);
    const std::size_t w = selector.starts_with("faam") ? image.dim(1) / 2 : image.dim(1);
    Tensor map = render_heatmap(grid, h, w);
    write_image(out, map);
    return map;
}

}  // namespace ahan
