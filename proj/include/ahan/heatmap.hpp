#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ahan/attention.hpp"
#include "ahan/model.hpp"

namespace ahan {

/// Per-patch attention mass laid out on a grid.
struct AttentionGrid {
    GridShape grid;
    std::vector<double> values;  // row-major, grid.count() entries
};

/// Selectors: "block:L" (class-token row, heads averaged), "hca:REGION:S", "faam:lr", "faam:rl".
std::vector<std::string> valid_selectors(const ModelConfig& config);

/// Pulls the selected weights out of a recorded inference forward.
AttentionGrid select_attention(const AttentionRecorder& recorder, const ModelConfig& config,
                               std::string_view selector);

/// Min-max normalized (a flat map becomes 0.5) and nearest-neighbour upsampled to height x width x 1.
Tensor render_heatmap(const AttentionGrid& attention, std::size_t height, std::size_t width);

/// Runs an inference forward, renders the selected map at image resolution and writes it as PGM.
/// FAAM maps cover one half of the face, so they are half the image width.
Tensor export_attention_map(const AhanWeights& weights, const ModelConfig& config, const Tensor& image,
                            std::string_view selector, const std::filesystem::path& out);

}  // namespace ahan
