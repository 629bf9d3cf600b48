#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "ahan/attention.hpp"

namespace ahan {

enum class Mode { train, infer };

/// Twin-distraction regularizer settings. Layer indices are 1-based and inclusive.
struct TapwcaConfig {
    bool enabled = true;
    double probability = 0.5;
    std::size_t first_layer = 6;
    std::size_t last_layer = 9;
    std::uint64_t rng_seed = 0;

    void validate(std::size_t depth) const;
    bool in_range(std::size_t layer) const { return layer >= first_layer && layer <= last_layer; }
};

struct CombinedKV {
    Var keys;
    Var values;
};

/// Row-wise [anchor; twin]. An undefined twin pair leaves the anchor tensors unchanged.
CombinedKV combine_kv(const Var& k_anchor, const Var& k_twin, const Var& v_anchor, const Var& v_twin);

/// Anchor queries over the combined key set; output rows match the query count.
Var ta_attention(const Var& q_anchor, const Var& k_combined, const Var& v_combined,
                 AttentionRecorder* recorder = nullptr, std::string_view site = {});

/// Multi-head attention where each head attends over anchor and twin keys/values.
Var ta_multi_head(const Var& anchor_normed, const Var& twin_normed, const AttnParams& params,
                  AttentionRecorder* recorder = nullptr, std::string_view site = {});

/// One draw per batch: true with the configured probability.
bool draw_gate(const TapwcaConfig& config, std::mt19937_64& rng);

/// Blocks (1-based) that use twin distraction for the given mode and gate outcome.
std::vector<std::size_t> distracted_layers(const TapwcaConfig& config, std::size_t depth, Mode mode, bool gate_open);

/// Plain block unless training, enabled, in range and gated; then anchor queries also see the twin.
/// `twin` is the twin's block input at the same layer.
TokenSeq gated_layer_forward(std::size_t layer, const TokenSeq& anchor, const TokenSeq* twin,
                             const BlockParams& params, const TapwcaConfig& config, Mode mode, bool gate_open,
                             AttentionRecorder* recorder = nullptr);

}  // namespace ahan
