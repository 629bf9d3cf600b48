#include "ahan/tapwca.hpp"

#include <stdexcept>
#include <string>

namespace ahan {

void TapwcaConfig::validate(std::size_t depth) const {
    if (!(probability >= 0.0 && probability <= 1.0)) {
        throw std::invalid_argument("tapwca.probability must lie in [0, 1], got " + std::to_string(probability));
    }
    if (first_layer < 1 || first_layer > last_layer || last_layer > depth) {
        throw std::invalid_argument("tapwca.layer_range [" + std::to_string(first_layer) + ", " +
                                    std::to_string(last_layer) + "] must lie within [1, " + std::to_string(depth) +
                                    "]");
    }
}

CombinedKV combine_kv(const Var& k_anchor, const Var& k_twin, const Var& v_anchor, const Var& v_twin) {
    if (k_anchor.shape().size() != 2 || v_anchor.shape().size() != 2 || k_anchor.shape()[0] != v_anchor.shape()[0]) {
        throw DimensionError("combine_kv: anchor keys " + shape_str(k_anchor.shape()) + " and values " +
                             shape_str(v_anchor.shape()) + " disagree");
    }
    if (k_twin.defined() != v_twin.defined()) throw std::invalid_argument("combine_kv: twin keys/values incomplete");
    if (!k_twin.defined()) return {k_anchor, v_anchor};
    if (k_twin.shape().size() != 2 || k_twin.shape()[1] != k_anchor.shape()[1] ||
        v_twin.shape()[1] != v_anchor.shape()[1] || k_twin.shape()[0] != v_twin.shape()[0]) {
        throw DimensionError("combine_kv: twin " + shape_str(k_twin.shape()) + "/" + shape_str(v_twin.shape()) +
                             " incompatible with anchor " + shape_str(k_anchor.shape()) + "/" +
                             shape_str(v_anchor.shape()));
    }
    return {concat({k_anchor, k_twin}, 0), concat({v_anchor, v_twin}, 0)};
}

Var ta_attention(const Var& q_anchor, const Var& k_combined, const Var& v_combined, AttentionRecorder* recorder,
                 std::string_view site) {
    return scaled_attention(q_anchor, k_combined, v_combined, recorder, site);
}

Var ta_multi_head(const Var& anchor_normed, const Var& twin_normed, const AttnParams& params,
                  AttentionRecorder* recorder, std::string_view site) {
    const std::size_t d = params.width();
    if (anchor_normed.shape().size() != 2 || anchor_normed.shape()[1] != d || twin_normed.shape().size() != 2 ||
        twin_normed.shape()[1] != d) {
        throw DimensionError("ta_multi_head: inputs " + shape_str(anchor_normed.shape()) + " / " +
                             shape_str(twin_normed.shape()) + " do not match width " + std::to_string(d));
    }
    std::vector<Var> heads;
    for (std::size_t h = 0; h < params.heads(); ++h) {
        Var q = matmul(anchor_normed, params.wq[h]);
        CombinedKV kv = combine_kv(matmul(anchor_normed, params.wk[h]), matmul(twin_normed, params.wk[h]),
                                   matmul(anchor_normed, params.wv[h]), matmul(twin_normed, params.wv[h]));
        const std::string name = recorder ? std::string(site) + "/head" + std::to_string(h) : std::string();
        heads.push_back(ta_attention(q, kv.keys, kv.values, recorder, name));
    }
    Var joined = heads.size() == 1 ? heads[0] : concat(heads, 1);
    return matmul(joined, params.wo);
}

bool draw_gate(const TapwcaConfig& config, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return u(rng) < config.probability;
}

std::vector<std::size_t> distracted_layers(const TapwcaConfig& config, std::size_t depth, Mode mode, bool gate_open) {
    std::vector<std::size_t> out;
    if (mode != Mode::train || !config.enabled || !gate_open) return out;
    for (std::size_t l = 1; l <= depth; ++l)
        if (config.in_range(l)) out.push_back(l);
    return out;
}

TokenSeq gated_layer_forward(std::size_t layer, const TokenSeq& anchor, const TokenSeq* twin,
                             const BlockParams& params, const TapwcaConfig& config, Mode mode, bool gate_open,
                             AttentionRecorder* recorder) {
    const std::string site = recorder ? "block" + std::to_string(layer) : std::string();
    if (mode == Mode::infer || !config.enabled) return transformer_block(anchor, params, recorder, site);
    if (!gate_open || !config.in_range(layer)) return transformer_block(anchor, params, recorder, site);
    if (twin == nullptr) {
        throw std::invalid_argument("gated_layer_forward: layer " + std::to_string(layer) +
                                    " is gated for twin distraction but no twin batch was supplied");
    }
    // The twin is normalized with the same pre-norm parameters as the anchor.
    Var twin_normed = layer_norm(twin->tokens, params.ln1_gamma, params.ln1_beta);
    return transformer_block(anchor, params, [&](const Var& normed) {
        return ta_multi_head(normed, twin_normed, params.attn, recorder, site);
    });
}

}  // namespace ahan
