#include "ahan/attention.hpp"

#include <cmath>

namespace ahan {

void AttentionRecorder::record(std::string site, Tensor weights) {
    entries_.emplace_back(std::move(site), std::move(weights));
}

const Tensor* AttentionRecorder::find(std::string_view site) const {
    for (const auto& [name, w] : entries_)
        if (name == site) return &w;
    return nullptr;
}

Var scaled_attention(const Var& q, const Var& k, const Var& v, AttentionRecorder* recorder, std::string_view site) {
    const Shape& qs = q.shape();
    const Shape& ks = k.shape();
    const Shape& vs = v.shape();
    if (qs.size() != 2 || ks.size() != 2 || vs.size() != 2) throw DimensionError("scaled_attention: expected matrices");
    if (ks[0] != vs[0]) {
        throw DimensionError("scaled_attention: keys " + shape_str(ks) + " and values " + shape_str(vs) +
                             " have different row counts");
    }
    if (qs[1] != ks[1]) {
        throw DimensionError("scaled_attention: queries " + shape_str(qs) + " and keys " + shape_str(ks) +
                             " have different widths");
    }
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(qs[1]));
    Var weights = softmax(scale(matmul(q, transpose(k)), inv_scale), 1);
    if (recorder) recorder->record(std::string(site), weights.value());
    return matmul(weights, v);
}

AttnParams AttnParams::init(std::size_t width, std::size_t heads, std::mt19937_64& rng, double stddev) {
    if (heads == 0 || width % heads != 0) {
        throw std::invalid_argument("width " + std::to_string(width) + " is not divisible by " +
                                    std::to_string(heads) + " heads");
    }
    const std::size_t dh = width / heads;
    AttnParams p;
    for (std::size_t h = 0; h < heads; ++h) {
        p.wq.push_back(Var::parameter(Tensor::randn({width, dh}, rng, stddev)));
        p.wk.push_back(Var::parameter(Tensor::randn({width, dh}, rng, stddev)));
        p.wv.push_back(Var::parameter(Tensor::randn({width, dh}, rng, stddev)));
    }
    p.wo = Var::parameter(Tensor::randn({width, width}, rng, stddev));
    return p;
}

std::vector<Var> AttnParams::parameters() const {
    std::vector<Var> out;
    for (std::size_t h = 0; h < heads(); ++h) {
        out.push_back(wq[h]);
        out.push_back(wk[h]);
        out.push_back(wv[h]);
    }
    out.push_back(wo);
    return out;
}

BlockParams BlockParams::init(std::size_t width, std::size_t heads, std::size_t mlp_ratio, std::mt19937_64& rng,
                              double stddev) {
    BlockParams p;
    p.attn = AttnParams::init(width, heads, rng, stddev);
    p.ln1_gamma = Var::parameter(Tensor::ones({1, width}));
    p.ln1_beta = Var::parameter(Tensor::zeros({1, width}));
    p.ln2_gamma = Var::parameter(Tensor::ones({1, width}));
    p.ln2_beta = Var::parameter(Tensor::zeros({1, width}));
    const std::size_t hidden = mlp_ratio * width;
    p.ff_w1 = Var::parameter(Tensor::randn({width, hidden}, rng, stddev));
    p.ff_b1 = Var::parameter(Tensor::zeros({1, hidden}));
    p.ff_w2 = Var::parameter(Tensor::randn({hidden, width}, rng, stddev));
    p.ff_b2 = Var::parameter(Tensor::zeros({1, width}));
    return p;
}

std::vector<Var> BlockParams::parameters() const {
    std::vector<Var> out = attn.parameters();
    for (const Var& v : {ln1_gamma, ln1_beta, ln2_gamma, ln2_beta, ff_w1, ff_b1, ff_w2, ff_b2}) out.push_back(v);
    return out;
}

Var multi_head_attention(const Var& query_src, const Var& kv_src, const AttnParams& params,
                         AttentionRecorder* recorder, std::string_view site) {
    const std::size_t d = params.width();
    if (query_src.shape().size() != 2 || query_src.shape()[1] != d || kv_src.shape().size() != 2 ||
        kv_src.shape()[1] != d) {
        throw DimensionError("multi_head_attention: inputs " + shape_str(query_src.shape()) + " / " +
                             shape_str(kv_src.shape()) + " do not match width " + std::to_string(d));
    }
    std::vector<Var> heads;
    heads.reserve(params.heads());
    for (std::size_t h = 0; h < params.heads(); ++h) {
        Var q = matmul(query_src, params.wq[h]);
        Var k = matmul(kv_src, params.wk[h]);
        Var v = matmul(kv_src, params.wv[h]);
        const std::string name = recorder ? std::string(site) + "/head" + std::to_string(h) : std::string();
        heads.push_back(scaled_attention(q, k, v, recorder, name));
    }
    Var joined = heads.size() == 1 ? heads[0] : concat(heads, 1);
    return matmul(joined, params.wo);
}

TokenSeq mhsa(const TokenSeq& x, const AttnParams& params, AttentionRecorder* recorder, std::string_view site) {
    return TokenSeq{multi_head_attention(x.tokens, x.tokens, params, recorder, site), x.grid, x.has_cls};
}

TokenSeq transformer_block(const TokenSeq& x, const BlockParams& params, const AttentionSublayer& attend) {
    Var normed = layer_norm(x.tokens, params.ln1_gamma, params.ln1_beta);
    Var attended = attend(normed);
    if (attended.shape() != x.tokens.shape()) {
        throw DimensionError("transformer_block: attention output " + shape_str(attended.shape()) +
                             " does not match input " + shape_str(x.tokens.shape()));
    }
    Var h = add(x.tokens, attended);
    Var normed2 = layer_norm(h, params.ln2_gamma, params.ln2_beta);
    Var hidden = gelu(add_row(matmul(normed2, params.ff_w1), params.ff_b1));
    Var ff = add_row(matmul(hidden, params.ff_w2), params.ff_b2);
    return TokenSeq{add(h, ff), x.grid, x.has_cls};
}

TokenSeq transformer_block(const TokenSeq& x, const BlockParams& params, AttentionRecorder* recorder,
                           std::string_view site) {
    return transformer_block(x, params, [&](const Var& normed) {
        return multi_head_attention(normed, normed, params.attn, recorder, site);
    });
}

std::string block_head_site(std::size_t layer, std::size_t head) {
    return "block" + std::to_string(layer) + "/head" + std::to_string(head);
}

}  // namespace ahan
