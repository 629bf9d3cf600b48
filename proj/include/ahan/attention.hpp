#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ahan/autograd.hpp"
#include "ahan/token_embed.hpp"

namespace ahan {

/// Collects attention weight matrices by site name during a forward pass.
class AttentionRecorder {
  public:
    void record(std::string site, Tensor weights);
    const Tensor* find(std::string_view site) const;
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    void clear() { entries_.clear(); }

  private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

/// softmax(Q K^T / sqrt(cols(Q))) V. Weights go to `recorder` under `site` when given.
Var scaled_attention(const Var& q, const Var& k, const Var& v, AttentionRecorder* recorder = nullptr,
                     std::string_view site = {});

struct AttnParams {
    std::vector<Var> wq, wk, wv;  // per head, d x (d/h)
    Var wo;                       // d x d

    std::size_t heads() const { return wq.size(); }
    std::size_t width() const { return wo.shape()[0]; }

    static AttnParams init(std::size_t width, std::size_t heads, std::mt19937_64& rng, double stddev = 0.02);
    std::vector<Var> parameters() const;
};

struct BlockParams {
    AttnParams attn;
    Var ln1_gamma, ln1_beta;
    Var ln2_gamma, ln2_beta;
    Var ff_w1, ff_b1;  // d x (r*d), 1 x (r*d)
    Var ff_w2, ff_b2;  // (r*d) x d, 1 x d

    static BlockParams init(std::size_t width, std::size_t heads, std::size_t mlp_ratio, std::mt19937_64& rng,
                            double stddev = 0.02);
    std::vector<Var> parameters() const;
};

/// Multi-head attention with queries from `query_src` and keys/values from `kv_src`.
Var multi_head_attention(const Var& query_src, const Var& kv_src, const AttnParams& params,
                         AttentionRecorder* recorder = nullptr, std::string_view site = {});

/// Multi-head self-attention; token count and width are preserved.
TokenSeq mhsa(const TokenSeq& x, const AttnParams& params, AttentionRecorder* recorder = nullptr,
              std::string_view site = {});

/// Maps the normalized block input to the attention sub-layer output (before the residual add).
using AttentionSublayer = std::function<Var(const Var& normed)>;

/// Pre-norm block: x + attend(LN1(x)), then + FFN(LN2(.)).
TokenSeq transformer_block(const TokenSeq& x, const BlockParams& params, const AttentionSublayer& attend);
TokenSeq transformer_block(const TokenSeq& x, const BlockParams& params, AttentionRecorder* recorder = nullptr,
                           std::string_view site = {});

/// Site name used for head `head` (0-based) of block `layer` (1-based).
std::string block_head_site(std::size_t layer, std::size_t head);

}  // namespace ahan
