#pragma once

#include <string>
#include <utility>

#include "afford3d/nn.hpp"
#include "afford3d/tensor.hpp"

namespace afford3d {

enum class TokenSource { Original, Enhanced };

// Accepts T / original and T_hat / enhanced.
TokenSource parse_token_source(const std::string& text);
std::string token_source_str(TokenSource source);

enum class PromptAggregation { Attention, Concat };
PromptAggregation parse_aggregation(const std::string& text);

// Picks which token set feeds the prompt pathway and which feeds the
// per-point injection pathway.
std::pair<TokenSource, TokenSource> assign_pathways(const std::string& prompt_source,
                                                    const std::string& injection_source);

// Dual-pathway propagation: token aggregation into a spatially aware prompt,
// and per-point semantic conditioning through a zero-initialized residual.
class PropagationModule {
  public:
    PropagationModule() = default;
    PropagationModule(std::int64_t d, int heads, int n_tokens, Rng& rng);

    // q = f_q(mean of original tokens); prompt = LN(q + attention(q over
    // prompt_keys)). The concat aggregation replaces the attention term with
    // a linear projection of the flattened key set.
    Tensor make_prompt(const Tensor& original_tokens /*[K,d]*/,
                       const Tensor& prompt_keys /*[K,d]*/,
                       PromptAggregation aggregation = PromptAggregation::Attention) const;

    // F + f_zero(attention(F over tokens)); exact identity while f_zero is
    // zero.
    Tensor inject_semantics(const Tensor& point_features /*[N,d]*/,
                            const Tensor& source_tokens /*[K,d]*/) const;

    const Parameter& zero_projection_weight() const { return f_zero.weight; }
    void collect(std::vector<Parameter*>& out);

  private:
    std::int64_t d_ = 0;
    int n_tokens_ = 0;
    Linear f_q;
    MultiHeadAttention prompt_attn;
    LayerNormLayer prompt_ln;
    Linear concat_proj;  // [K*d] -> d, used by the concat aggregation only
    MultiHeadAttention inject_attn;
    Linear f_zero;  // zero-initialized weights and bias
};

}  // namespace afford3d
