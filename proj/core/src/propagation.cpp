#include "afford3d/propagation.hpp"

#include <algorithm>

#include "afford3d/errors.hpp"

namespace afford3d {

TokenSource parse_token_source(const std::string& text) {
    if (text == "T" || text == "original") return TokenSource::Original;
    if (text == "T_hat" || text == "enhanced") return TokenSource::Enhanced;
    throw ConfigError("token source: expected T|original|T_hat|enhanced, got '" + text + "'");
}

std::string token_source_str(TokenSource source) {
    return source == TokenSource::Original ? "T" : "T_hat";
}

PromptAggregation parse_aggregation(const std::string& text) {
    if (text == "attention") return PromptAggregation::Attention;
    if (text == "concat") return PromptAggregation::Concat;
    throw ConfigError("propagation.aggregation: expected attention|concat, got '" + text + "'");
}

std::pair<TokenSource, TokenSource> assign_pathways(const std::string& prompt_source,
                                                    const std::string& injection_source) {
    return {parse_token_source(prompt_source), parse_token_source(injection_source)};
}

PropagationModule::PropagationModule(std::int64_t d, int heads, int n_tokens, Rng& rng)
    : d_(d), n_tokens_(n_tokens) {
    f_q = Linear("propagation.f_q", d, d, rng);
    prompt_attn = MultiHeadAttention("propagation.prompt_attn", d, heads, rng);
    prompt_ln = LayerNormLayer("propagation.prompt_ln", d, rng);
    concat_proj = Linear("propagation.concat_proj", n_tokens * d, d, rng);
    inject_attn = MultiHeadAttention("propagation.inject_attn", d, heads, rng);
    f_zero = Linear("propagation.f_zero", d, d, rng, InitMode::Zeros, InitMode::Zeros);
}

Tensor PropagationModule::make_prompt(const Tensor& original_tokens, const Tensor& prompt_keys,
                                      PromptAggregation aggregation) const {
    if (original_tokens.dim(0) < 1) throw ShapeError("make_prompt: empty token set");
    const Tensor q_aff = f_q(mean_rows(original_tokens));
    Tensor aggregated;
    if (aggregation == PromptAggregation::Attention) {
        aggregated = prompt_attn(q_aff, prompt_keys, prompt_keys);
    } else {
        aggregated = concat_proj(reshape(prompt_keys, {1, prompt_keys.size()}));
    }
    return prompt_ln(add(q_aff, aggregated));
}

Tensor PropagationModule::inject_semantics(const Tensor& point_features,
                                           const Tensor& source_tokens) const {
    const Tensor attended = inject_attn(point_features, source_tokens, source_tokens);
    const Tensor residual = f_zero(attended);
    if (!grad_enabled()) {
        const auto& v = residual.values();
        if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }))
            return point_features;
    }
    return add(point_features, residual);
}

void PropagationModule::collect(std::vector<Parameter*>& out) {
    f_q.collect(out);
    prompt_attn.collect(out);
    prompt_ln.collect(out);
    concat_proj.collect(out);
    inject_attn.collect(out);
    f_zero.collect(out);
}

}  // namespace afford3d
