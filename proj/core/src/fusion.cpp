#include "afford3d/fusion.hpp"

#include <algorithm>

#include "afford3d/errors.hpp"

namespace afford3d {

FusionModeSpec parse_fusion_mode(const std::string& text) {
    if (text == "full") return {FusionMode::Full, 0};
    if (text == "direct_add") return {FusionMode::DirectAdd, 0};
    if (text == "disabled") return {FusionMode::Disabled, 0};
    if (text == "same_scale") return {FusionMode::SameScale, 0};
    if (text.rfind("single:", 0) == 0) {
        const std::string num = text.substr(7);
        if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError("fusion.mode: bad scale in '" + text + "'");
        return {FusionMode::Single, std::stoi(num)};
    }
    throw ConfigError("fusion.mode: unknown mode '" + text + "'");
}

std::string fusion_mode_str(const FusionModeSpec& spec) {
    switch (spec.mode) {
        case FusionMode::Full: return "full";
        case FusionMode::DirectAdd: return "direct_add";
        case FusionMode::Disabled: return "disabled";
        case FusionMode::SameScale: return "same_scale";
        case FusionMode::Single: return "single:" + std::to_string(spec.single_scale);
    }
    return "?";
}

FusionModule::FusionModule(const std::vector<int>& scales, std::int64_t d, int heads, Rng& rng)
    : scales_(scales), d_(d) {
    per_scale_.reserve(scales.size());
    for (int s : scales_) {
        const std::string prefix = "fusion.s" + std::to_string(s);
        ScaleParams p;
        p.phi = Linear(prefix + ".phi", d, d, rng);
        p.attn = MultiHeadAttention(prefix + ".attn", d, heads, rng);
        p.f_s = Linear(prefix + ".f_s", d, d, rng);
        p.f_g = Linear(prefix + ".f_g", d, d, rng);
        p.gate = Linear(prefix + ".gate", 2 * d, 1, rng, InitMode::Xavier, InitMode::Constant,
                        -2.0);
        p.inject = make_parameter(prefix + ".inject", {d, d}, InitMode::Zeros, rng);
        per_scale_.push_back(std::move(p));
    }
}

Tensor FusionModule::attend(const ScaleParams& p, const Tensor& token,
                            const VoxelFeatureSet& voxels) {
    const Tensor projected = p.phi(voxels.tokens);
    return p.attn(token, projected, projected);
}

Tensor FusionModule::retrieve(const Tensor& token, const VoxelFeatureSet& voxels,
                              std::size_t scale_index) const {
    if (scale_index >= per_scale_.size())
        throw ConfigError("fusion: scale index out of range");
    if (voxels.scale != scales_[scale_index])
        throw ShapeError("fusion: voxel set at scale " + std::to_string(voxels.scale) +
                         " paired with token tagged " + std::to_string(scales_[scale_index]));
    return attend(per_scale_[scale_index], token, voxels);
}

std::pair<Tensor, Tensor> FusionModule::gate_inject(const Tensor& token, const Tensor& retrieved,
                                                    std::size_t scale_index) const {
    const ScaleParams& p = per_scale_[scale_index];
    const Tensor alpha = sigmoid(p.gate(concat_cols(p.f_s(token), p.f_g(retrieved))));
    const Tensor injected = matmul(retrieved, p.inject.tensor);
    if (!grad_enabled()) {
        // inference fast path: a zero injection (fresh module) leaves the
        // token bitwise untouched
        const auto& v = injected.values();
        if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }))
            return {token, alpha};
    }
    return {add(token, bmul_scalar(injected, alpha)), alpha};
}

EnhancedTokenSet FusionModule::fuse(const AffordanceTokenSet& tokens,
                                    const std::vector<VoxelFeatureSet>& pyramid,
                                    const FusionModeSpec& mode) const {
    const std::int64_t k = tokens.tokens.dim(0);
    if (k != static_cast<std::int64_t>(scales_.size()))
        throw ShapeError("fusion: " + std::to_string(k) + " tokens for " +
                         std::to_string(scales_.size()) + " scales");

    EnhancedTokenSet out;
    if (mode.mode == FusionMode::Disabled) {
        out.tokens = tokens.tokens;
        return out;
    }
    if (mode.mode == FusionMode::Single)
        throw ConfigError("fusion: single:<R> must be lowered to a one-scale model");
    if (pyramid.size() != scales_.size())
        throw ShapeError("fusion: pyramid has " + std::to_string(pyramid.size()) +
                         " scales, expected " + std::to_string(scales_.size()));

    // Table-style same-scale variant pairs every token with the middle scale.
    const std::size_t same_idx = scales_.size() / 2;

    std::vector<Tensor> enhanced_rows;
    std::vector<Tensor> retrieved_rows;
    enhanced_rows.reserve(static_cast<std::size_t>(k));
    for (std::int64_t j = 0; j < k; ++j) {
        const Tensor t_j = row(tokens.tokens, j);
        const Tensor g_j =
            mode.mode == FusionMode::SameScale
                ? attend(per_scale_[static_cast<std::size_t>(j)], t_j, pyramid[same_idx])
                : retrieve(t_j, pyramid[static_cast<std::size_t>(j)], static_cast<std::size_t>(j));
        retrieved_rows.push_back(g_j);
        if (mode.mode == FusionMode::DirectAdd) {
            const Tensor injected = matmul(g_j, per_scale_[static_cast<std::size_t>(j)].inject.tensor);
            enhanced_rows.push_back(add(t_j, injected));
        } else {
            auto [t_hat, alpha] = gate_inject(t_j, g_j, static_cast<std::size_t>(j));
            enhanced_rows.push_back(t_hat);
            out.gates.push_back(alpha.item());
        }
    }
    out.tokens = concat_rows(enhanced_rows);
    out.retrieved = concat_rows(retrieved_rows);
    return out;
}

void FusionModule::collect(std::vector<Parameter*>& out) {
    for (auto& p : per_scale_) {
        p.phi.collect(out);
        p.attn.collect(out);
        p.f_s.collect(out);
        p.f_g.collect(out);
        p.gate.collect(out);
        out.push_back(&p.inject);
    }
}

}  // namespace afford3d
