#pragma once

#include <string>
#include <vector>

#include "afford3d/nn.hpp"
#include "afford3d/semantic_tokens.hpp"
#include "afford3d/tensor.hpp"
#include "afford3d/voxel_encoder.hpp"

namespace afford3d {

enum class FusionMode { Full, DirectAdd, Disabled, SameScale, Single };

struct FusionModeSpec {
    FusionMode mode = FusionMode::Full;
    int single_scale = 0;  // valid when mode == Single
};

// Accepts: full | direct_add | disabled | same_scale | single:<R>
FusionModeSpec parse_fusion_mode(const std::string& text);
std::string fusion_mode_str(const FusionModeSpec& spec);

// Voxel-enhanced tokens plus the gate values and retrieved geometry that
// produced them. gates/retrieved stay empty in disabled mode.
struct EnhancedTokenSet {
    Tensor tokens;  // [K, d]
    std::vector<double> gates;
    Tensor retrieved;  // [K, d]; undefined in disabled mode
};

// Token-conditioned retrieval from the paired voxel scale plus gated
// injection. The injection matrix starts at exact zeros so a fresh module is
// the identity on tokens; the gate bias starts at -2 so the gate opens
// gradually.
class FusionModule {
  public:
    FusionModule() = default;
    FusionModule(const std::vector<int>& scales, std::int64_t d, int heads, Rng& rng);

    // Single-query cross-attention of a token over its paired scale's
    // projected voxel tokens.
    Tensor retrieve(const Tensor& token /*[1,d]*/, const VoxelFeatureSet& voxels,
                    std::size_t scale_index) const;

    // Returns (enhanced token, gate alpha [1,1]).
    std::pair<Tensor, Tensor> gate_inject(const Tensor& token, const Tensor& retrieved,
                                          std::size_t scale_index) const;

    EnhancedTokenSet fuse(const AffordanceTokenSet& tokens,
                          const std::vector<VoxelFeatureSet>& pyramid,
                          const FusionModeSpec& mode) const;

    const Parameter& injection_matrix(std::size_t scale_index) const {
        return per_scale_[scale_index].inject;
    }
    void collect(std::vector<Parameter*>& out);

  private:
    struct ScaleParams {
        Linear phi;  // voxel feature projection, keys and values share it
        MultiHeadAttention attn;
        Linear f_s, f_g;
        Linear gate;       // [f_s(t); f_g(g)] -> logit, bias starts at -2
        Parameter inject;  // [d, d], zero-initialized
    };
    static Tensor attend(const ScaleParams& p, const Tensor& token, const VoxelFeatureSet& voxels);

    std::vector<int> scales_;
    std::int64_t d_ = 0;
    std::vector<ScaleParams> per_scale_;
};

}  // namespace afford3d
