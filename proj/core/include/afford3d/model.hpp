#pragma once

#include <string>
#include <vector>

#include "afford3d/config.hpp"
#include "afford3d/decoder.hpp"
#include "afford3d/fusion.hpp"
#include "afford3d/geometry.hpp"
#include "afford3d/point_backbone.hpp"
#include "afford3d/propagation.hpp"
#include "afford3d/semantic_tokens.hpp"
#include "afford3d/voxel_encoder.hpp"

namespace afford3d {

// Per-forward switches; derived from config, overridden per training stage.
struct ForwardOptions {
    FusionModeSpec fusion{FusionMode::Full, 0};
    TokenSource prompt_source = TokenSource::Enhanced;
    TokenSource injection_source = TokenSource::Original;
    bool injection_on = true;
    PromptAggregation aggregation = PromptAggregation::Attention;
};

// Everything about a cloud that does not depend on parameters: normalized
// coordinates, the kNN graph, and per-scale voxel index maps plus their raw
// descriptors. Safe to cache across training steps.
struct PreparedCloud {
    PointCloud normalized;
    Tensor coords;  // [N,3]
    std::vector<std::int32_t> knn_graph;
    std::vector<VoxelIndexMap> maps;
    std::vector<Tensor> descriptors;
    std::int64_t n() const { return normalized.size(); }
};

struct CheckpointMeta {
    int stage = 0;
    int epoch = 0;
    std::string rng_state;
};

// The full detection pipeline: semantic tokens, voxel pyramid, gated fusion,
// dual-pathway propagation, two-way decoding.
class Model {
  public:
    explicit Model(const TrainConfig& config);

    const TrainConfig& config() const { return config_; }
    ForwardOptions default_options() const;

    PreparedCloud prepare(const PointCloud& raw_cloud) const;

    struct Trace {
        AffordanceTokenSet tokens;
        EnhancedTokenSet enhanced;
        Tensor point_features;        // F
        Tensor conditioned_features;  // F-hat
        Tensor prompt;
        Tensor logits;
        Tensor probabilities;  // [N]
    };

    Trace forward(const PreparedCloud& cloud, const std::string& query,
                  const ForwardOptions& options) const;
    Tensor loss(const Trace& trace, const Mask& gt) const;
    AffordanceMask predict(const PreparedCloud& cloud, const std::string& query,
                           const ForwardOptions& options) const;

    // Deterministic registration order; names are unique dotted paths.
    std::vector<Parameter*> parameters();
    std::vector<Parameter*> parameters_with_prefix(const std::string& prefix);

    // Checkpoints: <stem>.manifest (name shape init per line), <stem>.bin
    // (little-endian doubles in manifest order), <stem>.meta (stage, epoch,
    // rng state, config snapshot).
    void save_checkpoint(const std::string& stem, const CheckpointMeta& meta) const;
    CheckpointMeta load_checkpoint(const std::string& stem);
    static Model from_checkpoint(const std::string& stem, CheckpointMeta* meta_out = nullptr);
    static TrainConfig checkpoint_config(const std::string& stem);

    SemanticTokenizer& tokenizer() { return tokenizer_; }
    VoxelEncoder& voxel_encoder() { return voxel_encoder_; }
    FusionModule& fusion() { return fusion_; }
    PointBackbone& backbone() { return backbone_; }
    PropagationModule& propagation() { return propagation_; }
    TwoWayDecoder& decoder() { return decoder_; }

  private:
    TrainConfig config_;
    std::vector<int> scales_;
    SemanticTokenizer tokenizer_;
    VoxelEncoder voxel_encoder_;
    FusionModule fusion_;
    PointBackbone backbone_;
    PropagationModule propagation_;
    TwoWayDecoder decoder_;
};

ForwardOptions options_from_config(const TrainConfig& config);

}  // namespace afford3d
