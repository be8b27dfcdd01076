#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "afford3d/fusion.hpp"
#include "afford3d/metrics.hpp"

namespace afford3d {

// Flat key=value training configuration. Defaults hold every architecture
// hyperparameter the mechanism itself leaves open.
struct TrainConfig {
    std::int64_t d = 64;
    int heads = 4;
    int decoder_layers = 2;
    std::vector<int> scales = {16, 32, 64};
    int k_nn = 16;
    std::int64_t d_pos = 24;

    double lr = 0.01;
    double momentum = 0.9;
    int epochs_stage1 = 30;
    int epochs_stage2 = 60;
    int batch_size = 4;
    int eval_every = 1;  // epochs between val evaluations (0 = final only)
    std::uint64_t seed = 1;
    LossWeights loss;

    std::string fusion_mode = "full";
    std::string prompt_source = "T_hat";
    std::string injection_source = "T";
    bool injection_on = true;
    std::string aggregation = "attention";
    bool freeze_voxel_encoder = true;

    std::int64_t n_points = 2048;
    double noise_sigma = 0.005;

    FusionModeSpec fusion() const { return parse_fusion_mode(fusion_mode); }
    // single:<R> lowers to a one-scale, one-token model
    std::vector<int> effective_scales() const;
    void validate() const;
};

TrainConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");
TrainConfig parse_config_file(const std::string& path);
std::string config_to_text(const TrainConfig& config);

}  // namespace afford3d
