#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "afford3d/model.hpp"
#include "afford3d/synthdata.hpp"

namespace afford3d {

// Plain gradient descent with momentum over a fixed parameter list.
// Gradients are accumulated across a batch and scaled at step time.
class SgdMomentum {
  public:
    SgdMomentum(std::vector<Parameter*> params, double lr, double momentum);
    void zero_grad();
    void step(double grad_scale);

  private:
    std::vector<Parameter*> params_;
    std::vector<std::vector<double>> velocity_;
    double lr_;
    double momentum_;
};

// Two-stage training driver. Stage 1 pre-trains the point backbone and
// decoder on part queries with fusion disabled; stage 2 trains fusion and
// propagation on affordance queries with the voxel encoder frozen by
// default.
class Trainer {
  public:
    Trainer(const TrainConfig& config, const Dataset& dataset);

    // stop_after_epoch, when given, is called after every epoch and may end
    // the stage early.
    void run_stage1(const std::function<bool(int epoch)>& stop_after_epoch = nullptr);
    void run_stage2(const std::function<bool(int epoch)>& stop_after_epoch = nullptr);

    MetricsReport evaluate(Split split);
    AffordanceMask predict_record(const DataRecord& record);

    Model& model() { return model_; }
    const TrainConfig& config() const { return config_; }
    const std::vector<std::string>& csv_lines(int stage) const;
    std::int64_t stage2_steps() const { return stage2_steps_; }
    double last_epoch_loss() const { return last_epoch_loss_; }

    void save(const std::string& stem, int stage, int epoch);
    // Initializes stage 2 from a stage-1 checkpoint; structural mismatch is
    // a configuration error.
    void load_init(const std::string& stem);

    // in-memory stage-1 reuse across ablation variants
    std::vector<std::vector<double>> snapshot_parameters();
    void restore_parameters(const std::vector<std::vector<double>>& snapshot);

    const PreparedCloud& prepared(std::int64_t sample_index);

  private:
    struct StageSetup {
        int stage;
        std::vector<std::int64_t> record_indices;
        std::vector<Parameter*> trainable;
        ForwardOptions options;
        int epochs;
        Split eval_split;
    };
    void run_stage(const StageSetup& setup, const std::function<bool(int)>& stop_after_epoch);
    std::vector<Parameter*> trainable_for_stage(int stage);

    TrainConfig config_;
    const Dataset* dataset_;
    Model model_;
    std::map<std::int64_t, PreparedCloud> cache_;
    std::vector<std::string> csv_stage1_, csv_stage2_;
    Rng rng_;
    std::int64_t stage2_steps_ = 0;
    double last_epoch_loss_ = 0.0;
};

struct AblationVariant {
    std::string name;
    std::function<void(TrainConfig&)> mutate;
};

// Built-in suites: "components" (Table-4 style), "assignment" (all four
// prompt/injection source combinations), "scales" (three single scales,
// same-scale triple, full multi-scale).
std::vector<AblationVariant> ablation_suite(const std::string& suite);

// Trains every variant with seeds base.seed..base.seed+n_seeds-1 on the same
// dataset, evaluates val and open_set_test, and returns CSV lines
// (variant,seed,split,metrics...). Stage-1 results are shared between
// variants whose configs agree on everything stage 1 can see.
std::vector<std::string> run_ablation(const TrainConfig& base, const Dataset& dataset,
                                      const std::vector<AblationVariant>& variants, int n_seeds);

}  // namespace afford3d
