#include "afford3d/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "afford3d/errors.hpp"

namespace afford3d {

SgdMomentum::SgdMomentum(std::vector<Parameter*> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    velocity_.reserve(params_.size());
    for (Parameter* p : params_)
        velocity_.emplace_back(static_cast<std::size_t>(p->tensor.size()), 0.0);
}

void SgdMomentum::zero_grad() {
    for (Parameter* p : params_) p->tensor.zero_grad();
}

void SgdMomentum::step(double grad_scale) {
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Parameter* p = params_[pi];
        auto& grad = p->tensor.grad();
        auto& vel = velocity_[pi];
        auto& vals = p->tensor.values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            vel[i] = momentum_ * vel[i] + grad_scale * grad[i];
            vals[i] -= lr_ * vel[i];
        }
    }
}

Trainer::Trainer(const TrainConfig& config, const Dataset& dataset)
    : config_(config), dataset_(&dataset), model_(config), rng_(mix64(config.seed ^ 0x7a17ull)) {}

const PreparedCloud& Trainer::prepared(std::int64_t sample_index) {
    auto it = cache_.find(sample_index);
    if (it == cache_.end())
        it = cache_
                 .emplace(sample_index,
                          model_.prepare(dataset_->samples[static_cast<std::size_t>(sample_index)]
                                             .cloud))
                 .first;
    return it->second;
}

std::vector<Parameter*> Trainer::trainable_for_stage(int stage) {
    std::vector<std::string> prefixes;
    if (stage == 1) {
        prefixes = {"backbone.", "decoder.", "voxel_encoder.", "semantic_tokens."};
    } else {
        prefixes = {"fusion.", "propagation.", "backbone.", "decoder."};
        if (!config_.freeze_voxel_encoder) prefixes.push_back("voxel_encoder.");
    }
    std::vector<Parameter*> out;
    for (const auto& prefix : prefixes)
        for (Parameter* p : model_.parameters_with_prefix(prefix)) out.push_back(p);
    return out;
}

const std::vector<std::string>& Trainer::csv_lines(int stage) const {
    return stage == 1 ? csv_stage1_ : csv_stage2_;
}

void Trainer::run_stage1(const std::function<bool(int)>& stop_after_epoch) {
    StageSetup setup;
    setup.stage = 1;
    setup.record_indices = dataset_->record_indices(Split::Stage1Train);
    if (setup.record_indices.empty()) throw TrainError("stage 1: stage1_train split is empty");
    setup.trainable = trainable_for_stage(1);
    setup.options = model_.default_options();
    setup.options.fusion = {FusionMode::Disabled, 0};  // tokens pass through in stage 1
    setup.epochs = config_.epochs_stage1;
    setup.eval_split = Split::Stage1Train;
    run_stage(setup, stop_after_epoch);
}

void Trainer::run_stage2(const std::function<bool(int)>& stop_after_epoch) {
    StageSetup setup;
    setup.stage = 2;
    setup.record_indices = dataset_->record_indices(Split::Stage2Train);
    if (setup.record_indices.empty()) throw TrainError("stage 2: stage2_train split is empty");
    setup.trainable = trainable_for_stage(2);
    setup.options = model_.default_options();
    setup.epochs = config_.epochs_stage2;
    setup.eval_split = dataset_->record_indices(Split::Val).empty() ? Split::Stage2Train
                                                                    : Split::Val;
    run_stage(setup, stop_after_epoch);
}

void Trainer::run_stage(const StageSetup& setup, const std::function<bool(int)>& stop_after_epoch) {
    auto& csv = setup.stage == 1 ? csv_stage1_ : csv_stage2_;
    csv.clear();
    csv.push_back("stage,epoch,split,loss," + report_csv_header());

    // group this split's records by sample; a batch is batch_size samples
    std::map<std::int64_t, std::vector<std::int64_t>> by_sample;
    for (std::int64_t ri : setup.record_indices)
        by_sample[dataset_->records[static_cast<std::size_t>(ri)].sample_index].push_back(ri);
    std::vector<std::int64_t> sample_order;
    for (const auto& [si, recs] : by_sample) sample_order.push_back(si);

    SgdMomentum optimizer(setup.trainable, config_.lr, config_.momentum);
    Rng stage_rng = rng_.fork(static_cast<std::uint64_t>(setup.stage));

    auto emit_row = [&](int epoch, double loss) {
        const MetricsReport report = evaluate(setup.eval_split);
        char head[128];
        std::snprintf(head, sizeof(head), "%d,%d,%s,%.6f,", setup.stage, epoch,
                      split_str(setup.eval_split).c_str(), loss);
        csv.push_back(head + report_csv_row(report));
    };

    for (int epoch = 1; epoch <= setup.epochs; ++epoch) {
        for (std::size_t i = sample_order.size(); i > 1; --i)
            std::swap(sample_order[i - 1], sample_order[stage_rng.below(i)]);

        double loss_sum = 0.0;
        std::int64_t record_count = 0;
        std::int64_t batch_id = 0;
        for (std::size_t start = 0; start < sample_order.size();
             start += static_cast<std::size_t>(config_.batch_size), ++batch_id) {
            const std::size_t end = std::min(sample_order.size(),
                                             start + static_cast<std::size_t>(config_.batch_size));
            optimizer.zero_grad();
            std::int64_t batch_records = 0;
            for (std::size_t bi = start; bi < end; ++bi) {
                const std::int64_t si = sample_order[bi];
                const PreparedCloud& cloud = prepared(si);
                for (std::int64_t ri : by_sample[si]) {
                    const DataRecord& rec = dataset_->records[static_cast<std::size_t>(ri)];
                    const Model::Trace trace = model_.forward(cloud, rec.query, setup.options);
                    Tensor loss = model_.loss(trace, rec.gt);
                    const double value = loss.item();
                    if (!std::isfinite(value))
                        throw TrainError("stage " + std::to_string(setup.stage) +
                                         ": non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(batch_id));
                    loss.backward();
                    loss_sum += value;
                    ++batch_records;
                }
            }
            if (batch_records > 0) {
                optimizer.step(1.0 / static_cast<double>(batch_records));
                if (setup.stage == 2) ++stage2_steps_;
                record_count += batch_records;
            }
        }
        last_epoch_loss_ = record_count > 0 ? loss_sum / static_cast<double>(record_count) : 0.0;

        const bool last = epoch == setup.epochs;
        if ((config_.eval_every > 0 && epoch % config_.eval_every == 0) || last)
            emit_row(epoch, last_epoch_loss_);
        if (stop_after_epoch && stop_after_epoch(epoch)) break;
    }
    if (setup.epochs == 0) emit_row(0, 0.0);
}

MetricsReport Trainer::evaluate(Split split) {
    const auto indices = dataset_->record_indices(split);
    if (indices.empty()) throw EvalError("evaluate: split " + split_str(split) + " is empty");
    std::vector<EvalSample> samples;
    samples.reserve(indices.size());
    const ForwardOptions options =
        split == Split::Stage1Train
            ? [&] {
                  ForwardOptions o = model_.default_options();
                  o.fusion = {FusionMode::Disabled, 0};
                  return o;
              }()
            : model_.default_options();
    for (std::int64_t ri : indices) {
        const DataRecord& rec = dataset_->records[static_cast<std::size_t>(ri)];
        const AffordanceMask mask =
            model_.predict(prepared(rec.sample_index), rec.query, options);
        samples.push_back({mask.binary, rec.gt, rec.cls, mask.confidence});
    }
    return evaluate_metrics(samples);
}

AffordanceMask Trainer::predict_record(const DataRecord& record) {
    return model_.predict(prepared(record.sample_index), record.query, model_.default_options());
}

void Trainer::save(const std::string& stem, int stage, int epoch) {
    CheckpointMeta meta;
    meta.stage = stage;
    meta.epoch = epoch;
    meta.rng_state = rng_.serialize();
    model_.save_checkpoint(stem, meta);
}

void Trainer::load_init(const std::string& stem) {
    try {
        model_.load_checkpoint(stem);
    } catch (const ParseError& e) {
        throw ConfigError("init checkpoint incompatible with config: " + std::string(e.what()));
    }
    cache_.clear();  // model parameters changed; cached clouds stay valid but cheap to rebuild
}

std::vector<std::vector<double>> Trainer::snapshot_parameters() {
    std::vector<std::vector<double>> out;
    for (Parameter* p : model_.parameters()) out.push_back(p->tensor.values());
    return out;
}

void Trainer::restore_parameters(const std::vector<std::vector<double>>& snapshot) {
    const auto params = model_.parameters();
    if (snapshot.size() != params.size())
        throw ConfigError("parameter snapshot does not match model structure");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (snapshot[i].size() != params[i]->tensor.values().size())
            throw ConfigError("parameter snapshot shape mismatch at " + params[i]->name);
        params[i]->tensor.values() = snapshot[i];
    }
}

std::vector<AblationVariant> ablation_suite(const std::string& suite) {
    if (suite == "components") {
        return {
            {"full", [](TrainConfig&) {}},
            {"no_fusion", [](TrainConfig& c) { c.fusion_mode = "disabled"; }},
            {"no_injection", [](TrainConfig& c) { c.injection_on = false; }},
            {"concat_aggregation", [](TrainConfig& c) { c.aggregation = "concat"; }},
            {"direct_add", [](TrainConfig& c) { c.fusion_mode = "direct_add"; }},
        };
    }
    if (suite == "assignment") {
        auto set = [](TrainConfig& c, const char* prompt, const char* inject) {
            c.prompt_source = prompt;
            c.injection_source = inject;
        };
        return {
            {"assign_That_T", [set](TrainConfig& c) { set(c, "T_hat", "T"); }},
            {"assign_T_That", [set](TrainConfig& c) { set(c, "T", "T_hat"); }},
            {"assign_That_That", [set](TrainConfig& c) { set(c, "T_hat", "T_hat"); }},
            {"assign_T_T", [set](TrainConfig& c) { set(c, "T", "T"); }},
        };
    }
    if (suite == "scales") {
        return {
            {"single16", [](TrainConfig& c) { c.fusion_mode = "single:16"; }},
            {"single32", [](TrainConfig& c) { c.fusion_mode = "single:32"; }},
            {"single64", [](TrainConfig& c) { c.fusion_mode = "single:64"; }},
            {"same_scale_3x32", [](TrainConfig& c) { c.fusion_mode = "same_scale"; }},
            {"multi_scale", [](TrainConfig&) {}},
        };
    }
    throw ConfigError("unknown ablation suite: " + suite);
}

namespace {

// everything stage 1 depends on; variants matching here share stage-1 runs
std::string stage1_signature(const TrainConfig& cfg) {
    std::ostringstream os;
    os << cfg.d << '|' << cfg.heads << '|' << cfg.decoder_layers << '|';
    for (int s : cfg.effective_scales()) os << s << ',';
    os << '|' << cfg.k_nn << '|' << cfg.d_pos << '|' << cfg.lr << '|' << cfg.momentum << '|'
       << cfg.epochs_stage1 << '|' << cfg.batch_size << '|' << cfg.seed << '|'
       << cfg.loss.lambda_bce << '|' << cfg.loss.lambda_dice << '|' << cfg.loss.eps_dice << '|'
       << cfg.aggregation << '|' << cfg.n_points;
    return os.str();
}

}  // namespace

std::vector<std::string> run_ablation(const TrainConfig& base, const Dataset& dataset,
                                      const std::vector<AblationVariant>& variants, int n_seeds) {
    if (variants.empty()) throw ConfigError("ablation: empty variant list");
    if (n_seeds < 1) throw ConfigError("ablation: n_seeds must be >= 1");
    {
        std::set<std::string> names;
        for (const auto& v : variants)
            if (!names.insert(v.name).second)
                throw ConfigError("ablation: duplicate variant name '" + v.name + "'");
    }

    std::vector<std::string> csv;
    csv.push_back("variant,seed,split," + report_csv_header());
    std::map<std::string, std::vector<std::vector<double>>> stage1_cache;

    for (const auto& variant : variants) {
        for (int si = 0; si < n_seeds; ++si) {
            TrainConfig cfg = base;
            variant.mutate(cfg);
            cfg.seed = base.seed + static_cast<std::uint64_t>(si);
            cfg.validate();

            Trainer trainer(cfg, dataset);
            const std::string signature = stage1_signature(cfg);
            auto it = stage1_cache.find(signature);
            if (it == stage1_cache.end()) {
                trainer.run_stage1();
                stage1_cache.emplace(signature, trainer.snapshot_parameters());
            } else {
                trainer.restore_parameters(it->second);
            }
            trainer.run_stage2();

            for (Split split : {Split::Val, Split::OpenSetTest}) {
                if (dataset.record_indices(split).empty()) continue;
                const MetricsReport report = trainer.evaluate(split);
                csv.push_back(variant.name + "," + std::to_string(cfg.seed) + "," +
                              split_str(split) + "," + report_csv_row(report));
            }
        }
    }
    return csv;
}

}  // namespace afford3d
