#pragma once

#include <map>
#include <string>
#include <vector>

#include "afford3d/decoder.hpp"
#include "afford3d/tensor.hpp"

namespace afford3d {

struct LossWeights {
    double lambda_bce = 1.0;
    double lambda_dice = 1.0;
    double eps_dice = 1.0;
};

// Mean over points of -[g log p + (1-g) log(1-p)], probabilities clamped to
// [1e-7, 1-1e-7]. Differentiable in the probability tensor.
Tensor bce_loss(const Tensor& probabilities, const Mask& gt);

// 1 - (2 sum(p*g) + eps) / (sum(p) + sum(g) + eps)
Tensor dice_loss(const Tensor& probabilities, const Mask& gt, double eps = 1.0);

Tensor mask_loss(const Tensor& probabilities, const Mask& gt, const LossWeights& weights);

// |pred & gt| / |pred | gt|; 1 when both masks are empty, 0 when exactly one
// is.
double iou(const Mask& pred, const Mask& gt);

// One evaluated query-object instance.
struct EvalSample {
    Mask pred;
    Mask gt;
    std::string cls;
    double confidence = 0.0;
};

struct ClassReport {
    std::map<std::string, double> iou_per_class;
    std::map<std::string, double> acc_per_class;
    double miou = 0.0;  // unweighted class mean
    double acc = 0.0;   // point-pooled over all retained samples
    double macc = 0.0;  // unweighted class mean
    std::int64_t classes = 0;
};

struct InstanceReport {
    double miou = 0.0;
    double macc = 0.0;
    double mprec = 0.0;
    double mrec = 0.0;
    double map50 = 0.0;
    std::int64_t instances = 0;
    std::int64_t classes = 0;
};

struct MetricsReport {
    ClassReport class_level;
    InstanceReport instance_level;
};

// Samples labeled "none" are dropped before aggregation. Throws EvalError
// when nothing remains.
ClassReport class_metrics(const std::vector<EvalSample>& samples);
InstanceReport instance_metrics(const std::vector<EvalSample>& samples);
MetricsReport evaluate_metrics(const std::vector<EvalSample>& samples);

std::string report_json(const MetricsReport& report);
// Values x100 to match percentage-style tables.
std::string report_csv_header();
std::string report_csv_row(const MetricsReport& report);

}  // namespace afford3d
