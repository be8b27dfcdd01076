#include "afford3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

#include "afford3d/errors.hpp"

namespace afford3d {

namespace {

std::vector<double> mask_as_doubles(const Mask& gt) {
    std::vector<double> g(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) g[i] = gt[i] ? 1.0 : 0.0;
    return g;
}

}  // namespace

Tensor bce_loss(const Tensor& probabilities, const Mask& gt) {
    if (probabilities.size() != static_cast<std::int64_t>(gt.size()))
        throw ShapeError("bce: " + std::to_string(probabilities.size()) + " probabilities vs " +
                         std::to_string(gt.size()) + " labels");
    const auto g = mask_as_doubles(gt);
    std::vector<double> g_inv(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) g_inv[i] = 1.0 - g[i];
    const Tensor p = clampv(probabilities, 1e-7, 1.0 - 1e-7);
    const Tensor pos = cmul(log_t(p), g);
    const Tensor neg = cmul(log_t(rsub_scalar(1.0, p)), g_inv);
    return scale(mean_all(add(pos, neg)), -1.0);
}

Tensor dice_loss(const Tensor& probabilities, const Mask& gt, double eps) {
    if (probabilities.size() != static_cast<std::int64_t>(gt.size()))
        throw ShapeError("dice: " + std::to_string(probabilities.size()) + " probabilities vs " +
                         std::to_string(gt.size()) + " labels");
    if (probabilities.size() < 1) throw ShapeError("dice: empty mask");
    const auto g = mask_as_doubles(gt);
    double g_sum = 0.0;
    for (double v : g) g_sum += v;
    const Tensor intersection = sum_all(cmul(probabilities, g));
    const Tensor numerator = add_scalar(scale(intersection, 2.0), eps);
    const Tensor denominator = add_scalar(sum_all(probabilities), g_sum + eps);
    return rsub_scalar(1.0, div(numerator, denominator));
}

Tensor mask_loss(const Tensor& probabilities, const Mask& gt, const LossWeights& weights) {
    return add(scale(bce_loss(probabilities, gt), weights.lambda_bce),
               scale(dice_loss(probabilities, gt, weights.eps_dice), weights.lambda_dice));
}

double iou(const Mask& pred, const Mask& gt) {
    if (pred.size() != gt.size())
        throw ShapeError("iou: mask sizes " + std::to_string(pred.size()) + " vs " +
                         std::to_string(gt.size()));
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
    }
    if (uni == 0) return 1.0;  // both empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

ClassReport class_metrics(const std::vector<EvalSample>& samples) {
    std::map<std::string, std::vector<const EvalSample*>> by_class;
    std::int64_t pooled_correct = 0, pooled_total = 0;
    for (const auto& s : samples) {
        if (s.cls == "none") continue;
        if (s.pred.size() != s.gt.size())
            throw ShapeError("class_metrics: pred/gt size mismatch in class " + s.cls);
        by_class[s.cls].push_back(&s);
    }
    if (by_class.empty()) throw EvalError("class_metrics: no classes after none-exclusion");

    ClassReport report;
    for (const auto& [cls, members] : by_class) {
        std::int64_t inter = 0, uni = 0, correct = 0, total = 0;
        for (const EvalSample* s : members) {
            for (std::size_t i = 0; i < s->pred.size(); ++i) {
                const bool p = s->pred[i] != 0, g = s->gt[i] != 0;
                inter += (p && g) ? 1 : 0;
                uni += (p || g) ? 1 : 0;
                correct += (p == g) ? 1 : 0;
                ++total;
            }
        }
        const double class_iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        const double class_acc = static_cast<double>(correct) / static_cast<double>(total);
        report.iou_per_class[cls] = class_iou;
        report.acc_per_class[cls] = class_acc;
        report.miou += class_iou;
        report.macc += class_acc;
        pooled_correct += correct;
        pooled_total += total;
    }
    report.classes = static_cast<std::int64_t>(by_class.size());
    report.miou /= static_cast<double>(report.classes);
    report.macc /= static_cast<double>(report.classes);
    report.acc = static_cast<double>(pooled_correct) / static_cast<double>(pooled_total);
    return report;
}

InstanceReport instance_metrics(const std::vector<EvalSample>& samples) {
    struct Scored {
        double confidence;
        std::int64_t id;
        double iou;
    };
    std::map<std::string, std::vector<Scored>> by_class;
    InstanceReport report;
    std::int64_t id = 0;
    for (const auto& s : samples) {
        const std::int64_t instance_id = id++;
        if (s.cls == "none") continue;
        if (s.pred.size() != s.gt.size())
            throw ShapeError("instance_metrics: pred/gt size mismatch in class " + s.cls);
        std::int64_t tp = 0, fp = 0, fn = 0, correct = 0;
        const std::int64_t n = static_cast<std::int64_t>(s.pred.size());
        for (std::size_t i = 0; i < s.pred.size(); ++i) {
            const bool p = s.pred[i] != 0, g = s.gt[i] != 0;
            tp += (p && g) ? 1 : 0;
            fp += (p && !g) ? 1 : 0;
            fn += (!p && g) ? 1 : 0;
            correct += (p == g) ? 1 : 0;
        }
        const bool pred_empty = tp + fp == 0, gt_empty = tp + fn == 0;
        double prec, rec;
        if (pred_empty && gt_empty) {
            prec = rec = 1.0;
        } else if (pred_empty || gt_empty) {
            prec = rec = 0.0;
        } else {
            prec = static_cast<double>(tp) / static_cast<double>(tp + fp);
            rec = static_cast<double>(tp) / static_cast<double>(tp + fn);
        }
        const double inst_iou = iou(s.pred, s.gt);
        report.miou += inst_iou;
        report.macc += static_cast<double>(correct) / static_cast<double>(n);
        report.mprec += prec;
        report.mrec += rec;
        ++report.instances;
        by_class[s.cls].push_back({s.confidence, instance_id, inst_iou});
    }
    if (report.instances == 0) throw EvalError("instance_metrics: no instances after none-exclusion");
    report.miou /= static_cast<double>(report.instances);
    report.macc /= static_cast<double>(report.instances);
    report.mprec /= static_cast<double>(report.instances);
    report.mrec /= static_cast<double>(report.instances);

    // AP at IoU 0.5, per class then macro-averaged. Every instance of the
    // class counts as a positive; rank by confidence, ties by instance id.
    for (auto& [cls, scored] : by_class) {
        std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
            if (a.confidence != b.confidence) return a.confidence > b.confidence;
            return a.id < b.id;
        });
        const double positives = static_cast<double>(scored.size());
        double ap = 0.0, prev_recall = 0.0;
        std::int64_t tp_so_far = 0;
        for (std::size_t r = 0; r < scored.size(); ++r) {
            if (scored[r].iou >= 0.5) {
                ++tp_so_far;
                const double recall = static_cast<double>(tp_so_far) / positives;
                const double precision =
                    static_cast<double>(tp_so_far) / static_cast<double>(r + 1);
                ap += (recall - prev_recall) * precision;
                prev_recall = recall;
            }
        }
        report.map50 += ap;
    }
    report.classes = static_cast<std::int64_t>(by_class.size());
    report.map50 /= static_cast<double>(report.classes);
    return report;
}

MetricsReport evaluate_metrics(const std::vector<EvalSample>& samples) {
    return {class_metrics(samples), instance_metrics(samples)};
}

std::string report_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["class_level"]["miou"] = report.class_level.miou;
    j["class_level"]["acc"] = report.class_level.acc;
    j["class_level"]["macc"] = report.class_level.macc;
    j["class_level"]["classes"] = report.class_level.classes;
    for (const auto& [cls, v] : report.class_level.iou_per_class) {
        j["class_level"]["per_class"][cls]["iou"] = v;
        j["class_level"]["per_class"][cls]["acc"] = report.class_level.acc_per_class.at(cls);
    }
    j["instance_level"]["miou"] = report.instance_level.miou;
    j["instance_level"]["macc"] = report.instance_level.macc;
    j["instance_level"]["mprec"] = report.instance_level.mprec;
    j["instance_level"]["mrec"] = report.instance_level.mrec;
    j["instance_level"]["map50"] = report.instance_level.map50;
    j["instance_level"]["instances"] = report.instance_level.instances;
    j["instance_level"]["classes"] = report.instance_level.classes;
    return j.dump(2);
}

std::string report_csv_header() {
    return "miou_c,acc_c,macc_c,miou_i,macc_i,mprec_i,mrec_i,map50_i";
}

std::string report_csv_row(const MetricsReport& report) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f",
                  100.0 * report.class_level.miou, 100.0 * report.class_level.acc,
                  100.0 * report.class_level.macc, 100.0 * report.instance_level.miou,
                  100.0 * report.instance_level.macc, 100.0 * report.instance_level.mprec,
                  100.0 * report.instance_level.mrec, 100.0 * report.instance_level.map50);
    return buf;
}

}  // namespace afford3d
