// Test-only reference implementations, written as independent plain-double
// loops. These deliberately avoid every library code path they are used to
// check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "afford3d/metrics.hpp"
#include "afford3d/nn.hpp"
#include "afford3d/tensor.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix from_tensor(const afford3d::Tensor& t) {
    const std::int64_t rows = t.rank() == 2 ? t.dim(0) : 1;
    const std::int64_t cols = t.rank() == 2 ? t.dim(1) : t.size();
    Matrix m(static_cast<std::size_t>(rows), std::vector<double>(static_cast<std::size_t>(cols)));
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c)
            m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = t.at(r * cols + c);
    return m;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

// y = x W + b with W given as the library's [din, dout] tensor
inline Matrix linear(const Matrix& x, const afford3d::Tensor& weight,
                     const afford3d::Tensor& bias) {
    const auto w = from_tensor(weight);
    Matrix out(x.size(), std::vector<double>(w[0].size(), 0.0));
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < w[0].size(); ++j) {
            double acc = bias.size() ? bias.at(static_cast<std::int64_t>(j)) : 0.0;
            for (std::size_t k = 0; k < x[i].size(); ++k) acc += x[i][k] * w[k][j];
            out[i][j] = acc;
        }
    return out;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
    std::vector<double> e(logits.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        e[i] = std::exp(logits[i]);
        denom += e[i];
    }
    for (auto& v : e) v /= denom;
    return e;
}

inline std::vector<double> layer_norm_row(const std::vector<double>& x,
                                          const std::vector<double>& gamma,
                                          const std::vector<double>& beta, double eps) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = gamma[i] * (x[i] - mean) / std::sqrt(var + eps) + beta[i];
    return out;
}

// Full multi-head cross-attention with output projection, reading the
// projection parameters straight out of the module.
inline Matrix mha(const Matrix& query, const Matrix& key, const Matrix& value,
                  const afford3d::MultiHeadAttention& attn) {
    const Matrix q = linear(query, attn.q.weight.tensor, attn.q.bias.tensor);
    const Matrix k = linear(key, attn.k.weight.tensor, attn.k.bias.tensor);
    const Matrix v = linear(value, attn.v.weight.tensor, attn.v.bias.tensor);
    const std::size_t d = q[0].size();
    const std::size_t heads = static_cast<std::size_t>(attn.heads);
    const std::size_t dh = d / heads;
    Matrix ctx(q.size(), std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < q.size(); ++i) {
            std::vector<double> scores(k.size());
            for (std::size_t j = 0; j < k.size(); ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dot += q[i][h * dh + c] * k[j][h * dh + c];
                scores[j] = dot / std::sqrt(static_cast<double>(dh));
            }
            const auto weights = softmax(scores);
            for (std::size_t j = 0; j < k.size(); ++j)
                for (std::size_t c = 0; c < dh; ++c)
                    ctx[i][h * dh + c] += weights[j] * v[j][h * dh + c];
        }
    }
    return linear(ctx, attn.o.weight.tensor, attn.o.bias.tensor);
}

// ---- metric oracle ----
// Recomputed from scratch: sort-based grouping, explicit precision/recall
// arrays for AP.

struct Metrics {
    double miou_c, acc_c, macc_c;
    double miou_i, macc_i, mprec_i, mrec_i, map50_i;
};

inline double mask_iou(const afford3d::Mask& a, const afford3d::Mask& b) {
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] && b[i]) ++inter;
        if (a[i] || b[i]) ++uni;
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

inline Metrics metrics(const std::vector<afford3d::EvalSample>& raw) {
    struct Inst {
        const afford3d::EvalSample* s;
        std::int64_t id;
    };
    std::vector<Inst> kept;
    for (std::size_t i = 0; i < raw.size(); ++i)
        if (raw[i].cls != "none") kept.push_back({&raw[i], static_cast<std::int64_t>(i)});

    Metrics m{};
    // class level by sorting class names
    std::vector<std::string> classes;
    for (const auto& inst : kept) classes.push_back(inst.s->cls);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

    double pooled_correct = 0.0, pooled_total = 0.0;
    for (const auto& cls : classes) {
        double inter = 0.0, uni = 0.0, correct = 0.0, total = 0.0;
        for (const auto& inst : kept) {
            if (inst.s->cls != cls) continue;
            for (std::size_t i = 0; i < inst.s->pred.size(); ++i) {
                const bool p = inst.s->pred[i], g = inst.s->gt[i];
                if (p && g) inter += 1;
                if (p || g) uni += 1;
                if (p == g) correct += 1;
                total += 1;
            }
        }
        m.miou_c += uni == 0.0 ? 1.0 : inter / uni;
        m.macc_c += correct / total;
        pooled_correct += correct;
        pooled_total += total;
    }
    m.miou_c /= double(classes.size());
    m.macc_c /= double(classes.size());
    m.acc_c = pooled_correct / pooled_total;

    // instance level
    for (const auto& inst : kept) {
        double tp = 0, fp = 0, fn = 0, correct = 0;
        for (std::size_t i = 0; i < inst.s->pred.size(); ++i) {
            const bool p = inst.s->pred[i], g = inst.s->gt[i];
            if (p && g) ++tp;
            if (p && !g) ++fp;
            if (!p && g) ++fn;
            if (p == g) ++correct;
        }
        m.miou_i += mask_iou(inst.s->pred, inst.s->gt);
        m.macc_i += correct / double(inst.s->pred.size());
        if (tp + fp == 0 && tp + fn == 0) {
            m.mprec_i += 1.0;
            m.mrec_i += 1.0;
        } else if (tp + fp == 0 || tp + fn == 0) {
            // one side empty: zero credit
        } else {
            m.mprec_i += tp / (tp + fp);
            m.mrec_i += tp / (tp + fn);
        }
    }
    m.miou_i /= double(kept.size());
    m.macc_i /= double(kept.size());
    m.mprec_i /= double(kept.size());
    m.mrec_i /= double(kept.size());

    // AP@50 per class via explicit ranked lists
    for (const auto& cls : classes) {
        std::vector<Inst> members;
        for (const auto& inst : kept)
            if (inst.s->cls == cls) members.push_back(inst);
        std::stable_sort(members.begin(), members.end(), [](const Inst& a, const Inst& b) {
            if (a.s->confidence != b.s->confidence) return a.s->confidence > b.s->confidence;
            return a.id < b.id;
        });
        std::vector<double> precision, recall;
        double tps = 0.0;
        for (std::size_t r = 0; r < members.size(); ++r) {
            if (mask_iou(members[r].s->pred, members[r].s->gt) >= 0.5) tps += 1.0;
            precision.push_back(tps / double(r + 1));
            recall.push_back(tps / double(members.size()));
        }
        double ap = 0.0;
        for (std::size_t r = 0; r < members.size(); ++r) {
            const double prev = r == 0 ? 0.0 : recall[r - 1];
            if (recall[r] > prev) ap += (recall[r] - prev) * precision[r];
        }
        m.map50_i += ap;
    }
    m.map50_i /= double(classes.size());
    return m;
}

}  // namespace oracle
