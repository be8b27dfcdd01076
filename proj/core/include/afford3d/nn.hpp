#pragma once

#include <functional>
#include <string>
#include <vector>

#include "afford3d/rng.hpp"
#include "afford3d/tensor.hpp"

namespace afford3d {

enum class InitMode { Xavier, Zeros, Constant };

std::string init_mode_str(InitMode mode, double value);

// Named learnable tensor. Names are dotted paths (module.layer.weight) and
// must be unique within a model; the checkpoint blob is written in
// registration order.
struct Parameter {
    std::string name;
    Tensor tensor;
    InitMode init = InitMode::Xavier;
    double init_value = 0.0;
};

Parameter make_parameter(std::string name, Shape shape, InitMode mode, Rng& rng,
                         double const_value = 0.0);

struct Linear {
    Parameter weight;  // [din, dout]
    Parameter bias;    // [dout]

    Linear() = default;
    Linear(const std::string& prefix, std::int64_t din, std::int64_t dout, Rng& rng,
           InitMode weight_mode = InitMode::Xavier, InitMode bias_mode = InitMode::Zeros,
           double bias_const = 0.0);

    Tensor operator()(const Tensor& x) const { return linear(x, weight.tensor, bias.tensor); }
    void collect(std::vector<Parameter*>& out);
};

struct LayerNormLayer {
    Parameter gamma;
    Parameter beta;
    double eps = 1e-8;

    LayerNormLayer() = default;
    LayerNormLayer(const std::string& prefix, std::int64_t width, Rng& rng);

    Tensor operator()(const Tensor& x) const {
        return layer_norm(x, gamma.tensor, beta.tensor, eps);
    }
    void collect(std::vector<Parameter*>& out);
};

// Scaled dot-product multi-head attention with per-head pre-projection and an
// output projection. No internal residual; callers add their own.
struct MultiHeadAttention {
    Linear q, k, v, o;
    int heads = 4;
    std::int64_t width = 0;

    MultiHeadAttention() = default;
    MultiHeadAttention(const std::string& prefix, std::int64_t d, int heads, Rng& rng);

    Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value) const;
    void collect(std::vector<Parameter*>& out);
};

inline Tensor cross_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                              const MultiHeadAttention& attn) {
    return attn(query, key, value);
}

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst;  // "param.name[i]"
};

// Compares reverse-mode gradients of a scalar loss against central finite
// differences over every coordinate of the given parameters. The loss
// closure must be deterministic; it is re-run under NoGradGuard for the
// probes. Relative error uses denominator max(|a|,|b|,1e-8).
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<Parameter*>& params, double h = 1e-5);

}  // namespace afford3d
