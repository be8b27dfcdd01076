#include "afford3d/nn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "afford3d/errors.hpp"

namespace afford3d {

std::string init_mode_str(InitMode mode, double value) {
    switch (mode) {
        case InitMode::Xavier: return "xavier";
        case InitMode::Zeros: return "zeros";
        case InitMode::Constant: {
            std::ostringstream os;
            os << "constant:" << value;
            return os.str();
        }
    }
    return "unknown";
}

Parameter make_parameter(std::string name, Shape shape, InitMode mode, Rng& rng,
                         double const_value) {
    Parameter p;
    p.name = std::move(name);
    p.init = mode;
    p.init_value = const_value;
    p.tensor = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    switch (mode) {
        case InitMode::Zeros: break;
        case InitMode::Constant:
            std::fill(p.tensor.values().begin(), p.tensor.values().end(), const_value);
            break;
        case InitMode::Xavier: {
            const auto& s = p.tensor.shape();
            const double fan_in = static_cast<double>(s.size() >= 2 ? s[0] : p.tensor.size());
            const double fan_out = static_cast<double>(s.size() >= 2 ? s.back() : p.tensor.size());
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& v : p.tensor.values()) v = rng.uniform(-limit, limit);
            break;
        }
    }
    return p;
}

Linear::Linear(const std::string& prefix, std::int64_t din, std::int64_t dout, Rng& rng,
               InitMode weight_mode, InitMode bias_mode, double bias_const) {
    weight = make_parameter(prefix + ".weight", {din, dout}, weight_mode, rng);
    bias = make_parameter(prefix + ".bias", {dout}, bias_mode, rng, bias_const);
}

void Linear::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

LayerNormLayer::LayerNormLayer(const std::string& prefix, std::int64_t width, Rng& rng) {
    gamma = make_parameter(prefix + ".gamma", {width}, InitMode::Constant, rng, 1.0);
    beta = make_parameter(prefix + ".beta", {width}, InitMode::Zeros, rng);
}

void LayerNormLayer::collect(std::vector<Parameter*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

MultiHeadAttention::MultiHeadAttention(const std::string& prefix, std::int64_t d, int n_heads,
                                       Rng& rng)
    : heads(n_heads), width(d) {
    if (n_heads < 1 || d % n_heads != 0)
        throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                          std::to_string(n_heads) + " heads");
    q = Linear(prefix + ".q", d, d, rng);
    k = Linear(prefix + ".k", d, d, rng);
    v = Linear(prefix + ".v", d, d, rng);
    o = Linear(prefix + ".o", d, d, rng);
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& key,
                                      const Tensor& value) const {
    if (query.rank() != 2 || key.rank() != 2 || value.rank() != 2)
        throw ShapeError("attention: all inputs must be 2-D");
    if (query.dim(1) != width || key.dim(1) != width || value.dim(1) != width)
        throw ShapeError("attention: width mismatch, expected " + std::to_string(width) +
                         ", got q=" + shape_str(query.shape()) + " k=" + shape_str(key.shape()) +
                         " v=" + shape_str(value.shape()));
    if (key.dim(0) < 1) throw InputError("attention: empty key set");
    if (key.dim(0) != value.dim(0))
        throw ShapeError("attention: key rows " + std::to_string(key.dim(0)) +
                         " vs value rows " + std::to_string(value.dim(0)));

    const Tensor Q = q(query);
    const Tensor K = k(key);
    const Tensor V = v(value);
    const std::int64_t dh = width / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor ctx;
    for (int h = 0; h < heads; ++h) {
        const Tensor Qh = slice_cols(Q, h * dh, dh);
        const Tensor Kh = slice_cols(K, h * dh, dh);
        const Tensor Vh = slice_cols(V, h * dh, dh);
        const Tensor scores = scale(matmul(Qh, transpose(Kh)), inv_scale);
        // The single-query path keeps the reduction bitwise invariant to
        // permutations of the key axis.
        const Tensor head_ctx = query.dim(0) == 1 ? softmax_weighted_sum(scores, Vh)
                                                  : matmul(softmax(scores), Vh);
        ctx = h == 0 ? head_ctx : concat_cols(ctx, head_ctx);
    }
    return o(ctx);
}

void MultiHeadAttention::collect(std::vector<Parameter*>& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<Parameter*>& params, double h) {
    for (Parameter* p : params) p->tensor.zero_grad();

    Tensor loss = loss_fn();
    if (loss.size() != 1)
        throw CheckError("grad_check: loss must be scalar, got " + shape_str(loss.shape()));
    {
        NoGradGuard guard;
        const Tensor again = loss_fn();
        if (!loss.same_values(again))
            throw CheckError("grad_check: loss closure is not deterministic");
    }
    loss.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) {
        p->tensor.grad();  // ensure allocated even if untouched
        analytic.push_back(p->tensor.grad());
    }

    GradCheckReport report;
    NoGradGuard guard;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        auto& vals = p->tensor.values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + h;
            const double lp = loss_fn().item();
            vals[i] = saved - h;
            const double lm = loss_fn().item();
            vals[i] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double a = analytic[pi][i];
            const double rel =
                std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

}  // namespace afford3d
