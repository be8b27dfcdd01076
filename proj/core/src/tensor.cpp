#include "afford3d/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "afford3d/errors.hpp"

namespace afford3d {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    return shape.empty() ? std::string("scalar") : os.str();
}

void TensorNode::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->values.assign(static_cast<std::size_t>(numel(shape)), 0.0);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != static_cast<std::int64_t>(values.size()))
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
    return node_->values[0];
}

void Tensor::set_requires_grad(bool v) { node_->requires_grad = v; }

std::vector<double>& Tensor::grad() {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::same_values(const Tensor& other) const {
    if (!defined() || !other.defined()) return defined() == other.defined();
    if (shape() != other.shape()) return false;
    const auto& a = values();
    const auto& b = other.values();
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Output node factory for ops: links parents and decides grad participation.
Tensor make_op_output(Shape shape, std::vector<Tensor> parents) {
    auto node = std::make_shared<TensorNode>();
    node->values.assign(static_cast<std::size_t>(numel(shape)), 0.0);
    node->shape = std::move(shape);
    if (g_grad_enabled) {
        for (const auto& p : parents)
            if (p.requires_grad()) {
                node->requires_grad = true;
                break;
            }
    }
    if (node->requires_grad) node->parents = std::move(parents);
    return Tensor(std::move(node));
}

void Tensor::backward() {
    if (size() != 1)
        throw ShapeError("backward: root must be scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) return;

    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    struct Frame {
        TensorNode* n;
        std::size_t next;
    };
    std::vector<Frame> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            TensorNode* child = f.n->parents[f.next++].node();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    for (TensorNode* n : order) n->ensure_grad();
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward();
}

// ---- helpers ----

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void accumulate(TensorNode* n, const std::vector<double>& delta) {
    n->ensure_grad();
    for (std::size_t i = 0; i < delta.size(); ++i) n->grad[i] += delta[i];
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out = make_op_output(a.shape(), {a, b});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        TensorNode* bn = b.node();
        on->backward = [on, an, bn] {
            if (an->requires_grad) accumulate(an, on->grad);
            if (bn->requires_grad) accumulate(bn, on->grad);
        };
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor out = make_op_output(a.shape(), {a, b});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] - pb[i];
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        TensorNode* bn = b.node();
        on->backward = [on, an, bn] {
            if (an->requires_grad) accumulate(an, on->grad);
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
            }
        };
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out = make_op_output(a.shape(), {a, b});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        TensorNode* bn = b.node();
        on->backward = [on, an, bn] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    an->grad[i] += on->grad[i] * bn->values[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    bn->grad[i] += on->grad[i] * an->values[i];
            }
        };
    }
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape("div", a, b);
    Tensor out = make_op_output(a.shape(), {a, b});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] / pb[i];
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        TensorNode* bn = b.node();
        on->backward = [on, an, bn] {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                const double inv = 1.0 / bn->values[i];
                if (an->requires_grad) an->grad[i] += on->grad[i] * inv;
                if (bn->requires_grad) bn->grad[i] -= on->grad[i] * on->values[i] * inv;
            }
        };
    }
    return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
    Tensor out = make_op_output(a.shape(), {a});
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] * c;
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an, c] {
            an->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += c * on->grad[i];
        };
    }
    return out;
}

Tensor add_scalar(const Tensor& a, double c) {
    Tensor out = make_op_output(a.shape(), {a});
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] + c;
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an] { accumulate(an, on->grad); };
    }
    return out;
}

Tensor rsub_scalar(double c, const Tensor& a) {
    Tensor out = make_op_output(a.shape(), {a});
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = c - pa[i];
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an] {
            an->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] -= on->grad[i];
        };
    }
    return out;
}

Tensor cmul(const Tensor& a, const std::vector<double>& c) {
    if (static_cast<std::int64_t>(c.size()) != a.size())
        throw ShapeError("cmul: constant length " + std::to_string(c.size()) +
                         " vs tensor " + shape_str(a.shape()));
    Tensor out = make_op_output(a.shape(), {a});
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] * c[static_cast<std::size_t>(i)];
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an, c] {
            an->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * c[i];
        };
    }
    return out;
}

Tensor bmul_scalar(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw ShapeError("bmul_scalar: scale has shape " + shape_str(s.shape()));
    Tensor out = make_op_output(a.shape(), {a, s});
    const double sv = s.at(0);
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] * sv;
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        TensorNode* sn = s.node();
        on->backward = [on, an, sn] {
            if (an->requires_grad) {
                an->ensure_grad();
                const double sv2 = sn->values[0];
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    an->grad[i] += sv2 * on->grad[i];
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                double acc = 0.0;
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    acc += on->grad[i] * an->values[i];
                sn->grad[0] += acc;
            }
        };
    }
    return out;
}

Tensor log_t(const Tensor& a) {
    Tensor out = make_op_output(a.shape(), {a});
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = std::log(pa[i]);
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an] {
            an->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                an->grad[i] += on->grad[i] / an->values[i];
        };
    }
    return out;
}

Tensor clampv(const Tensor& a, double lo, double hi) {
    Tensor out = make_op_output(a.shape(), {a});
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = std::min(std::max(pa[i], lo), hi);
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an, lo, hi] {
            an->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                if (an->values[i] > lo && an->values[i] < hi) an->grad[i] += on->grad[i];
        };
    }
    return out;
}

Tensor sigmoid(const Tensor& a) {
    Tensor out = make_op_output(a.shape(), {a});
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const double x = pa[i];
        if (x >= 0.0) {
            po[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
            const double e = std::exp(x);
            po[i] = e / (1.0 + e);
        }
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an] {
            an->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                const double y = on->values[i];
                an->grad[i] += on->grad[i] * y * (1.0 - y);
            }
        };
    }
    return out;
}

Tensor gelu(const Tensor& a) {
    Tensor out = make_op_output(a.shape(), {a});
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const double x = pa[i];
        po[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an] {
            an->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                const double x = an->values[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                an->grad[i] += on->grad[i] * (cdf + x * pdf);
            }
        };
    }
    return out;
}

// ---- reductions ----

Tensor sum_all(const Tensor& a) {
    Tensor out = make_op_output({1}, {a});
    double acc = 0.0;
    const double* pa = a.data();
    for (std::int64_t i = 0; i < a.size(); ++i) acc += pa[i];
    out.data()[0] = acc;
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an] {
            an->ensure_grad();
            const double g = on->grad[0];
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
        };
    }
    return out;
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor mean_rows(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("mean_rows: expected 2-D, got " + shape_str(a.shape()));
    const std::int64_t m = a.dim(0);
    const std::int64_t n = a.dim(1);
    Tensor out = make_op_output({1, n}, {a});
    const double* pa = a.data();
    double* po = out.data();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < m; ++i) acc += pa[i * n + j];
        po[j] = acc * inv;
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an, m, n, inv] {
            an->ensure_grad();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j)
                    an->grad[static_cast<std::size_t>(i * n + j)] +=
                        on->grad[static_cast<std::size_t>(j)] * inv;
        };
    }
    return out;
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = make_op_output({m, n}, {a, b});
    MutMap(out.data(), m, n).noalias() = ConstMap(a.data(), m, k) * ConstMap(b.data(), k, n);
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        TensorNode* bn = b.node();
        on->backward = [on, an, bn, m, k, n] {
            ConstMap dy(on->grad.data(), m, n);
            if (an->requires_grad) {
                an->ensure_grad();
                MutMap(an->grad.data(), m, k).noalias() +=
                    dy * ConstMap(bn->values.data(), k, n).transpose();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                MutMap(bn->grad.data(), k, n).noalias() +=
                    ConstMap(an->values.data(), m, k).transpose() * dy;
            }
        };
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(a.shape()));
    const std::int64_t m = a.dim(0), n = a.dim(1);
    Tensor out = make_op_output({n, m}, {a});
    MutMap(out.data(), n, m).noalias() = ConstMap(a.data(), m, n).transpose();
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an, m, n] {
            an->ensure_grad();
            MutMap(an->grad.data(), m, n).noalias() += ConstMap(on->grad.data(), n, m).transpose();
        };
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2)
        throw ShapeError("linear: weight must be 2-D, got " + shape_str(weight.shape()));
    const std::int64_t din = weight.dim(0), dout = weight.dim(1);
    if (x.rank() < 1 || x.dim(x.rank() - 1) != din)
        throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    if (bias.defined() && bias.size() != dout)
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    const std::int64_t rows = x.size() / din;
    Shape out_shape = x.shape();
    out_shape.back() = dout;

    std::vector<Tensor> parents = {x, weight};
    if (bias.defined()) parents.push_back(bias);
    Tensor out = make_op_output(std::move(out_shape), std::move(parents));

    MutMap y(out.data(), rows, dout);
    y.noalias() = ConstMap(x.data(), rows, din) * ConstMap(weight.data(), din, dout);
    if (bias.defined()) {
        ConstMap b(bias.data(), 1, dout);
        y.rowwise() += b.row(0);
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* xn = x.node();
        TensorNode* wn = weight.node();
        TensorNode* bn = bias.defined() ? bias.node() : nullptr;
        on->backward = [on, xn, wn, bn, rows, din, dout] {
            ConstMap dy(on->grad.data(), rows, dout);
            if (xn->requires_grad) {
                xn->ensure_grad();
                MutMap(xn->grad.data(), rows, din).noalias() +=
                    dy * ConstMap(wn->values.data(), din, dout).transpose();
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                MutMap(wn->grad.data(), din, dout).noalias() +=
                    ConstMap(xn->values.data(), rows, din).transpose() * dy;
            }
            if (bn && bn->requires_grad) {
                bn->ensure_grad();
                MutMap(bn->grad.data(), 1, dout) += dy.colwise().sum();
            }
        };
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    Tensor out = make_op_output(std::move(shape), {a});
    std::copy(a.data(), a.data() + a.size(), out.data());
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an] { accumulate(an, on->grad); };
    }
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
        throw ShapeError("concat_cols: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::int64_t m = a.dim(0), na = a.dim(1), nb = b.dim(1);
    Tensor out = make_op_output({m, na + nb}, {a, b});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < m; ++i) {
        std::copy(pa + i * na, pa + (i + 1) * na, po + i * (na + nb));
        std::copy(pb + i * nb, pb + (i + 1) * nb, po + i * (na + nb) + na);
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        TensorNode* bn = b.node();
        on->backward = [on, an, bn, m, na, nb] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < na; ++j)
                        an->grad[static_cast<std::size_t>(i * na + j)] +=
                            on->grad[static_cast<std::size_t>(i * (na + nb) + j)];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < nb; ++j)
                        bn->grad[static_cast<std::size_t>(i * nb + j)] +=
                            on->grad[static_cast<std::size_t>(i * (na + nb) + na + j)];
            }
        };
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const std::int64_t n = parts[0].rank() == 2 ? parts[0].dim(1) : parts[0].size();
    std::int64_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != n)
            throw ShapeError("concat_rows: part shape " + shape_str(p.shape()) +
                             " incompatible with width " + std::to_string(n));
        rows += p.dim(0);
    }
    Tensor out = make_op_output({rows, n}, parts);
    double* po = out.data();
    std::int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data(), p.data() + p.size(), po + off);
        off += p.size();
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        std::vector<TensorNode*> nodes;
        std::vector<std::int64_t> sizes;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            sizes.push_back(p.size());
        }
        on->backward = [on, nodes, sizes] {
            std::size_t off2 = 0;
            for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                if (nodes[pi]->requires_grad) {
                    nodes[pi]->ensure_grad();
                    for (std::int64_t j = 0; j < sizes[pi]; ++j)
                        nodes[pi]->grad[static_cast<std::size_t>(j)] +=
                            on->grad[off2 + static_cast<std::size_t>(j)];
                }
                off2 += static_cast<std::size_t>(sizes[pi]);
            }
        };
    }
    return out;
}

Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t len) {
    if (a.rank() != 2 || start < 0 || len < 1 || start + len > a.dim(1))
        throw ShapeError("slice_cols: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " + shape_str(a.shape()));
    const std::int64_t m = a.dim(0), n = a.dim(1);
    Tensor out = make_op_output({m, len}, {a});
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < m; ++i)
        std::copy(pa + i * n + start, pa + i * n + start + len, po + i * len);
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an, m, n, start, len] {
            an->ensure_grad();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < len; ++j)
                    an->grad[static_cast<std::size_t>(i * n + start + j)] +=
                        on->grad[static_cast<std::size_t>(i * len + j)];
        };
    }
    return out;
}

Tensor slice_rows(const Tensor& a, std::int64_t start, std::int64_t len) {
    if (a.rank() != 2 || start < 0 || len < 1 || start + len > a.dim(0))
        throw ShapeError("slice_rows: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " + shape_str(a.shape()));
    const std::int64_t n = a.dim(1);
    Tensor out = make_op_output({len, n}, {a});
    std::copy(a.data() + start * n, a.data() + (start + len) * n, out.data());
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = a.node();
        on->backward = [on, an, n, start] {
            an->ensure_grad();
            for (std::size_t j = 0; j < on->grad.size(); ++j)
                an->grad[static_cast<std::size_t>(start * n) + j] += on->grad[j];
        };
    }
    return out;
}

// ---- specialised ----

Tensor softmax(const Tensor& logits) {
    const std::int64_t n = logits.dim(logits.rank() - 1);
    if (n < 1) throw ShapeError("softmax: empty last dimension");
    const std::int64_t rows = logits.size() / n;
    const double* px = logits.data();
    for (std::int64_t i = 0; i < logits.size(); ++i)
        if (!std::isfinite(px[i])) throw NumericError("softmax: non-finite input");

    Tensor out = make_op_output(logits.shape(), {logits});
    double* po = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = px + r * n;
        double* yr = po + r * n;
        double mx = xr[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        double denom = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            denom += yr[j];
        }
        const double inv = 1.0 / denom;
        for (std::int64_t j = 0; j < n; ++j) yr[j] *= inv;
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* an = logits.node();
        on->backward = [on, an, rows, n] {
            an->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* y = on->values.data() + r * n;
                const double* dy = on->grad.data() + r * n;
                double dot = 0.0;
                for (std::int64_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                double* dx = an->grad.data() + r * n;
                for (std::int64_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        };
    }
    return out;
}

Tensor softmax_weighted_sum(const Tensor& scores, const Tensor& values) {
    if (scores.rank() != 2 || scores.dim(0) != 1)
        throw ShapeError("softmax_weighted_sum: scores must be 1xM, got " +
                         shape_str(scores.shape()));
    const std::int64_t m = scores.dim(1);
    if (m < 1) throw InputError("softmax_weighted_sum: empty key set");
    if (values.rank() != 2 || values.dim(0) != m)
        throw ShapeError("softmax_weighted_sum: values " + shape_str(values.shape()) +
                         " incompatible with scores " + shape_str(scores.shape()));
    const std::int64_t d = values.dim(1);
    const double* ps = scores.data();
    for (std::int64_t i = 0; i < m; ++i)
        if (!std::isfinite(ps[i])) throw NumericError("softmax_weighted_sum: non-finite score");

    // Canonical accumulation order: sort keys by score, ties broken by the
    // value row, so the reduction is independent of the caller's key order.
    const double* pv = values.data();
    std::vector<std::int64_t> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::int64_t i, std::int64_t j) {
        if (ps[i] != ps[j]) return ps[i] < ps[j];
        return std::lexicographical_compare(pv + i * d, pv + (i + 1) * d, pv + j * d,
                                            pv + (j + 1) * d);
    });

    Tensor out = make_op_output({1, d}, {scores, values});
    double mx = ps[0];
    for (std::int64_t i = 1; i < m; ++i) mx = std::max(mx, ps[i]);
    auto weights = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
    double denom = 0.0;
    for (std::int64_t oi = 0; oi < m; ++oi) {
        const std::int64_t i = order[static_cast<std::size_t>(oi)];
        const double e = std::exp(ps[i] - mx);
        (*weights)[static_cast<std::size_t>(i)] = e;
        denom += e;
    }
    const double inv = 1.0 / denom;
    for (auto& w : *weights) w *= inv;
    double* po = out.data();
    for (std::int64_t oi = 0; oi < m; ++oi) {
        const std::int64_t i = order[static_cast<std::size_t>(oi)];
        const double a = (*weights)[static_cast<std::size_t>(i)];
        for (std::int64_t c = 0; c < d; ++c) po[c] += a * pv[i * d + c];
    }

    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* sn = scores.node();
        TensorNode* vn = values.node();
        on->backward = [on, sn, vn, weights, m, d] {
            const double* g = on->grad.data();
            const double* v = vn->values.data();
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (std::int64_t i = 0; i < m; ++i) {
                    const double a = (*weights)[static_cast<std::size_t>(i)];
                    for (std::int64_t c = 0; c < d; ++c) vn->grad[i * d + c] += a * g[c];
                }
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                std::vector<double> u(static_cast<std::size_t>(m));
                double ubar = 0.0;
                for (std::int64_t i = 0; i < m; ++i) {
                    double acc = 0.0;
                    for (std::int64_t c = 0; c < d; ++c) acc += g[c] * v[i * d + c];
                    u[static_cast<std::size_t>(i)] = acc;
                    ubar += (*weights)[static_cast<std::size_t>(i)] * acc;
                }
                for (std::int64_t i = 0; i < m; ++i)
                    sn->grad[static_cast<std::size_t>(i)] +=
                        (*weights)[static_cast<std::size_t>(i)] *
                        (u[static_cast<std::size_t>(i)] - ubar);
            }
        };
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::int64_t n = gamma.size();
    if (beta.size() != n || x.size() % n != 0 || x.dim(x.rank() - 1) != n)
        throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " vs affine width " +
                         std::to_string(n));
    const std::int64_t rows = x.size() / n;
    Tensor out = make_op_output(x.shape(), {x, gamma, beta});
    const double* px = x.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    double* po = out.data();
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.size()));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = px + r * n;
        double mean = 0.0;
        for (std::int64_t j = 0; j < n; ++j) mean += xr[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            const double c = xr[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(r)] = is;
        for (std::int64_t j = 0; j < n; ++j) {
            const double xh = (xr[j] - mean) * is;
            (*xhat)[static_cast<std::size_t>(r * n + j)] = xh;
            po[r * n + j] = pg[j] * xh + pb[j];
        }
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* xn = x.node();
        TensorNode* gn = gamma.node();
        TensorNode* bn = beta.node();
        on->backward = [on, xn, gn, bn, xhat, inv_std, rows, n] {
            const double* dy = on->grad.data();
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* dyr = dy + r * n;
                const double* xh = xhat->data() + r * n;
                if (gn->requires_grad || bn->requires_grad) {
                    for (std::int64_t j = 0; j < n; ++j) {
                        if (gn->requires_grad)
                            gn->grad[static_cast<std::size_t>(j)] += dyr[j] * xh[j];
                        if (bn->requires_grad) bn->grad[static_cast<std::size_t>(j)] += dyr[j];
                    }
                }
                if (xn->requires_grad) {
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) {
                        const double dxh = dyr[j] * gn->values[static_cast<std::size_t>(j)];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    const double is = (*inv_std)[static_cast<std::size_t>(r)];
                    const double invn = 1.0 / static_cast<double>(n);
                    for (std::int64_t j = 0; j < n; ++j) {
                        const double dxh = dyr[j] * gn->values[static_cast<std::size_t>(j)];
                        xn->grad[static_cast<std::size_t>(r * n + j)] +=
                            is * (dxh - invn * sum_dxh - xh[j] * invn * sum_dxh_xh);
                    }
                }
            }
        };
    }
    return out;
}

Tensor knn_max_pool(const Tensor& h, std::span<const std::int32_t> neighbors, int k) {
    if (h.rank() != 2) throw ShapeError("knn_max_pool: expected 2-D, got " + shape_str(h.shape()));
    const std::int64_t n = h.dim(0), c = h.dim(1);
    if (static_cast<std::int64_t>(neighbors.size()) != n * k)
        throw ShapeError("knn_max_pool: neighbor table size " + std::to_string(neighbors.size()) +
                         " vs " + std::to_string(n) + "x" + std::to_string(k));
    Tensor out = make_op_output({n, c}, {h});
    const double* ph = h.data();
    double* po = out.data();
    auto argmax = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(n * c));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            std::int32_t best = neighbors[static_cast<std::size_t>(i * k)];
            double bv = ph[best * c + ch];
            for (int j = 1; j < k; ++j) {
                const std::int32_t cand = neighbors[static_cast<std::size_t>(i * k + j)];
                const double v = ph[cand * c + ch];
                if (v > bv) {
                    bv = v;
                    best = cand;
                }
            }
            po[i * c + ch] = bv;
            (*argmax)[static_cast<std::size_t>(i * c + ch)] = best;
        }
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        TensorNode* hn = h.node();
        on->backward = [on, hn, argmax, n, c] {
            hn->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t ch = 0; ch < c; ++ch)
                    hn->grad[static_cast<std::size_t>(
                        (*argmax)[static_cast<std::size_t>(i * c + ch)] * c + ch)] +=
                        on->grad[static_cast<std::size_t>(i * c + ch)];
        };
    }
    return out;
}

}  // namespace afford3d
