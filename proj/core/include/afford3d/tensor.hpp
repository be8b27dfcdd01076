#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace afford3d {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

// One node of the dynamic autodiff graph. Nodes own their forward values,
// an optional gradient buffer, and a backward closure that scatters
// this node's gradient into its parents. Parents are held by value so the
// graph stays alive as long as any downstream tensor does.
struct TensorNode {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated lazily, same length as values
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void()> backward;

    void ensure_grad();
};

// Shared handle on a TensorNode. Row-major, 64-bit floats throughout.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(node_->values.size()); }
    std::int64_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }

    double* data() { return node_->values.data(); }
    const double* data() const { return node_->values.data(); }
    std::vector<double>& values() { return node_->values; }
    const std::vector<double>& values() const { return node_->values; }

    double item() const;
    double at(std::int64_t i) const { return node_->values[static_cast<std::size_t>(i)]; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool v);
    std::vector<double>& grad();
    const std::vector<double>& grad() const { return node_->grad; }
    void zero_grad();

    // Reverse-mode sweep from a scalar tensor. Accumulates into the grad
    // buffers of every reachable node with requires_grad.
    void backward();

    TensorNode* node() const { return node_.get(); }

    bool same_values(const Tensor& other) const;  // bitwise comparison

  private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;

    friend Tensor make_op_output(Shape shape, std::vector<Tensor> parents);
};

// Scoped switch that disables graph recording; forward values are still
// computed. Inference and finite-difference probes run under this guard.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_enabled();

// ---- elementwise and reduction ops ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor rsub_scalar(double c, const Tensor& a);  // c - a
// elementwise product with a constant (no gradient to the constant)
Tensor cmul(const Tensor& a, const std::vector<double>& c);
// broadcast-multiply by a scalar tensor (shape [1] or [1,1])
Tensor bmul_scalar(const Tensor& a, const Tensor& s);

Tensor log_t(const Tensor& a);
Tensor clampv(const Tensor& a, double lo, double hi);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // [m,n] -> [1,n]

// ---- linear algebra / structural ops ----

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                // 2-D
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);  // [*,din]->[*,dout]
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t len);
Tensor slice_rows(const Tensor& a, std::int64_t start, std::int64_t len);
inline Tensor row(const Tensor& a, std::int64_t i) { return slice_rows(a, i, 1); }

// ---- specialised ops ----

// Row-wise softmax over the last dimension; max-stabilised. Throws
// NumericError on non-finite input.
Tensor softmax(const Tensor& logits);

// softmax(scores) @ values for a single query row, with the reductions
// accumulated in a canonical value-sorted order so the result is bitwise
// invariant under permutations of the key axis.
Tensor softmax_weighted_sum(const Tensor& scores /*[1,m]*/, const Tensor& values /*[m,d]*/);

// Row-wise layer normalisation with learnable affine. Population variance,
// per-row statistics over the last dimension.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-8);

// out[i][c] = max over j of h[neighbors[i*k+j]][c]; gradient routed to the
// first attaining neighbor.
Tensor knn_max_pool(const Tensor& h, std::span<const std::int32_t> neighbors, int k);

}  // namespace afford3d
