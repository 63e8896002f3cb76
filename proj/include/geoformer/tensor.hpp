#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace geoformer {

class Tensor;

namespace detail {

/// One node of the compute graph: cached forward output plus the rule that
/// scatters the node's adjoint into its parents.
struct TensorNode {
    std::vector<size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // sized lazily on first accumulation
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backward_fn; // captures parents + raw self pointer

    size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

} // namespace detail

/// Scoped switch that stops ops from recording the compute graph.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Row-major N-dimensional tensor of 64-bit floats with reverse-mode
/// autodiff. Copies share the underlying node, so a Tensor is a cheap
/// handle; parameter tensors are mutated in place by the optimizer.
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

    static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<size_t> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<size_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    const std::vector<size_t>& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    size_t numel() const { return node_->data.size(); }
    size_t extent(size_t axis) const { return node_->shape.at(axis); }

    double& operator[](size_t flat) { return node_->data[flat]; }
    double operator[](size_t flat) const { return node_->data[flat]; }
    double& at(size_t row, size_t col);
    double at(size_t row, size_t col) const;
    double item() const; // scalar tensors only

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    const std::vector<double>& grad() const;
    std::vector<double>& grad_mut();
    void zero_grad();

    /// Reverse pass from a scalar. Every node is visited exactly once in
    /// reverse topological order; fan-out gradients accumulate additively.
    void backward() const;

    /// Same values, detached from any graph.
    Tensor detach() const;
    /// Deep copy (fresh storage), detached.
    Tensor clone() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }
    const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;

    friend Tensor make_op_result(std::vector<size_t> shape, const char* op,
                                 std::vector<Tensor> inputs);
};

std::string shape_str(const std::vector<size_t>& shape);

// Graph-building helper shared by all ops (internal).
Tensor make_op_result(std::vector<size_t> shape, const char* op, std::vector<Tensor> inputs);

// ---- elementwise suite ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor exp(const Tensor& a);
Tensor ln(const Tensor& a); // domain error on non-positive entries
Tensor gelu(const Tensor& a);
/// Normalizes the last axis to zero mean / unit variance, then applies the
/// learnable scale and shift. gamma/beta have the last-axis extent.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& x);

// ---- reductions / reshaping ----
Tensor sum(const Tensor& a);      // -> scalar
Tensor mean_all(const Tensor& a); // -> scalar
Tensor reshape(const Tensor& a, std::vector<size_t> new_shape);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, size_t first, size_t count);
/// Repeats a length-d vector (or 1xd row) into an n x d matrix.
Tensor expand_rows(const Tensor& v, size_t n);
Tensor take_rows(const Tensor& a, const std::vector<size_t>& rows);
/// out[i] = selected[pos] where rows[pos] == i, else fill. Inverse of
/// take_rows with a shared fallback row.
Tensor scatter_rows_with_fill(const Tensor& selected, const std::vector<size_t>& rows,
                              const Tensor& fill, size_t n_rows);
Tensor mean_over_rows(const Tensor& a); // n x d -> [d]

/// matmul(x, w) with an optional row-broadcast bias.
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Central-difference gradient oracle for a scalar-valued function of one
/// tensor. Per-coordinate step defaults to sqrt(machine eps) * max(1, |x_i|).
/// Independent of the reverse-mode path by construction.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 0.0);

bool all_finite(const Tensor& a);

} // namespace geoformer
