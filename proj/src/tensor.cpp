#include "geoformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace geoformer {

namespace {

thread_local bool g_grad_enabled = true;

size_t checked_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t e : shape) {
        if (e == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got shape " +
                                    shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()) + ")");
}

// c[m x n] += a[m x k] * b[k x n]; axpy form so the inner loop vectorizes
// without reassociating any per-element accumulation order.
void matmul_accum(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double aip = arow[p];
            const double* brow = b + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// db[k x n] += a^T[k x m] * dc[m x n] without materializing the transpose.
void matmul_accum_at_b(const double* a, const double* dc, double* db, size_t m, size_t k,
                       size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* dcrow = dc + i * n;
        for (size_t q = 0; q < k; ++q) {
            const double aiq = arow[q];
            double* dbrow = db + q * n;
            for (size_t j = 0; j < n; ++j) dbrow[j] += aiq * dcrow[j];
        }
    }
}

} // namespace

std::string shape_str(const std::vector<size_t>& shape) {
    std::ostringstream os;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    return shape.empty() ? "scalar" : os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- Tensor ----

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<size_t> shape, double value, bool requires_grad) {
    const size_t n = checked_numel(shape);
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data.assign(n, value);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(std::vector<size_t> shape, std::vector<double> data, bool requires_grad) {
    if (checked_numel(shape) != data.size())
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                    std::to_string(data.size()) + " data values");
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

double& Tensor::at(size_t row, size_t col) {
    require_rank2(*this, "at");
    return node_->data[row * node_->shape[1] + col];
}

double Tensor::at(size_t row, size_t col) const {
    require_rank2(*this, "at");
    return node_->data[row * node_->shape[1] + col];
}

double Tensor::item() const {
    if (numel() != 1)
        throw std::invalid_argument("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->data[0];
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw std::runtime_error("grad: no gradient recorded; call backward() first");
    return node_->grad;
}

std::vector<double>& Tensor::grad_mut() {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
    if (numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(shape()));

    // Iterative post-order DFS; each node appears once, parents first.
    std::vector<detail::TensorNode*> topo;
    std::unordered_set<detail::TensorNode*> visited;
    struct Frame {
        detail::TensorNode* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::TensorNode* p = f.node->parents[f.next_parent++].get();
            if (visited.insert(p).second) stack.push_back({p, 0});
        } else {
            topo.push_back(f.node);
            stack.pop_back();
        }
    }

    // Interior adjoints are per-pass scratch; only leaves (parameters and
    // inputs) accumulate across backward() calls.
    for (detail::TensorNode* n : topo) {
        if (!n->parents.empty()) {
            n->ensure_grad();
            std::fill(n->grad.begin(), n->grad.end(), 0.0);
        }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = node_->shape;
    node->data = node_->data;
    return Tensor(std::move(node));
}

Tensor Tensor::clone() const { return detach(); }

Tensor make_op_result(std::vector<size_t> shape, const char* op, std::vector<Tensor> inputs) {
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data.assign(checked_numel(node->shape), 0.0);
    node->op = op;
    if (g_grad_enabled) {
        bool any = false;
        for (const Tensor& t : inputs) any = any || t.requires_grad();
        if (any) {
            node->requires_grad = true;
            for (Tensor& t : inputs) node->parents.push_back(t.node());
        }
    }
    return Tensor(std::move(node));
}

namespace {

// Hooks the backward rule up only when the output actually tracks gradients.
void set_backward(const Tensor& out, std::function<void()> fn) {
    if (out.requires_grad()) out.node()->backward_fn = std::move(fn);
}

detail::TensorNode* raw(const Tensor& t) { return t.node().get(); }

} // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = make_op_result(a.shape(), "add", {a, b});
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
    auto *pa = raw(a), *pb = raw(b), *po = raw(out);
    set_backward(out, [pa, pb, po, n] {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n; ++i) pa->grad[i] += po->grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n; ++i) pb->grad[i] += po->grad[i];
        }
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = make_op_result(a.shape(), "sub", {a, b});
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
    auto *pa = raw(a), *pb = raw(b), *po = raw(out);
    set_backward(out, [pa, pb, po, n] {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n; ++i) pa->grad[i] += po->grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n; ++i) pb->grad[i] -= po->grad[i];
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = make_op_result(a.shape(), "mul", {a, b});
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
    auto *pa = raw(a), *pb = raw(b), *po = raw(out);
    set_backward(out, [pa, pb, po, n] {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n; ++i) pa->grad[i] += po->grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n; ++i) pb->grad[i] += po->grad[i] * pa->data[i];
        }
    });
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = make_op_result(a.shape(), "scale", {a});
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
    auto *pa = raw(a), *po = raw(out);
    set_backward(out, [pa, po, s, n] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < n; ++i) pa->grad[i] += po->grad[i] * s;
    });
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out = make_op_result(a.shape(), "add_scalar", {a});
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + s;
    auto *pa = raw(a), *po = raw(out);
    set_backward(out, [pa, po, n] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < n; ++i) pa->grad[i] += po->grad[i];
    });
    return out;
}

Tensor exp(const Tensor& a) {
    Tensor out = make_op_result(a.shape(), "exp", {a});
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out[i] = std::exp(a[i]);
    auto *pa = raw(a), *po = raw(out);
    set_backward(out, [pa, po, n] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < n; ++i) pa->grad[i] += po->grad[i] * po->data[i];
    });
    return out;
}

Tensor ln(const Tensor& a) {
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i)
        if (!(a[i] > 0.0))
            throw std::domain_error("ln: non-positive value " + std::to_string(a[i]) +
                                    " at index " + std::to_string(i));
    Tensor out = make_op_result(a.shape(), "ln", {a});
    for (size_t i = 0; i < n; ++i) out[i] = std::log(a[i]);
    auto *pa = raw(a), *po = raw(out);
    set_backward(out, [pa, po, n] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < n; ++i) pa->grad[i] += po->grad[i] / pa->data[i];
    });
    return out;
}

Tensor gelu(const Tensor& a) {
    Tensor out = make_op_result(a.shape(), "gelu", {a});
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) {
        const double x = a[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
    }
    auto *pa = raw(a), *po = raw(out);
    set_backward(out, [pa, po, n] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (size_t i = 0; i < n; ++i) {
            const double x = pa->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            pa->grad[i] += po->grad[i] * (cdf + x * pdf);
        }
    });
    return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("layernorm: eps must be positive");
    if (x.rank() == 0 || x.shape().empty())
        throw std::invalid_argument("layernorm: empty tensor");
    const size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d)
        throw std::invalid_argument("layernorm: scale/shift length " +
                                    std::to_string(gamma.numel()) + "/" +
                                    std::to_string(beta.numel()) + " does not match last axis " +
                                    std::to_string(d));
    const size_t rows = x.numel() / d;
    Tensor out = make_op_result(x.shape(), "layernorm", {x, gamma, beta});

    // Cache per-row inv-std and normalized values for the backward rule.
    std::vector<double> inv_std(rows);
    std::vector<double> xhat(x.numel());
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * d;
        double mean = 0.0;
        for (size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (size_t j = 0; j < d; ++j) {
            const double xh = (xr[j] - mean) * inv;
            xhat[r * d + j] = xh;
            out[r * d + j] = xh * gamma[j] + beta[j];
        }
    }
    auto *px = raw(x), *pg = raw(gamma), *pb = raw(beta), *po = raw(out);
    set_backward(out, [px, pg, pb, po, rows, d, inv_std = std::move(inv_std),
                       xhat = std::move(xhat)] {
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        if (px->requires_grad) px->ensure_grad();
        for (size_t r = 0; r < rows; ++r) {
            const double* dy = po->grad.data() + r * d;
            const double* xh = xhat.data() + r * d;
            if (pg->requires_grad)
                for (size_t j = 0; j < d; ++j) pg->grad[j] += dy[j] * xh[j];
            if (pb->requires_grad)
                for (size_t j = 0; j < d; ++j) pb->grad[j] += dy[j];
            if (px->requires_grad) {
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (size_t j = 0; j < d; ++j) {
                    const double dxh = dy[j] * pg->data[j];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xh[j];
                }
                mean_dxhat /= static_cast<double>(d);
                mean_dxhat_xhat /= static_cast<double>(d);
                double* dx = px->grad.data() + r * d;
                for (size_t j = 0; j < d; ++j) {
                    const double dxh = dy[j] * pg->data[j];
                    dx[j] += inv_std[r] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                }
            }
        }
    });
    return out;
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    if (b.extent(0) != k)
        throw std::invalid_argument("matmul: inner dimensions mismatch (" + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()) + ")");
    Tensor out = make_op_result({m, n}, "matmul", {a, b});
    matmul_accum(a.data().data(), b.data().data(), out.data().data(), m, k, n);
    auto *pa = raw(a), *pb = raw(b), *po = raw(out);
    set_backward(out, [pa, pb, po, m, k, n] {
        if (pa->requires_grad) {
            pa->ensure_grad();
            // dA += dC * B^T, via an explicit transpose so the kernel stays axpy-shaped.
            std::vector<double> bt(n * k);
            for (size_t p = 0; p < k; ++p)
                for (size_t j = 0; j < n; ++j) bt[j * k + p] = pb->data[p * n + j];
            matmul_accum(po->grad.data(), bt.data(), pa->grad.data(), m, n, k);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            matmul_accum_at_b(pa->data.data(), po->grad.data(), pb->grad.data(), m, k, n);
        }
    });
    return out;
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const size_t m = a.extent(0), n = a.extent(1);
    Tensor out = make_op_result({n, m}, "transpose", {a});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    auto *pa = raw(a), *po = raw(out);
    set_backward(out, [pa, po, m, n] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) pa->grad[i * n + j] += po->grad[j * m + i];
    });
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    require_rank2(x, "softmax_rows");
    const size_t m = x.extent(0), n = x.extent(1);
    Tensor out = make_op_result(x.shape(), "softmax_rows", {x});
    for (size_t i = 0; i < m; ++i) {
        const double* xr = x.data().data() + i * n;
        double* yr = out.data().data() + i * n;
        double mx = xr[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (size_t j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (size_t j = 0; j < n; ++j) yr[j] /= sum;
    }
    auto *px = raw(x), *po = raw(out);
    set_backward(out, [px, po, m, n] {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (size_t i = 0; i < m; ++i) {
            const double* y = po->data.data() + i * n;
            const double* dy = po->grad.data() + i * n;
            double dot = 0.0;
            for (size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
            double* dx = px->grad.data() + i * n;
            for (size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
    return out;
}

// ---- reductions / reshaping ----

Tensor sum(const Tensor& a) {
    Tensor out = make_op_result({1}, "sum", {a});
    double acc = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) acc += a[i];
    out[0] = acc;
    auto *pa = raw(a), *po = raw(out);
    set_backward(out, [pa, po] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const double g = po->grad[0];
        for (double& v : pa->grad) v += g;
    });
    return out;
}

Tensor mean_all(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    return scale(sum(a), inv);
}

Tensor reshape(const Tensor& a, std::vector<size_t> new_shape) {
    if (checked_numel(new_shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(new_shape));
    Tensor out = make_op_result(std::move(new_shape), "reshape", {a});
    out.data() = a.data();
    auto *pa = raw(a), *po = raw(out);
    set_backward(out, [pa, po] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += po->grad[i];
    });
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const size_t m = parts[0].extent(0);
    size_t total = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.extent(0) != m)
            throw std::invalid_argument("concat_cols: row mismatch (" + shape_str(p.shape()) +
                                        " vs " + std::to_string(m) + " rows)");
        total += p.extent(1);
    }
    Tensor out = make_op_result({m, total}, "concat_cols", {parts});
    size_t off = 0;
    for (const Tensor& p : parts) {
        const size_t w = p.extent(1);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < w; ++j) out[i * total + off + j] = p[i * w + j];
        off += w;
    }
    std::vector<detail::TensorNode*> srcs;
    std::vector<size_t> widths;
    for (const Tensor& p : parts) {
        srcs.push_back(raw(p));
        widths.push_back(p.extent(1));
    }
    auto* po = raw(out);
    set_backward(out, [srcs, widths, po, m, total] {
        size_t off2 = 0;
        for (size_t s = 0; s < srcs.size(); ++s) {
            const size_t w = widths[s];
            if (srcs[s]->requires_grad) {
                srcs[s]->ensure_grad();
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < w; ++j)
                        srcs[s]->grad[i * w + j] += po->grad[i * total + off2 + j];
            }
            off2 += w;
        }
    });
    return out;
}

Tensor slice_cols(const Tensor& a, size_t first, size_t count) {
    require_rank2(a, "slice_cols");
    const size_t m = a.extent(0), n = a.extent(1);
    if (first + count > n)
        throw std::invalid_argument("slice_cols: range [" + std::to_string(first) + ", " +
                                    std::to_string(first + count) + ") exceeds " +
                                    std::to_string(n) + " columns");
    Tensor out = make_op_result({m, count}, "slice_cols", {a});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < count; ++j) out[i * count + j] = a[i * n + first + j];
    auto *pa = raw(a), *po = raw(out);
    set_backward(out, [pa, po, m, n, first, count] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < count; ++j)
                pa->grad[i * n + first + j] += po->grad[i * count + j];
    });
    return out;
}

Tensor expand_rows(const Tensor& v, size_t n) {
    const size_t d = v.numel();
    if (v.rank() > 2 || (v.rank() == 2 && v.extent(0) != 1))
        throw std::invalid_argument("expand_rows: expected vector or 1-row matrix, got " +
                                    shape_str(v.shape()));
    Tensor out = make_op_result({n, d}, "expand_rows", {v});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) out[i * d + j] = v[j];
    auto *pv = raw(v), *po = raw(out);
    set_backward(out, [pv, po, n, d] {
        if (!pv->requires_grad) return;
        pv->ensure_grad();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < d; ++j) pv->grad[j] += po->grad[i * d + j];
    });
    return out;
}

Tensor take_rows(const Tensor& a, const std::vector<size_t>& rows) {
    require_rank2(a, "take_rows");
    const size_t m = a.extent(0), d = a.extent(1);
    for (size_t r : rows)
        if (r >= m)
            throw std::invalid_argument("take_rows: index " + std::to_string(r) + " out of " +
                                        std::to_string(m) + " rows");
    Tensor out = make_op_result({rows.size(), d}, "take_rows", {a});
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < d; ++j) out[i * d + j] = a[rows[i] * d + j];
    auto *pa = raw(a), *po = raw(out);
    set_backward(out, [pa, po, rows, d] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < rows.size(); ++i)
            for (size_t j = 0; j < d; ++j) pa->grad[rows[i] * d + j] += po->grad[i * d + j];
    });
    return out;
}

Tensor scatter_rows_with_fill(const Tensor& selected, const std::vector<size_t>& rows,
                              const Tensor& fill, size_t n_rows) {
    require_rank2(selected, "scatter_rows_with_fill");
    const size_t u = selected.extent(0), d = selected.extent(1);
    if (rows.size() != u)
        throw std::invalid_argument("scatter_rows_with_fill: " + std::to_string(rows.size()) +
                                    " indices for " + std::to_string(u) + " rows");
    if (fill.numel() != d)
        throw std::invalid_argument("scatter_rows_with_fill: fill length " +
                                    std::to_string(fill.numel()) + " != row width " +
                                    std::to_string(d));
    std::vector<long long> pos(n_rows, -1);
    for (size_t i = 0; i < u; ++i) {
        if (rows[i] >= n_rows)
            throw std::invalid_argument("scatter_rows_with_fill: index " +
                                        std::to_string(rows[i]) + " out of " +
                                        std::to_string(n_rows) + " rows");
        pos[rows[i]] = static_cast<long long>(i);
    }
    Tensor out = make_op_result({n_rows, d}, "scatter_rows_with_fill", {selected, fill});
    for (size_t i = 0; i < n_rows; ++i) {
        const double* src = pos[i] >= 0 ? selected.data().data() + static_cast<size_t>(pos[i]) * d
                                        : fill.data().data();
        for (size_t j = 0; j < d; ++j) out[i * d + j] = src[j];
    }
    auto *ps = raw(selected), *pf = raw(fill), *po = raw(out);
    set_backward(out, [ps, pf, po, pos = std::move(pos), d] {
        if (ps->requires_grad) ps->ensure_grad();
        if (pf->requires_grad) pf->ensure_grad();
        for (size_t i = 0; i < pos.size(); ++i) {
            const double* dy = po->grad.data() + i * d;
            if (pos[i] >= 0) {
                if (ps->requires_grad) {
                    double* dst = ps->grad.data() + static_cast<size_t>(pos[i]) * d;
                    for (size_t j = 0; j < d; ++j) dst[j] += dy[j];
                }
            } else if (pf->requires_grad) {
                for (size_t j = 0; j < d; ++j) pf->grad[j] += dy[j];
            }
        }
    });
    return out;
}

Tensor mean_over_rows(const Tensor& a) {
    require_rank2(a, "mean_over_rows");
    const size_t m = a.extent(0), d = a.extent(1);
    Tensor out = make_op_result({d}, "mean_over_rows", {a});
    const double inv = 1.0 / static_cast<double>(m);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < d; ++j) out[j] += a[i * d + j] * inv;
    auto *pa = raw(a), *po = raw(out);
    set_backward(out, [pa, po, m, d, inv] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < d; ++j) pa->grad[i * d + j] += po->grad[j] * inv;
    });
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w) { return matmul(x, w); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, w);
    return add(y, expand_rows(b, y.extent(0)));
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    NoGradGuard ng;
    Tensor g = Tensor::zeros(x.shape());
    Tensor probe = x.detach();
    const double base_h = std::sqrt(std::numeric_limits<double>::epsilon());
    for (size_t i = 0; i < x.numel(); ++i) {
        const double xi = probe[i];
        const double hi = h > 0.0 ? h : base_h * std::max(1.0, std::fabs(xi));
        probe[i] = xi + hi;
        const double fp = f(probe);
        probe[i] = xi - hi;
        const double fm = f(probe);
        probe[i] = xi;
        g[i] = (fp - fm) / (2.0 * hi);
    }
    return g;
}

bool all_finite(const Tensor& a) {
    for (size_t i = 0; i < a.numel(); ++i)
        if (!std::isfinite(a[i])) return false;
    return true;
}

} // namespace geoformer
