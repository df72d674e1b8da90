// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace xsgs::tensor {

namespace {

thread_local bool t_grad_enabled = true;
thread_local MemoryStats t_memory;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

void track_alloc(std::size_t bytes) {
    t_memory.current_bytes += bytes;
    t_memory.peak_bytes = std::max(t_memory.peak_bytes, t_memory.current_bytes);
    t_memory.largest_bytes = std::max(t_memory.largest_bytes, bytes);
}

void track_free(std::size_t bytes) {
    t_memory.current_bytes -= std::min(bytes, t_memory.current_bytes);
}

std::string shape_of(const Node& n) {
    std::ostringstream os;
    os << "[" << n.rows << "x" << n.cols << "]";
    return os.str();
}

[[noreturn]] void dim_error(std::string_view op, const Node& a, const Node& b) {
    std::ostringstream os;
    os << op << ": incompatible shapes " << shape_of(a) << " and " << shape_of(b);
    throw DimensionError(os.str());
}

const Node& node_of(const Tensor& t, std::string_view op) {
    if (!t.defined()) {
        throw ContractError(std::string(op) + ": undefined tensor");
    }
    return *t.node();
}

/// Builds the result node and records the backward closure when any parent
/// participates in differentiation.
Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> values,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward) {
    auto out = std::make_shared<Node>(rows, cols, std::move(values));
    if (t_grad_enabled) {
        bool any = false;
        for (const auto& p : parents) {
            any = any || p.node()->requires_grad;
        }
        if (any) {
            out->requires_grad = true;
            out->parents.reserve(parents.size());
            for (const auto& p : parents) {
                out->parents.push_back(p.node());
            }
            out->backward_fn = std::move(backward);
        }
    }
    return Tensor(std::move(out));
}

bool wants(const std::shared_ptr<Node>& n) { return n->requires_grad; }

}  // namespace

// ---------------------------------------------------------------------------
// Node / Tensor plumbing

Node::Node(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
    track_alloc(data.size() * sizeof(double));
}

Node::~Node() { track_free((data.size() + grad.size()) * sizeof(double)); }

void Node::ensure_grad() {
    if (grad.empty() && !data.empty()) {
        grad.assign(data.size(), 0.0);
        track_alloc(grad.size() * sizeof(double));
    }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

MemoryStats memory_stats() { return t_memory; }
void reset_peak_memory() {
    t_memory.peak_bytes = t_memory.current_bytes;
    t_memory.largest_bytes = 0;
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
    return from(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value, bool requires_grad) {
    return from(rows, cols, std::vector<double>(rows * cols, value), requires_grad);
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values,
                    bool requires_grad) {
    if (values.size() != rows * cols) {
        std::ostringstream os;
        os << "Tensor::from: " << values.size() << " values for shape [" << rows << "x" << cols
           << "]";
        throw DimensionError(os.str());
    }
    auto n = std::make_shared<Node>(rows, cols, std::move(values));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from(1, 1, {value}, requires_grad);
}

std::size_t Tensor::rows() const { return node_ ? node_->rows : 0; }
std::size_t Tensor::cols() const { return node_ ? node_->cols : 0; }
std::size_t Tensor::size() const { return node_ ? node_->data.size() : 0; }

std::string Tensor::shape_str() const { return node_ ? shape_of(*node_) : "[undefined]"; }

std::span<const double> Tensor::data() const { return node_of(*this, "data").data; }

std::span<double> Tensor::mutable_data() {
    node_of(*this, "mutable_data");
    return node_->data;
}

double Tensor::at(std::size_t r, std::size_t c) const {
    const auto& n = node_of(*this, "at");
    return n.data.at(r * n.cols + c);
}

double Tensor::item() const {
    const auto& n = node_of(*this, "item");
    if (n.data.size() != 1) {
        throw ContractError("item: tensor " + shape_of(n) + " is not a scalar");
    }
    return n.data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    node_of(*this, "set_requires_grad");
    node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_of(*this, "grad").grad; }

std::span<double> Tensor::mutable_grad() {
    node_of(*this, "mutable_grad");
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) {
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }
}

Tensor Tensor::detach() const {
    const auto& n = node_of(*this, "detach");
    return from(n.rows, n.cols, n.data, false);
}

void Tensor::validate(std::string_view what) const {
    const auto& n = node_of(*this, "validate");
    for (std::size_t i = 0; i < n.data.size(); ++i) {
        if (!std::isfinite(n.data[i])) {
            std::ostringstream os;
            os << what << ": non-finite value at flat index " << i << " of " << shape_of(n);
            throw ContractError(os.str());
        }
    }
}

void Tensor::backward() const {
    const auto& root = node_of(*this, "backward");
    if (root.data.size() != 1) {
        throw ContractError("backward: output " + shape_of(root) + " is not a scalar");
    }
    if (!root.requires_grad) {
        return;
    }

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (n->backward_fn) {
            n->ensure_grad();
            std::fill(n->grad.begin(), n->grad.end(), 0.0);
        }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) {
            (*it)->backward_fn(**it);
        }
    }
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& na = node_of(a, "matmul");
    const auto& nb = node_of(b, "matmul");
    if (na.cols != nb.rows) {
        dim_error("matmul", na, nb);
    }
    std::vector<double> out(na.rows * nb.cols);
    MutMap(out.data(), na.rows, nb.cols).noalias() =
        ConstMap(na.data.data(), na.rows, na.cols) * ConstMap(nb.data.data(), nb.rows, nb.cols);
    auto pa = a.node();
    auto pb = b.node();
    return make_result(na.rows, nb.cols, std::move(out), {a, b}, [pa, pb](Node& o) {
        ConstMap g(o.grad.data(), o.rows, o.cols);
        if (wants(pa)) {
            pa->ensure_grad();
            MutMap(pa->grad.data(), pa->rows, pa->cols).noalias() +=
                g * ConstMap(pb->data.data(), pb->rows, pb->cols).transpose();
        }
        if (wants(pb)) {
            pb->ensure_grad();
            MutMap(pb->grad.data(), pb->rows, pb->cols).noalias() +=
                ConstMap(pa->data.data(), pa->rows, pa->cols).transpose() * g;
        }
    });
}

Tensor transpose(const Tensor& a) {
    const auto& na = node_of(a, "transpose");
    std::vector<double> out(na.data.size());
    MutMap(out.data(), na.cols, na.rows) = ConstMap(na.data.data(), na.rows, na.cols).transpose();
    auto pa = a.node();
    return make_result(na.cols, na.rows, std::move(out), {a}, [pa](Node& o) {
        pa->ensure_grad();
        MutMap(pa->grad.data(), pa->rows, pa->cols) +=
            ConstMap(o.grad.data(), o.rows, o.cols).transpose();
    });
}

Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols) {
    const auto& na = node_of(a, "reshape");
    if (rows * cols != na.data.size()) {
        std::ostringstream os;
        os << "reshape: cannot view " << shape_of(na) << " as [" << rows << "x" << cols << "]";
        throw DimensionError(os.str());
    }
    auto pa = a.node();
    return make_result(rows, cols, na.data, {a}, [pa](Node& o) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_cols: no operands");
    }
    const std::size_t rows = node_of(parts[0], "concat_cols").rows;
    std::size_t cols = 0;
    for (const auto& p : parts) {
        const auto& n = node_of(p, "concat_cols");
        if (n.rows != rows) {
            dim_error("concat_cols", node_of(parts[0], "concat_cols"), n);
        }
        cols += n.cols;
    }
    std::vector<double> out(rows * cols);
    std::size_t offset = 0;
    std::vector<std::shared_ptr<Node>> nodes;
    for (const auto& p : parts) {
        const auto& n = *p.node();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(n.data.data() + r * n.cols, n.cols, out.data() + r * cols + offset);
        }
        offset += n.cols;
        nodes.push_back(p.node());
    }
    return make_result(rows, cols, std::move(out), parts, [nodes](Node& o) {
        std::size_t off = 0;
        for (const auto& n : nodes) {
            if (wants(n)) {
                n->ensure_grad();
                for (std::size_t r = 0; r < o.rows; ++r) {
                    for (std::size_t c = 0; c < n->cols; ++c) {
                        n->grad[r * n->cols + c] += o.grad[r * o.cols + off + c];
                    }
                }
            }
            off += n->cols;
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_rows: no operands");
    }
    const std::size_t cols = node_of(parts[0], "concat_rows").cols;
    std::size_t rows = 0;
    std::vector<double> out;
    std::vector<std::shared_ptr<Node>> nodes;
    for (const auto& p : parts) {
        const auto& n = node_of(p, "concat_rows");
        if (n.cols != cols) {
            dim_error("concat_rows", node_of(parts[0], "concat_rows"), n);
        }
        rows += n.rows;
        out.insert(out.end(), n.data.begin(), n.data.end());
        nodes.push_back(p.node());
    }
    return make_result(rows, cols, std::move(out), parts, [nodes](Node& o) {
        std::size_t off = 0;
        for (const auto& n : nodes) {
            if (wants(n)) {
                n->ensure_grad();
                for (std::size_t i = 0; i < n->data.size(); ++i) n->grad[i] += o.grad[off + i];
            }
            off += n->data.size();
        }
    });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    const auto& na = node_of(a, "slice_cols");
    if (begin > end || end > na.cols) {
        std::ostringstream os;
        os << "slice_cols: range [" << begin << "," << end << ") outside " << shape_of(na);
        throw DimensionError(os.str());
    }
    const std::size_t w = end - begin;
    std::vector<double> out(na.rows * w);
    for (std::size_t r = 0; r < na.rows; ++r) {
        std::copy_n(na.data.data() + r * na.cols + begin, w, out.data() + r * w);
    }
    auto pa = a.node();
    return make_result(na.rows, w, std::move(out), {a}, [pa, begin, w](Node& o) {
        pa->ensure_grad();
        for (std::size_t r = 0; r < o.rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                pa->grad[r * pa->cols + begin + c] += o.grad[r * w + c];
            }
        }
    });
}

Tensor gather_rows(const Tensor& a, std::span<const std::int64_t> index) {
    const auto& na = node_of(a, "gather_rows");
    std::vector<double> out(index.size() * na.cols, 0.0);
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto src = index[i];
        if (src < 0) continue;
        if (static_cast<std::size_t>(src) >= na.rows) {
            throw DimensionError("gather_rows: index " + std::to_string(src) + " outside " +
                                 shape_of(na));
        }
        std::copy_n(na.data.data() + src * na.cols, na.cols, out.data() + i * na.cols);
    }
    auto pa = a.node();
    std::vector<std::int64_t> idx(index.begin(), index.end());
    return make_result(index.size(), na.cols, std::move(out), {a},
                       [pa, idx = std::move(idx)](Node& o) {
                           pa->ensure_grad();
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                               if (idx[i] < 0) continue;
                               double* dst = pa->grad.data() + idx[i] * pa->cols;
                               const double* src = o.grad.data() + i * o.cols;
                               for (std::size_t c = 0; c < o.cols; ++c) dst[c] += src[c];
                           }
                       });
}

Tensor scatter_add_rows(const Tensor& a, std::span<const std::int64_t> index,
                        std::size_t out_rows) {
    const auto& na = node_of(a, "scatter_add_rows");
    if (index.size() != na.rows) {
        throw DimensionError("scatter_add_rows: " + std::to_string(index.size()) +
                             " indices for " + shape_of(na));
    }
    std::vector<double> out(out_rows * na.cols, 0.0);
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto dst = index[i];
        if (dst < 0) continue;
        if (static_cast<std::size_t>(dst) >= out_rows) {
            throw DimensionError("scatter_add_rows: index " + std::to_string(dst) +
                                 " outside output rows " + std::to_string(out_rows));
        }
        for (std::size_t c = 0; c < na.cols; ++c) {
            out[dst * na.cols + c] += na.data[i * na.cols + c];
        }
    }
    auto pa = a.node();
    std::vector<std::int64_t> idx(index.begin(), index.end());
    return make_result(out_rows, na.cols, std::move(out), {a},
                       [pa, idx = std::move(idx)](Node& o) {
                           pa->ensure_grad();
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                               if (idx[i] < 0) continue;
                               const double* src = o.grad.data() + idx[i] * o.cols;
                               double* dst = pa->grad.data() + i * pa->cols;
                               for (std::size_t c = 0; c < o.cols; ++c) dst[c] += src[c];
                           }
                       });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

void require_same(std::string_view op, const Node& a, const Node& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        dim_error(op, a, b);
    }
}

/// Unary map y = f(x) with dy/dx expressed through (x, y).
template <typename F, typename D>
Tensor unary(const Tensor& a, std::string_view op, F f, D dfdx) {
    const auto& na = node_of(a, op);
    std::vector<double> out(na.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(na.data[i]);
    auto pa = a.node();
    return make_result(na.rows, na.cols, std::move(out), {a}, [pa, dfdx](Node& o) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            pa->grad[i] += o.grad[i] * dfdx(pa->data[i], o.data[i]);
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const auto& na = node_of(a, "add");
    const auto& nb = node_of(b, "add");
    require_same("add", na, nb);
    std::vector<double> out(na.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.data[i] + nb.data[i];
    auto pa = a.node();
    auto pb = b.node();
    return make_result(na.rows, na.cols, std::move(out), {a, b}, [pa, pb](Node& o) {
        for (const auto& p : {pa, pb}) {
            if (!wants(p)) continue;
            p->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) p->grad[i] += o.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const auto& na = node_of(a, "sub");
    const auto& nb = node_of(b, "sub");
    require_same("sub", na, nb);
    std::vector<double> out(na.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.data[i] - nb.data[i];
    auto pa = a.node();
    auto pb = b.node();
    return make_result(na.rows, na.cols, std::move(out), {a, b}, [pa, pb](Node& o) {
        if (wants(pa)) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
        }
        if (wants(pb)) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pb->grad[i] -= o.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const auto& na = node_of(a, "mul");
    const auto& nb = node_of(b, "mul");
    require_same("mul", na, nb);
    std::vector<double> out(na.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.data[i] * nb.data[i];
    auto pa = a.node();
    auto pb = b.node();
    return make_result(na.rows, na.cols, std::move(out), {a, b}, [pa, pb](Node& o) {
        if (wants(pa)) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i] * pb->data[i];
        }
        if (wants(pb)) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pb->grad[i] += o.grad[i] * pa->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, "scale", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary(a, "add_scalar", [s](double x) { return x + s; },
                 [](double, double) { return 1.0; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    const auto& na = node_of(a, "add_row");
    const auto& nr = node_of(row, "add_row");
    if (nr.rows != 1 || nr.cols != na.cols) {
        dim_error("add_row", na, nr);
    }
    std::vector<double> out(na.data);
    for (std::size_t r = 0; r < na.rows; ++r) {
        for (std::size_t c = 0; c < na.cols; ++c) out[r * na.cols + c] += nr.data[c];
    }
    auto pa = a.node();
    auto pr = row.node();
    return make_result(na.rows, na.cols, std::move(out), {a, row}, [pa, pr](Node& o) {
        if (wants(pa)) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
        }
        if (wants(pr)) {
            pr->ensure_grad();
            for (std::size_t r = 0; r < o.rows; ++r) {
                for (std::size_t c = 0; c < o.cols; ++c) pr->grad[c] += o.grad[r * o.cols + c];
            }
        }
    });
}

Tensor mul_col(const Tensor& a, const Tensor& col) {
    const auto& na = node_of(a, "mul_col");
    const auto& nc = node_of(col, "mul_col");
    if (nc.cols != 1 || nc.rows != na.rows) {
        dim_error("mul_col", na, nc);
    }
    std::vector<double> out(na.data.size());
    for (std::size_t r = 0; r < na.rows; ++r) {
        for (std::size_t c = 0; c < na.cols; ++c) {
            out[r * na.cols + c] = na.data[r * na.cols + c] * nc.data[r];
        }
    }
    auto pa = a.node();
    auto pc = col.node();
    return make_result(na.rows, na.cols, std::move(out), {a, col}, [pa, pc](Node& o) {
        if (wants(pa)) {
            pa->ensure_grad();
            for (std::size_t r = 0; r < o.rows; ++r) {
                for (std::size_t c = 0; c < o.cols; ++c) {
                    pa->grad[r * o.cols + c] += o.grad[r * o.cols + c] * pc->data[r];
                }
            }
        }
        if (wants(pc)) {
            pc->ensure_grad();
            for (std::size_t r = 0; r < o.rows; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < o.cols; ++c) {
                    acc += o.grad[r * o.cols + c] * pa->data[r * o.cols + c];
                }
                pc->grad[r] += acc;
            }
        }
    });
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
    const auto& na = node_of(a, "mul_row");
    const auto& nr = node_of(row, "mul_row");
    if (nr.rows != 1 || nr.cols != na.cols) {
        dim_error("mul_row", na, nr);
    }
    std::vector<double> out(na.data.size());
    for (std::size_t r = 0; r < na.rows; ++r) {
        for (std::size_t c = 0; c < na.cols; ++c) {
            out[r * na.cols + c] = na.data[r * na.cols + c] * nr.data[c];
        }
    }
    auto pa = a.node();
    auto pr = row.node();
    return make_result(na.rows, na.cols, std::move(out), {a, row}, [pa, pr](Node& o) {
        if (wants(pa)) {
            pa->ensure_grad();
            for (std::size_t r = 0; r < o.rows; ++r) {
                for (std::size_t c = 0; c < o.cols; ++c) {
                    pa->grad[r * o.cols + c] += o.grad[r * o.cols + c] * pr->data[c];
                }
            }
        }
        if (wants(pr)) {
            pr->ensure_grad();
            for (std::size_t r = 0; r < o.rows; ++r) {
                for (std::size_t c = 0; c < o.cols; ++c) {
                    pr->grad[c] += o.grad[r * o.cols + c] * pa->data[r * o.cols + c];
                }
            }
        }
    });
}

namespace {
double stable_sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& a) {
    return unary(a, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
    return unary(
        a, "silu", [](double x) { return x * stable_sigmoid(x); },
        [](double x, double) {
            const double s = stable_sigmoid(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

Tensor tanh(const Tensor& a) {
    return unary(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor softmax_axis(const Tensor& a, Axis axis) {
    const auto& na = node_of(a, "softmax_axis");
    const bool by_row = axis == Axis::row;
    const std::size_t lanes = by_row ? na.rows : na.cols;
    const std::size_t len = by_row ? na.cols : na.rows;
    if (len == 0) {
        throw DimensionError("softmax_axis: empty axis in " + shape_of(na));
    }
    const std::size_t lane_stride = by_row ? na.cols : 1;
    const std::size_t elem_stride = by_row ? 1 : na.cols;
    std::vector<double> out(na.data.size());
    for (std::size_t l = 0; l < lanes; ++l) {
        const std::size_t base = l * lane_stride;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, na.data[base + i * elem_stride]);
        double z = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double e = std::exp(na.data[base + i * elem_stride] - mx);
            out[base + i * elem_stride] = e;
            z += e;
        }
        for (std::size_t i = 0; i < len; ++i) out[base + i * elem_stride] /= z;
    }
    auto pa = a.node();
    return make_result(na.rows, na.cols, std::move(out), {a},
                       [pa, lanes, len, lane_stride, elem_stride](Node& o) {
                           pa->ensure_grad();
                           for (std::size_t l = 0; l < lanes; ++l) {
                               const std::size_t base = l * lane_stride;
                               double dot = 0.0;
                               for (std::size_t i = 0; i < len; ++i) {
                                   const std::size_t k = base + i * elem_stride;
                                   dot += o.grad[k] * o.data[k];
                               }
                               for (std::size_t i = 0; i < len; ++i) {
                                   const std::size_t k = base + i * elem_stride;
                                   pa->grad[k] += o.data[k] * (o.grad[k] - dot);
                               }
                           }
                       });
}

// ---------------------------------------------------------------------------
// Reductions and losses

Tensor sum(const Tensor& a) {
    const auto& na = node_of(a, "sum");
    double s = 0.0;
    for (double v : na.data) s += v;
    auto pa = a.node();
    return make_result(1, 1, {s}, {a}, [pa](Node& o) {
        pa->ensure_grad();
        for (double& g : pa->grad) g += o.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    const auto& na = node_of(a, "mean");
    if (na.data.empty()) {
        throw DimensionError("mean: empty tensor");
    }
    return scale(sum(a), 1.0 / static_cast<double>(na.data.size()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
    auto d = sub(a, b);
    return mean(mul(d, d));
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    const auto& nl = node_of(logits, "bce_with_logits");
    const auto& nt = node_of(targets, "bce_with_logits");
    require_same("bce_with_logits", nl, nt);
    if (nl.data.empty()) {
        throw DimensionError("bce_with_logits: empty tensor");
    }
    const double inv = 1.0 / static_cast<double>(nl.data.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < nl.data.size(); ++i) {
        const double x = nl.data[i];
        // log(1 + e^x) - t x, written to avoid overflow for large |x|.
        acc += std::max(x, 0.0) - x * nt.data[i] + std::log1p(std::exp(-std::abs(x)));
    }
    auto pl = logits.node();
    auto pt = targets.node();
    return make_result(1, 1, {acc * inv}, {logits, targets}, [pl, pt, inv](Node& o) {
        if (wants(pl)) {
            pl->ensure_grad();
            for (std::size_t i = 0; i < pl->data.size(); ++i) {
                pl->grad[i] += o.grad[0] * inv * (stable_sigmoid(pl->data[i]) - pt->data[i]);
            }
        }
        if (wants(pt)) {
            pt->ensure_grad();
            for (std::size_t i = 0; i < pt->data.size(); ++i) {
                pt->grad[i] -= o.grad[0] * inv * pl->data[i];
            }
        }
    });
}

Tensor bce_probs(const Tensor& probs, const Tensor& targets) {
    const auto& np = node_of(probs, "bce_probs");
    const auto& nt = node_of(targets, "bce_probs");
    require_same("bce_probs", np, nt);
    if (np.data.empty()) {
        throw DimensionError("bce_probs: empty tensor");
    }
    static constexpr double kTiny = 1e-300;
    const double inv = 1.0 / static_cast<double>(np.data.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < np.data.size(); ++i) {
        const double p = np.data[i];
        const double t = nt.data[i];
        if (t > 0.0) acc -= t * std::log(std::max(p, kTiny));
        if (t < 1.0) acc -= (1.0 - t) * std::log(std::max(1.0 - p, kTiny));
    }
    auto pp = probs.node();
    auto pt = targets.node();
    return make_result(1, 1, {acc * inv}, {probs}, [pp, pt, inv](Node& o) {
        pp->ensure_grad();
        for (std::size_t i = 0; i < pp->data.size(); ++i) {
            const double p = std::clamp(pp->data[i], kTiny, 1.0 - 1e-16);
            const double t = pt->data[i];
            pp->grad[i] += o.grad[0] * inv * ((1.0 - t) / (1.0 - p) - t / p);
        }
    });
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor theta, double h) {
    if (!theta.requires_grad()) {
        theta.set_requires_grad(true);
    }
    theta.zero_grad();
    f(theta).backward();
    std::vector<double> analytic(theta.size(), 0.0);
    if (theta.has_grad()) {
        std::copy(theta.grad().begin(), theta.grad().end(), analytic.begin());
    }
    theta.zero_grad();

    NoGradGuard guard;
    auto values = theta.mutable_data();
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + h;
        const double up = f(theta).item();
        values[i] = saved - h;
        const double down = f(theta).item();
        values[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace xsgs::tensor
