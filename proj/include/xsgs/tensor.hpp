// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xsgs/errors.hpp"

namespace xsgs::tensor {

struct Node;

/// Dense row-major 2-D tensor of doubles with an optional gradient
/// accumulator. Copies share storage; graph edges are recorded eagerly
/// whenever an operand requires grad and grad mode is enabled.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
    static Tensor full(std::size_t rows, std::size_t cols, double value, bool requires_grad = false);
    static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    std::size_t rows() const;
    std::size_t cols() const;
    std::size_t size() const;
    std::vector<std::size_t> shape() const { return {rows(), cols()}; }
    std::string shape_str() const;

    std::span<const double> data() const;
    /// Mutable access for parameter updates and finite-difference probes.
    /// Never call on a tensor whose value has already been consumed by a
    /// live graph.
    std::span<double> mutable_data();
    double at(std::size_t r, std::size_t c) const;
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// New leaf sharing no graph history; data is copied.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    /// Reverse-mode sweep from this scalar. Leaf gradients accumulate
    /// across calls; interior gradients are recomputed each call.
    void backward() const;

    /// Throws ContractError if any entry is NaN or infinite.
    void validate(std::string_view what) const;

    const std::shared_ptr<Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<Node> node_;
};

struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Node(std::size_t r, std::size_t c, std::vector<double> values);
    ~Node();
    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    void ensure_grad();
};

/// Disables graph recording on this thread for the guard's lifetime.
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

/// Per-thread accounting of bytes held by tensor storage (values and
/// gradients). Used to verify the linear-memory contract of the scorers.
struct MemoryStats {
    std::size_t current_bytes = 0;
    std::size_t peak_bytes = 0;
    /// Largest single buffer allocated since the last reset.
    std::size_t largest_bytes = 0;
};
MemoryStats memory_stats();
void reset_peak_memory();

enum class Axis { row, column };

// Construction and layout.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
/// Row gather; an index of -1 produces a zero row.
Tensor gather_rows(const Tensor& a, std::span<const std::int64_t> index);
/// out[index[i]] += a[i]; rows with index -1 are discarded.
Tensor scatter_add_rows(const Tensor& a, std::span<const std::int64_t> index, std::size_t out_rows);

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// a (n x c) + row (1 x c) broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
/// a (n x c) * col (n x 1) broadcast over columns.
Tensor mul_col(const Tensor& a, const Tensor& col);
/// a (n x c) * row (1 x c) broadcast over rows.
Tensor mul_row(const Tensor& a, const Tensor& row);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softmax_axis(const Tensor& a, Axis axis);

// Reductions and losses (all return 1 x 1).
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mse(const Tensor& a, const Tensor& b);
/// Mean binary cross-entropy from logits, log-sum-exp stabilized.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
/// Mean binary cross-entropy from probabilities with 0 log 0 = 0.
Tensor bce_probs(const Tensor& probs, const Tensor& targets);

/// max_i |analytic_i - numeric_i| / max(1, |analytic_i|) using central
/// differences of step h. theta is restored before returning.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor theta, double h = 1e-6);

}  // namespace xsgs::tensor
