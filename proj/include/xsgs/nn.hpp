// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "xsgs/adam.hpp"
#include "xsgs/tensor.hpp"

namespace xsgs::nn {

using tensor::ParamList;
using tensor::Tensor;
using Rng = std::mt19937_64;

/// y = x W + b with W stored [in x out].
struct Linear {
    Tensor weight;
    Tensor bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool zero_init = false);

    std::size_t in_features() const { return weight.rows(); }
    std::size_t out_features() const { return weight.cols(); }
    Tensor operator()(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Affine layers joined by SiLU; no activation after the last layer.
struct Mlp {
    std::vector<Linear> layers;

    Mlp() = default;
    /// widths = {in, hidden..., out}. zero_last makes the output identically
    /// zero at initialization.
    Mlp(const std::vector<std::size_t>& widths, Rng& rng, bool zero_last = false);

    std::size_t in_features() const { return layers.front().in_features(); }
    std::size_t out_features() const { return layers.back().out_features(); }
    Tensor operator()(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Uniform [-bound, bound] matrix, the default fan-in initialisation.
Tensor uniform(std::size_t rows, std::size_t cols, double bound, Rng& rng);
Tensor normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

}  // namespace xsgs::nn
