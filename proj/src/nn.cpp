// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/nn.hpp"

#include <cmath>

namespace xsgs::nn {

Tensor uniform(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = dist(rng);
    return Tensor::from(rows, cols, std::move(v), true);
}

Tensor normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = dist(rng);
    return Tensor::from(rows, cols, std::move(v), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool zero_init) {
    if (zero_init) {
        weight = Tensor::zeros(in, out, true);
        bias = Tensor::zeros(1, out, true);
        return;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = uniform(in, out, bound, rng);
    bias = uniform(1, out, bound, rng);
}

Tensor Linear::operator()(const Tensor& x) const {
    return tensor::add_row(tensor::matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

Mlp::Mlp(const std::vector<std::size_t>& widths, Rng& rng, bool zero_last) {
    if (widths.size() < 2) {
        throw DimensionError("Mlp: need at least input and output widths");
    }
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool last = i + 2 == widths.size();
        layers.emplace_back(widths[i], widths[i + 1], rng, last && zero_last);
    }
}

Tensor Mlp::operator()(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i](h);
        if (i + 1 < layers.size()) h = tensor::silu(h);
    }
    return h;
}

void Mlp::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].collect(prefix + "." + std::to_string(i), out);
    }
}

}  // namespace xsgs::nn
