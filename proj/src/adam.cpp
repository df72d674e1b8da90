// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/adam.hpp"

#include <cmath>

namespace xsgs::tensor {

AdamState AdamState::for_params(const ParamList& params) {
    AdamState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.value.size(), 0.0);
        s.v.emplace_back(p.value.size(), 0.0);
    }
    return s;
}

void adam_step(ParamList& params, AdamState& state, const AdamHyper& hyper) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError("adam_step: state holds " + std::to_string(state.m.size()) +
                             " moments for " + std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        if (state.m[i].size() != p.value.size() || state.v[i].size() != p.value.size()) {
            throw DimensionError("adam_step: moment shape mismatch for " + p.name);
        }
        if (!p.value.has_grad()) continue;
        for (double g : p.value.grad()) {
            if (!std::isfinite(g)) {
                throw ContractError("adam_step: non-finite gradient in parameter " + p.name);
            }
        }
    }

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(hyper.beta1, t);
    const double bc2 = 1.0 - std::pow(hyper.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto w = p.value.mutable_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const bool has = p.value.has_grad();
        auto g = has ? p.value.grad() : std::span<const double>{};
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = has ? g[j] : 0.0;
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
            if (hyper.float32_state) {
                w[j] = static_cast<float>(w[j]);
                m[j] = static_cast<float>(m[j]);
                v[j] = static_cast<float>(v[j]);
            }
        }
    }
}

void round_to_float32(ParamList& params) {
    for (auto& p : params) {
        for (auto& x : p.value.mutable_data()) x = static_cast<float>(x);
    }
}

void zero_grads(ParamList& params) {
    for (auto& p : params) p.value.zero_grad();
}

}  // namespace xsgs::tensor
