// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xsgs/tensor.hpp"

namespace xsgs::tensor {

struct NamedTensor {
    std::string name;
    Tensor value;
};

using ParamList = std::vector<NamedTensor>;

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Round parameters and moments to float32 after each update so that a
    /// float32 checkpoint captures the state exactly.
    bool float32_state = false;
};

/// First and second moments, one buffer per parameter in registration order.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::int64_t step = 0;

    /// Zeroed moments shaped like params.
    static AdamState for_params(const ParamList& params);
};

/// One bias-corrected Adam update using each parameter's accumulated grad
/// (missing grad counts as zero). Throws ContractError naming the first
/// parameter with a non-finite gradient; nothing is modified in that case.
void adam_step(ParamList& params, AdamState& state, const AdamHyper& hyper);

void zero_grads(ParamList& params);
void round_to_float32(ParamList& params);

}  // namespace xsgs::tensor
