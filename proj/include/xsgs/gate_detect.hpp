// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "xsgs/gate_select.hpp"
#include "xsgs/gscloud.hpp"
#include "xsgs/nn.hpp"

namespace xsgs::gate_detect {

using payload::Modality;
using tensor::Tensor;

struct DetectResult {
    std::size_t points = 0;
    /// n x 3 sigmoid probabilities, row-major, modality order.
    std::vector<double> probs;
    /// Per modality: ascending indices of points with prob >= tau.
    std::array<std::vector<std::size_t>, payload::kModalityCount> carriers;

    double prob(std::size_t point, Modality m) const {
        return probs[point * payload::kModalityCount + payload::index_of(m)];
    }
};

/// Pointwise carrier classifier over the 59 point features.
class DetectGate {
public:
    DetectGate() = default;
    DetectGate(const std::vector<std::size_t>& hidden, nn::Rng& rng);

    /// gate_features rows -> n x 3 logits.
    Tensor logits(const Tensor& features) const;
    DetectResult detect(const gscloud::GaussianCloud& sorted, double tau = 0.5,
                        std::size_t chunk = 8192) const;

    const nn::Mlp& mlp() const { return mlp_; }
    void collect(const std::string& prefix, tensor::ParamList& out) const;

private:
    nn::Mlp mlp_;
};

/// n x 3 0/1 matrix; absent modalities are all zero.
Tensor truth_matrix(const gate_select::ScoreMask& mask);
/// Mean binary cross-entropy over all n * 3 entries.
Tensor detect_loss(const Tensor& probs, const Tensor& truth);

}  // namespace xsgs::gate_detect
