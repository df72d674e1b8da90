// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/gate_detect.hpp"

#include <algorithm>

namespace xsgs::gate_detect {

namespace t = xsgs::tensor;

DetectGate::DetectGate(const std::vector<std::size_t>& hidden, nn::Rng& rng) {
    std::vector<std::size_t> widths = {gscloud::kPointFeatures};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(payload::kModalityCount);
    mlp_ = nn::Mlp(widths, rng);
}

Tensor DetectGate::logits(const Tensor& features) const {
    if (features.cols() != gscloud::kPointFeatures) {
        throw DimensionError("detect: feature width " + std::to_string(features.cols()));
    }
    return mlp_(features);
}

DetectResult DetectGate::detect(const gscloud::GaussianCloud& sorted, double tau,
                                std::size_t chunk) const {
    t::NoGradGuard guard;
    const Tensor features = gscloud::gate_features(sorted);
    const std::size_t n = features.rows();
    const std::size_t w = features.cols();
    chunk = std::max<std::size_t>(chunk, 1);
    DetectResult out;
    out.points = n;
    out.probs.reserve(n * payload::kModalityCount);
    const auto fv = features.data();
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t end = std::min(n, begin + chunk);
        const Tensor rows = Tensor::from(
            end - begin, w, std::vector<double>(fv.begin() + begin * w, fv.begin() + end * w));
        const Tensor p = t::sigmoid(logits(rows));
        out.probs.insert(out.probs.end(), p.data().begin(), p.data().end());
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < payload::kModalityCount; ++m) {
            if (out.probs[i * payload::kModalityCount + m] >= tau) out.carriers[m].push_back(i);
        }
    }
    return out;
}

void DetectGate::collect(const std::string& prefix, tensor::ParamList& out) const {
    mlp_.collect(prefix + ".mlp", out);
}

Tensor truth_matrix(const gate_select::ScoreMask& mask) {
    std::vector<double> v(mask.points * payload::kModalityCount, 0.0);
    for (auto m : payload::kModalities) {
        if (!mask.has(m)) continue;
        for (auto i : mask.of(m)) v[i * payload::kModalityCount + payload::index_of(m)] = 1.0;
    }
    return Tensor::from(mask.points, payload::kModalityCount, std::move(v));
}

Tensor detect_loss(const Tensor& probs, const Tensor& truth) {
    if (probs.rows() != truth.rows() || probs.cols() != truth.cols()) {
        throw DimensionError("detect_loss: probs " + probs.shape_str() + " vs truth " +
                             truth.shape_str());
    }
    return t::bce_probs(probs, truth);
}

}  // namespace xsgs::gate_detect
