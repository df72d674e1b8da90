// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "xsgs/nn.hpp"
#include "xsgs/payload.hpp"
#include "xsgs/tensor.hpp"

namespace xsgs::gate_select {

using payload::Modality;
using tensor::Tensor;

/// Carrier masks for the modalities present in one injection.
struct ScoreMask {
    std::size_t points = 0;
    /// Per modality: ascending point indices, empty when the modality is absent.
    std::array<std::optional<std::vector<std::size_t>>, payload::kModalityCount> carriers;

    bool has(Modality m) const { return carriers[payload::index_of(m)].has_value(); }
    const std::vector<std::size_t>& of(Modality m) const;
    /// 0/1 vector of length points.
    std::vector<std::uint8_t> dense(Modality m) const;
};

/// Residual attention block: M = A + softmax(q(A) k(B)^T / sqrt(d)) v(B),
/// out = M + ff(M).
struct AttentionBlock {
    nn::Linear query, key, value;
    nn::Mlp ff;

    AttentionBlock() = default;
    AttentionBlock(std::size_t d, nn::Rng& rng);
    Tensor operator()(const Tensor& a, const Tensor& b) const;
    void collect(const std::string& prefix, tensor::ParamList& out) const;
};

struct CrossProjection {
    nn::Linear query, key, value;
};

struct ModalityScores {
    std::vector<double> self;
    std::array<std::optional<std::vector<double>>, payload::kModalityCount> cross;
};

class SelectGate {
public:
    SelectGate() = default;
    /// widths[m] is the patch width of modality m.
    SelectGate(std::size_t d, const std::array<std::size_t, payload::kModalityCount>& widths,
               nn::Rng& rng);

    std::size_t dim() const { return anchor_.cols(); }

    Tensor embed_cover(const Tensor& features) const;
    Tensor embed_patches(const Tensor& patches, Modality m) const;

    /// H = MA(I, X), O_s = MA(X, H), sigmoid(linear(O_s)); n x 1.
    Tensor self_score(const Tensor& x) const;
    /// sigmoid(linear(softmax_row(Q) (softmax_col(K)^T V))); n x 1.
    Tensor cross_score(const Tensor& x, const Tensor& y, Modality m) const;

    /// Graph-free evaluation over raw cover features in chunks of `chunk`
    /// rows. Auxiliary memory is O(chunk * d + l * d + d^2).
    ModalityScores score_streaming(
        const Tensor& features,
        const std::array<const Tensor*, payload::kModalityCount>& patches,
        std::size_t chunk = 4096) const;

    void collect(const std::string& prefix, tensor::ParamList& out) const;

private:
    nn::Linear cover_embed_;
    std::array<nn::Linear, payload::kModalityCount> patch_embed_;
    Tensor anchor_;
    AttentionBlock induce_;
    AttentionBlock broadcast_;
    std::array<CrossProjection, payload::kModalityCount> cross_;
    nn::Linear self_linear_;
    nn::Linear cross_linear_;
};

/// Top k of self * cross among non-excluded points; ties go to the lower
/// index. Throws CapacityError when fewer than k points remain.
std::vector<std::size_t> fuse_and_topk(std::span<const double> self, std::span<const double> cross,
                                       std::size_t k, std::span<const std::uint8_t> excluded);

/// Scores once, then selects modalities in the order of `order` (default
/// bits1d, feat2d, obj3d) with earlier picks excluded from later ones.
/// patches[m] == nullptr marks modality m absent.
ScoreMask select_all(const Tensor& features,
                     const std::array<const Tensor*, payload::kModalityCount>& patches,
                     const SelectGate& gate,
                     const std::array<std::size_t, payload::kModalityCount>& k,
                     std::array<Modality, payload::kModalityCount> order = payload::kModalities);

}  // namespace xsgs::gate_select
