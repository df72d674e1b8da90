// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "xsgs/gate_select.hpp"
#include "xsgs/gscloud.hpp"
#include "xsgs/nn.hpp"
#include "xsgs/payload.hpp"

namespace xsgs::heads {

using payload::Modality;
using tensor::Tensor;

/// Injection and extraction MLPs for one modality. Slots are scaled by
/// gscloud::kSlotScale on the way in and the residual is scaled back out.
class ModalityHead {
public:
    ModalityHead() = default;
    ModalityHead(Modality m, std::size_t slot_width, std::size_t patch_width,
                 const std::vector<std::size_t>& hidden, nn::Rng& rng);

    Modality modality() const { return modality_; }
    std::size_t slot_width() const { return slot_width_; }
    std::size_t patch_width() const { return patch_width_; }

    /// slots + MLP([slots || patch]) + linear bypass; rows are carriers.
    Tensor inject(const Tensor& slots, const Tensor& patches) const;
    /// Bits: logits. Features and objects: raw values.
    Tensor extract(const Tensor& slots) const;

    void collect(const std::string& prefix, tensor::ParamList& out) const;

private:
    Modality modality_ = Modality::bits1d;
    std::size_t slot_width_ = 0;
    std::size_t patch_width_ = 0;
    nn::Mlp inject_;
    nn::Mlp extract_;
    // Zero-initialised affine paths in parallel with the MLPs.
    nn::Linear inject_bypass_;
    nn::Linear extract_bypass_;
};

struct Heads {
    std::array<std::optional<ModalityHead>, payload::kModalityCount> head;

    bool has(Modality m) const { return head[payload::index_of(m)].has_value(); }
    const ModalityHead& of(Modality m) const;
    void collect(const std::string& prefix, tensor::ParamList& out) const;
};

struct Injection {
    gscloud::GaussianCloud cloud;
    /// assignment[m][i] is the point index that carries patch i.
    std::array<std::optional<std::vector<std::size_t>>, payload::kModalityCount> assignment;
};

/// Writes patch i of each modality into the i-th masked point (ascending
/// index order) through the injection head. Bit rows are interleaved per
/// carrier first. Only writable slots of masked points change. Throws AssignmentError when counts or presence disagree.
Injection apply_watermark(const gscloud::GaussianCloud& cloud,
                          const gate_select::ScoreMask& masks,
                          const std::array<const payload::PatchSet*, payload::kModalityCount>& sets,
                          const Heads& heads, const gscloud::SlotSpec& spec);

/// Runs the extraction head on the listed points.
Tensor extract_at(const gscloud::GaussianCloud& cloud, const std::vector<std::size_t>& points,
                  const ModalityHead& head, const gscloud::SlotSpec& spec);

/// Interleave keys of the listed carriers.
std::vector<payload::BitInterleave> interleave_keys(const gscloud::GaussianCloud& cloud,
                                                    std::span<const std::size_t> points,
                                                    std::size_t width);

/// Bit probabilities of the listed points in payload order, ready for
/// decode_bits.
Tensor extract_bits_at(const gscloud::GaussianCloud& cloud, const std::vector<std::size_t>& points,
                       const ModalityHead& head, const gscloud::SlotSpec& spec);

}  // namespace xsgs::heads
