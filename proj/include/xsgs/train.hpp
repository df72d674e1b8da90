// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "xsgs/adam.hpp"
#include "xsgs/config.hpp"
#include "xsgs/gate_detect.hpp"
#include "xsgs/gate_select.hpp"
#include "xsgs/gscloud.hpp"
#include "xsgs/heads.hpp"
#include "xsgs/payload.hpp"

namespace xsgs::train {

using payload::Modality;
using tensor::Tensor;

/// Every trainable component, built deterministically from a config.
struct Model {
    TrainConfig config;
    gscloud::SlotSpec spec;
    gate_select::SelectGate select;
    gate_detect::DetectGate detect;
    heads::Heads heads;
    std::optional<payload::FeatureCodec> codec;

    static Model create(const TrainConfig& config);

    /// Heads, codec and select gate; updated by the injector optimizer.
    tensor::ParamList injector_params() const;
    tensor::ParamList detector_params() const;
};

struct TrainState {
    Model model;
    tensor::AdamState injector;
    tensor::AdamState detector;
    std::int64_t step = 0;

    static TrainState create(const TrainConfig& config);
};

/// One payload per enabled modality, already encoded into patch sets.
struct PayloadDraw {
    std::vector<std::uint8_t> bits;
    std::optional<payload::Feature> feature;
    std::optional<gscloud::GaussianCloud> object;
    PerModality<std::optional<payload::PatchSet>> sets;

    std::array<const payload::PatchSet*, payload::kModalityCount> pointers() const;
    std::array<const Tensor*, payload::kModalityCount> patch_tensors() const;
};

PayloadDraw sample_payload(const Model& model, nn::Rng& rng);
/// Encodes user-supplied payloads; absent ones are skipped.
PayloadDraw encode_payload(const Model& model, const std::vector<std::uint8_t>* bits,
                           const payload::Feature* feature, const gscloud::GaussianCloud* object);

// ---------------------------------------------------------------------------
// Loss

/// Optional pieces of the objective; a missing piece contributes nothing.
struct LossInputs {
    Tensor original_slots;
    Tensor injected_slots;
    Tensor bit_logits, bit_truth;
    Tensor feat_pred, feat_truth;
    Tensor obj_pred, obj_truth;
    Tensor mask_logits, mask_truth;
    Tensor codec;
};

struct LossBreakdown {
    Tensor total;
    double sh = 0.0;
    double bits = 0.0;
    double feat = 0.0;
    double obj = 0.0;
    double mask = 0.0;
    double codec = 0.0;
};

/// gamma * SH-MSE + phi * BCE + theta * 2D-MSE + delta * 3D-MSE + mask * BCE
/// (+ codec weight * codec loss). gamma_scale implements the warm-up ramp.
/// Throws ContractError when a term for a disabled modality is supplied.
LossBreakdown total_loss(const LossInputs& in, const TrainConfig& config, double gamma_scale = 1.0);

// ---------------------------------------------------------------------------
// Training

struct StepMetrics {
    std::int64_t step = 0;
    double injector_loss = 0.0;
    double sh = 0.0, bits = 0.0, feat = 0.0, obj = 0.0, mask = 0.0, codec = 0.0;
    /// Per-row accuracy of bit extraction on the head rows of this step.
    double bit_accuracy = 0.0;
    /// Per-entry accuracy of the detect gate on its sampled rows.
    double detect_accuracy = 0.0;
};

/// splitmix64 finaliser applied to a combination of the inputs.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

/// Runs select, inject, detect on the detached watermark, extract with the
/// true masks, then one update of each optimizer.
StepMetrics train_step(TrainState& state, const std::vector<gscloud::GaussianCloud>& batch,
                       nn::Rng& rng);
/// Synthesizes the batch from (seed, step) so runs and resumed runs agree.
StepMetrics train_step(TrainState& state);

using StepCallback = std::function<void(const StepMetrics&)>;
/// Trains until state.step == config.steps.
void train(TrainState& state, const StepCallback& on_step = {});

/// Held-out clouds come from a seed domain disjoint from training.
gscloud::GaussianCloud heldout_cloud(const TrainConfig& config, std::uint64_t index);

// ---------------------------------------------------------------------------
// Inference

struct Watermarked {
    gscloud::GaussianCloud cloud;
    gate_select::ScoreMask mask;
};

/// Sorts, selects and injects. The result is in canonical order.
Watermarked embed(const gscloud::GaussianCloud& cloud, const PayloadDraw& draw, const Model& model);

struct Extracted {
    gscloud::GaussianCloud sorted;
    gate_detect::DetectResult detection;
    std::optional<payload::DecodedBits> bits;
    std::optional<payload::Feature> feature;
    /// Raw patch values (centred, unit spread) when no header is supplied.
    std::optional<gscloud::GaussianCloud> object;
};

/// Sorts, detects, and decodes every enabled modality with at least one
/// flagged point.
Extracted extract(const gscloud::GaussianCloud& cloud, const Model& model, double tau = 0.5,
                  const payload::ObjectHeader* header = nullptr);

}  // namespace xsgs::train
