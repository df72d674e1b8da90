// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "xsgs/payload.hpp"

namespace xsgs::train {

using Json = nlohmann::json;
template <typename T>
using PerModality = std::array<T, payload::kModalityCount>;

struct LossWeights {
    double gamma = 2.0;   ///< SH-MSE
    double phi = 0.005;   ///< 1D BCE
    double theta = 0.8;   ///< 2D MSE
    double delta = 1.5;   ///< 3D MSE
    double mask = 1.0;    ///< detect BCE
    double codec = 1.0;   ///< feature codec restoration

    bool operator==(const LossWeights&) const = default;
};

struct TrainConfig {
    std::string preset = "default";
    LossWeights loss;
    PerModality<bool> enabled = {true, false, false};
    /// Patch count per modality.
    PerModality<std::size_t> k = {64, 128, 256};
    std::size_t bits_length = payload::kBitsWidth;
    /// Points per payload object; k[obj3d] must be a multiple.
    std::size_t object_points = 64;
    std::size_t cloud_points = 4096;
    std::size_t d = 64;
    std::vector<std::size_t> slots = {3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14};
    PerModality<std::vector<std::size_t>> head_hidden = {
        std::vector<std::size_t>{128, 128, 128}, {128, 128, 128}, {128, 128, 128}};
    std::vector<std::size_t> detect_hidden = {128, 128, 64};
    double feature_gain = 1.0;
    std::vector<std::size_t> codec_position_hidden = {64, 64};
    std::vector<std::size_t> codec_refine_hidden = {64};
    double lr = 1e-3;
    double detect_lr = 1e-3;
    bool cosine_schedule = true;
    std::size_t batch = 2;
    std::size_t steps = 20000;
    /// Carrier rows per cloud and modality used for the head losses.
    std::size_t head_rows = 64;
    /// Distinct feature or object payloads drawn per cloud for head rows.
    std::size_t payload_draws = 4;
    /// Non-carrier points sampled per cloud for the detect loss; 0 uses all.
    std::size_t detect_negatives = 448;
    /// gamma ramps linearly from 0 over this many steps.
    std::size_t sh_warmup = 0;
    double max_drop = 0.25;
    std::uint64_t seed = 0;

    bool operator==(const TrainConfig&) const = default;

    bool has(payload::Modality m) const { return enabled[payload::index_of(m)]; }
    std::size_t k_of(payload::Modality m) const { return k[payload::index_of(m)]; }
    std::size_t patch_width(payload::Modality m) const;
    PerModality<std::size_t> patch_widths() const;

    /// Throws ConfigError describing the first violated constraint.
    void validate() const;

    Json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static TrainConfig from_json(const Json& j);
    /// "default", "paper", "desk-1d" or "desk-multimodal".
    static TrainConfig named(const std::string& preset);
};

/// Canonical serialization: sorted keys, no whitespace.
std::string canonical_json(const Json& j);

}  // namespace xsgs::train
