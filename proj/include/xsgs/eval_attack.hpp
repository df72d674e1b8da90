// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xsgs/train.hpp"

namespace xsgs::eval {

using train::Json;
using train::PerModality;

struct Pruned {
    gscloud::GaussianCloud cloud;
    /// Ascending original indices of the survivors.
    std::vector<std::size_t> kept;
};

/// Deletes floor(rate * n) points chosen uniformly without replacement.
Pruned prune_random_indexed(const gscloud::GaussianCloud& cloud, double rate, std::uint64_t seed);
gscloud::GaussianCloud prune_random(const gscloud::GaussianCloud& cloud, double rate,
                                    std::uint64_t seed);

double bit_precision(std::span<const std::uint8_t> extracted, std::span<const std::uint8_t> truth);

/// 10 log10(R^2 / MSE) over writable slots, R = range of a's writable values.
/// Identical clouds give +infinity.
double sh_psnr(const gscloud::GaussianCloud& a, const gscloud::GaussianCloud& b,
               const gscloud::SlotSpec& spec);

/// Symmetric mean nearest-neighbour squared distance over positions, halved.
double chamfer(const gscloud::GaussianCloud& a, const gscloud::GaussianCloud& b);
/// Positions mapped into the header's unit cube.
gscloud::GaussianCloud normalized(const gscloud::GaussianCloud& object,
                                  const payload::ObjectHeader& header);

/// True when any enabled modality flags at least a quarter of its k.
bool watermark_present(const gate_detect::DetectResult& detection, const train::TrainConfig& config);

struct FalsePositiveReport {
    std::size_t points = 0;
    PerModality<std::size_t> flagged{};
    PerModality<double> flagged_fraction{};
    bool watermark_detected = false;
    /// Points the forced 1D extraction used: the flagged ones, or the top-k
    /// by probability when none are flagged.
    std::size_t forced_points = 0;
    std::optional<double> forced_bit_precision;

    Json to_json() const;
};

FalsePositiveReport false_positive_check(const gscloud::GaussianCloud& clean,
                                         const train::Model& model,
                                         std::span<const std::uint8_t> reference_bits,
                                         double tau = 0.5);

struct RateMetrics {
    double rate = 0.0;
    std::size_t trials = 0;
    double bit_precision = 0.0;
    double min_bit_precision = 0.0;
    std::optional<double> feature_rel_mse;
    std::optional<double> chamfer;
    double sh_psnr = 0.0;
    double mask_precision = 0.0;
    double mask_recall = 0.0;
};

struct RobustnessReport {
    std::vector<RateMetrics> rows;

    Json to_json() const;
    std::string to_table() const;
};

/// For every rate and trial: watermark a cover cloud with fresh payloads,
/// prune, detect, extract and score. Covers are held-out synthetic clouds
/// unless `cover` is given. Deterministic for a fixed (model, seed).
RobustnessReport run_robustness_suite(const train::Model& model, std::vector<double> rates,
                                      std::size_t trials, std::uint64_t seed,
                                      const gscloud::GaussianCloud* cover = nullptr);

/// Worker cap from XSGS_THREADS, else the hardware concurrency.
std::size_t worker_threads();

}  // namespace xsgs::eval
