// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xsgs/train.hpp"

namespace xsgs::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout, all integers little-endian:
///   "XSGS" | u32 version | u32 n | n bytes canonical JSON {config, state}
///   | u32 count | parameter records | u32 count | optimizer records
/// Record: u16 name length | name | u8 rank | u32 dims[rank] | f32 data.
std::vector<std::uint8_t> save_checkpoint(const TrainState& state);

/// Rebuilds the model from the embedded config, then loads every tensor.
TrainState load_checkpoint(std::span<const std::uint8_t> bytes);

/// Loads tensors into an existing state. Throws DimensionError naming the
/// first tensor whose shape disagrees with the target.
void load_checkpoint_into(std::span<const std::uint8_t> bytes, TrainState& target);

void save_checkpoint_file(const TrainState& state, const std::string& path);
TrainState load_checkpoint_file(const std::string& path);

}  // namespace xsgs::train
