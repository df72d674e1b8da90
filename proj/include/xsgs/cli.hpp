// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "xsgs/config.hpp"

namespace xsgs::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitError = 2;

/// Contents of `train --config`:
///   {"config": {...TrainConfig...},
///    "paths": {"checkpoint": "run.ckpt", "metrics": "metrics.jsonl"},
///    "checkpoint_every": 1000, "log_every": 100}
/// Only "config" and "paths.checkpoint" are required.
struct TrainFile {
    train::TrainConfig config;
    std::string checkpoint;
    std::optional<std::string> metrics;
    std::size_t checkpoint_every = 0;
    std::size_t log_every = 100;

    train::Json to_json() const;
    static TrainFile from_json(const train::Json& j);
    /// Parses and checks that every output directory exists.
    static TrainFile load(const std::string& path);
};

/// Parses "0.05,0.1" or "lo..hi" (step 0.05) or "lo..hi:step".
std::vector<double> parse_rates(const std::string& text);

/// Entry point shared by the binary and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace xsgs::cli
