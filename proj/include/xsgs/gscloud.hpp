// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xsgs/errors.hpp"
#include "xsgs/tensor.hpp"

namespace xsgs::gscloud {

inline constexpr std::size_t kShRestPerChannel = 15;
inline constexpr std::size_t kShRest = 3 * kShRestPerChannel;
/// Scalars seen by the gates: position, scale, rotation, opacity, DC, rest.
inline constexpr std::size_t kPointFeatures = 3 + 3 + 4 + 1 + 3 + kShRest;
/// float32 properties per PLY vertex, including the carried normals.
inline constexpr std::size_t kPlyProperties = kPointFeatures + 3;

/// Offsets of each field inside the 59-wide feature row.
namespace feature {
inline constexpr std::size_t position = 0;
inline constexpr std::size_t scale = 3;
inline constexpr std::size_t rotation = 6;
inline constexpr std::size_t opacity = 10;
inline constexpr std::size_t sh_dc = 11;
inline constexpr std::size_t sh_rest = 14;
}  // namespace feature

/// One splat as stored on disk. Scale is log-space, opacity a logit and
/// rotation an unnormalised quaternion; nothing is post-processed.
struct GaussianPoint {
    std::array<float, 3> position{};
    std::array<float, 3> normal{};
    std::array<float, 3> scale{};
    std::array<float, 4> rotation{};
    float opacity = 0.0f;
    std::array<float, 3> sh_dc{};
    /// Degrees 1..3, 15 coefficients per channel, channel-major.
    std::array<float, kShRest> sh_rest{};

    bool operator==(const GaussianPoint&) const = default;
};

/// Vertex property names in file order.
std::vector<std::string> ply_property_names();
/// A point's properties in file order.
std::array<float, kPlyProperties> ply_values(const GaussianPoint& p);

struct GaussianCloud {
    std::vector<GaussianPoint> points;
    std::optional<std::string> source_path;
    /// Set by sort_canonical: original index -> sorted index.
    std::vector<std::size_t> sort_permutation;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

/// Which sh_rest coefficients may carry payload. Indices are per channel in
/// [0, 14] and apply identically to all three channels.
class SlotSpec {
public:
    /// Degree-2 and degree-3 bands: per-channel indices 3..14, w = 36.
    SlotSpec();
    explicit SlotSpec(std::vector<std::size_t> per_channel);

    static SlotSpec all_rest();

    std::size_t width() const { return flat_.size(); }
    const std::vector<std::size_t>& per_channel() const { return per_channel_; }
    /// Flat positions inside sh_rest, channel-major.
    const std::vector<std::size_t>& flat() const { return flat_; }

    bool operator==(const SlotSpec&) const = default;

private:
    std::vector<std::size_t> per_channel_;
    std::vector<std::size_t> flat_;
};

GaussianCloud read_ply(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_ply(const GaussianCloud& cloud);

GaussianCloud read_ply_file(const std::string& path);
void write_ply_file(const GaussianCloud& cloud, const std::string& path);

struct SortResult {
    GaussianCloud cloud;
    /// permutation[i] is the sorted position of original point i.
    std::vector<std::size_t> permutation;
};

/// Stable lexicographic sort on raw (x, y, z); original index breaks ties.
SortResult sort_canonical(const GaussianCloud& cloud);

std::vector<double> writable_view(const GaussianPoint& point, const SlotSpec& spec);
void write_back(GaussianPoint& point, const SlotSpec& spec, std::span<const double> values);

/// n points from the fixed desk-scale distribution; deterministic per seed.
GaussianCloud synth_cloud(std::size_t n, std::uint64_t seed);

std::array<double, kPointFeatures> point_features(const GaussianPoint& p);
/// n x 59 feature matrix in cloud order.
tensor::Tensor feature_matrix(const GaussianCloud& cloud);
/// Gates and heads see sh_rest multiplied by this factor so that the
/// higher bands sit near unit variance next to the other fields.
inline constexpr double kSlotScale = 20.0;
/// feature_matrix with the sh_rest columns multiplied by kSlotScale.
tensor::Tensor gate_features(const GaussianCloud& cloud);
/// n x w matrix of writable slots for the listed points.
tensor::Tensor slot_matrix(const GaussianCloud& cloud, std::span<const std::size_t> index,
                           const SlotSpec& spec);

/// Throws SerializationError naming the first point with a non-finite field.
void validate_finite(const GaussianCloud& cloud);

}  // namespace xsgs::gscloud
