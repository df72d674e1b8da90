// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xsgs/gscloud.hpp"
#include "xsgs/nn.hpp"
#include "xsgs/tensor.hpp"

namespace xsgs::payload {

using tensor::Tensor;

enum class Modality : std::uint8_t { bits1d = 0, feat2d = 1, obj3d = 2 };
inline constexpr std::array<Modality, 3> kModalities = {Modality::bits1d, Modality::feat2d,
                                                        Modality::obj3d};
inline constexpr std::size_t kModalityCount = kModalities.size();

std::string_view modality_name(Modality m);
/// Throws ConfigError on an unknown name.
Modality parse_modality(std::string_view name);
inline std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }

inline constexpr std::size_t kBitsWidth = 48;
inline constexpr std::size_t kFeatWidth = 16;
inline constexpr std::size_t kObjWidth = 14;

/// Per-object normalisation. Positions map to the unit cube through
/// min/extent; each of the 14 row columns is then centred on mean and
/// divided by spread.
struct ObjectHeader {
    std::array<double, 3> min{};
    std::array<double, 3> extent{};
    std::array<double, kObjWidth> mean{};
    std::array<double, kObjWidth> spread = [] {
        std::array<double, kObjWidth> ones{};
        ones.fill(1.0);
        return ones;
    }();
};

struct PatchSet {
    Modality modality = Modality::bits1d;
    /// k x p, one patch per row.
    Tensor patches;
    std::size_t replicas = 1;
    std::optional<ObjectHeader> object;

    std::size_t count() const { return patches.rows(); }
    std::size_t width() const { return patches.cols(); }
};

// ---------------------------------------------------------------------------
// 1D bits

PatchSet encode_bits(std::span<const std::uint8_t> bits, std::size_t replicas);

struct DecodedBits {
    std::vector<std::uint8_t> bits;
    /// |ones - zeros| / m per bit.
    std::vector<double> confidence;
};

/// Thresholds each row at 0.5 (inclusive) and majority-votes down the
/// columns; a tied vote yields 1.
DecodedBits decode_bits(const Tensor& patches);

/// Column layout of one carrier's bit row, derived from the carrier's
/// position alone: payload bit j is stored at column order[j], inverted when
/// flip[j] is set. Each carrier gets its own layout, so a column the head
/// reproduces poorly corrupts a different payload bit on every replica.
struct BitInterleave {
    std::vector<std::size_t> order;
    std::vector<std::uint8_t> flip;
};

BitInterleave bit_interleave(const std::array<float, 3>& position, std::size_t width);

/// Payload order to stored order, row r using keys[r]. Values v become
/// 1 - v where flipped, so the map applies to bits and probabilities alike.
Tensor interleave_rows(const Tensor& rows, std::span<const BitInterleave> keys);
/// Inverse of interleave_rows.
Tensor deinterleave_rows(const Tensor& rows, std::span<const BitInterleave> keys);

/// Most significant bit first; four bits per hex digit.
std::vector<std::uint8_t> bits_from_hex(std::string_view hex);
std::string hex_from_bits(std::span<const std::uint8_t> bits);

// ---------------------------------------------------------------------------
// 2D features

/// pe[pos, 2i] = sin(pos / 10000^(2i/d)), pe[pos, 2i+1] = cos(same).
Tensor canonical_posenc(std::size_t length, std::size_t dim);

/// Latent image feature, values stored [h][w][c] with c fastest.
struct Feature {
    std::size_t height = 4;
    std::size_t width = 4;
    std::size_t channels = 128;
    std::vector<double> values;

    std::size_t size() const { return height * width * channels; }
};

inline constexpr std::size_t kBaseTokens = 128;

/// Channel-major flattening: token c holds channel c's 4 x 4 map, h-major.
Tensor feature_tokens(const Feature& f);
Feature feature_from_tokens(const Tensor& tokens);
/// N(0, 1) feature of the canonical 4 x 4 x 128 shape.
Feature random_feature(nn::Rng& rng);
double feature_relative_mse(const Feature& restored, const Feature& truth);

/// File layout: u16 height, u16 width, u16 channels, u16 zero, then raw
/// little-endian float32 values in [h][w][c] order.
Feature read_feature_file(const std::string& path);
void write_feature_file(const Feature& f, const std::string& path);

struct CodecConfig {
    /// Patch count; must be 128 * 2^s for s in [0, 4].
    std::size_t tokens = 2048;
    /// Content amplitude relative to the position encoding.
    double gain = 1.0;
    std::vector<std::size_t> position_hidden = {64, 64};
    std::vector<std::size_t> refine_hidden = {64};
};

/// Result of nearest-neighbour slot assignment for a token subset.
struct SlotAssignment {
    /// slot_token[s] = row of the token assigned to slot s, or -1.
    std::vector<std::int64_t> slot_token;
    std::size_t assigned = 0;
};

/// Redundant token expansion and subset restoration for 2D features.
class FeatureCodec {
public:
    FeatureCodec() = default;
    FeatureCodec(const CodecConfig& config, nn::Rng& rng);

    const CodecConfig& config() const { return config_; }
    std::size_t stages() const { return up_weight_.size(); }
    std::size_t tokens() const { return config_.tokens; }
    const Tensor& posenc() const { return posenc_; }

    /// 128 x 16 base tokens -> tokens x 16 (differentiable).
    Tensor expand_tokens(const Tensor& base) const;
    /// Head patches are whitened tokens: zero mean and identity covariance
    /// under N(0, 1) features, from gain^2 I plus the slot covariance of the
    /// position encoding. Fixed at construction.
    Tensor to_patches(const Tensor& tokens) const;
    Tensor from_patches(const Tensor& patches) const;
    PatchSet expand(const Feature& f) const;

    /// Predicted position encoding per token (differentiable).
    Tensor predict_posenc(const Tensor& tokens) const;
    SlotAssignment assign(const Tensor& tokens) const;
    /// Rebuilds 128 x 16 base tokens from a token subset; differentiable in
    /// the tokens and the codec weights for a fixed assignment.
    Tensor restore_tokens(const Tensor& tokens, const SlotAssignment& assignment) const;
    /// Full inference path from extracted head patches. Throws
    /// ExtractionError on an empty subset.
    Feature restore(const Tensor& patches) const;

    void collect(const std::string& prefix, tensor::ParamList& out) const;

private:
    CodecConfig config_;
    Tensor posenc_;
    Tensor token_mean_, whiten_, unwhiten_;
    std::vector<Tensor> up_weight_, up_bias_;
    std::vector<Tensor> down_weight_, down_bias_;
    nn::Mlp position_;
    nn::Mlp refine_;
};

/// Stride-2, kernel-4, padding-1 transposed convolution: L x c -> 2L x c.
/// weight is c x 4c with tap-major column blocks.
Tensor upsample_conv(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Stride-2, kernel-4, padding-1 convolution: L x c -> L/2 x c.
/// weight is 4c x c with tap-major row blocks.
Tensor downsample_conv(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---------------------------------------------------------------------------
// 3D objects

PatchSet encode_object(const gscloud::GaussianCloud& object, std::size_t replicas);
/// Rows within 1e-4 in every coordinate are merged by averaging.
gscloud::GaussianCloud decode_object(const Tensor& patches, const ObjectHeader& header);
/// 14-wide row [unit-cube position, scale, rotation, opacity, dc], before
/// centring. Patches hold (row - mean) / spread.
std::array<double, kObjWidth> object_row(const gscloud::GaussianPoint& p, const ObjectHeader& h);
ObjectHeader object_header(const gscloud::GaussianCloud& object);
/// Random primitive (sphere shell, box surface or torus) with n points.
gscloud::GaussianCloud synth_object(std::size_t n, nn::Rng& rng);

}  // namespace xsgs::payload
