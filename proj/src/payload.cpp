// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/payload.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <numeric>

namespace xsgs::payload {

namespace t = xsgs::tensor;

std::string_view modality_name(Modality m) {
    switch (m) {
        case Modality::bits1d: return "bits1d";
        case Modality::feat2d: return "feat2d";
        case Modality::obj3d: return "obj3d";
    }
    return "unknown";
}

Modality parse_modality(std::string_view name) {
    for (auto m : kModalities) {
        if (modality_name(m) == name) return m;
    }
    throw ConfigError("unknown modality '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// 1D bits

PatchSet encode_bits(std::span<const std::uint8_t> bits, std::size_t replicas) {
    if (replicas == 0) {
        throw DomainError("encode_bits: replicas must be >= 1");
    }
    if (bits.empty()) {
        throw DomainError("encode_bits: empty bit string");
    }
    std::vector<double> row;
    row.reserve(bits.size());
    for (std::size_t j = 0; j < bits.size(); ++j) {
        if (bits[j] > 1) {
            throw DomainError("encode_bits: value " + std::to_string(bits[j]) + " at bit " +
                              std::to_string(j) + " is not binary");
        }
        row.push_back(bits[j]);
    }
    std::vector<double> data;
    data.reserve(row.size() * replicas);
    for (std::size_t r = 0; r < replicas; ++r) data.insert(data.end(), row.begin(), row.end());
    PatchSet set;
    set.modality = Modality::bits1d;
    set.patches = Tensor::from(replicas, bits.size(), std::move(data));
    set.replicas = replicas;
    return set;
}

DecodedBits decode_bits(const Tensor& patches) {
    if (!patches.defined() || patches.rows() == 0) {
        throw ExtractionError("decode_bits: no patches to vote over");
    }
    const std::size_t m = patches.rows();
    const std::size_t p = patches.cols();
    const auto v = patches.data();
    std::vector<std::size_t> ones(p, 0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) ones[j] += v[i * p + j] >= 0.5 ? 1 : 0;
    }
    DecodedBits out;
    out.bits.resize(p);
    out.confidence.resize(p);
    for (std::size_t j = 0; j < p; ++j) {
        const std::size_t zeros = m - ones[j];
        out.bits[j] = ones[j] >= zeros ? 1 : 0;
        const double margin = ones[j] > zeros ? double(ones[j] - zeros) : double(zeros - ones[j]);
        out.confidence[j] = margin / double(m);
    }
    return out;
}

namespace {

std::uint64_t splitmix(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

void check_keys(const Tensor& rows, std::span<const BitInterleave> keys, const char* what) {
    if (keys.size() != rows.rows()) {
        throw DimensionError(std::string(what) + ": " + std::to_string(keys.size()) + " keys for " +
                             std::to_string(rows.rows()) + " rows");
    }
    for (const auto& k : keys) {
        if (k.order.size() != rows.cols() || k.flip.size() != rows.cols()) {
            throw DimensionError(std::string(what) + ": key width differs from row width " +
                                 std::to_string(rows.cols()));
        }
    }
}

}  // namespace

BitInterleave bit_interleave(const std::array<float, 3>& position, std::size_t width) {
    std::uint64_t state = 0x6a09e667f3bcc909ull;
    for (float f : position) {
        std::uint32_t raw = 0;
        std::memcpy(&raw, &f, sizeof raw);
        state ^= raw;
        splitmix(state);
    }
    BitInterleave key;
    key.order.resize(width);
    std::iota(key.order.begin(), key.order.end(), std::size_t{0});
    for (std::size_t i = width; i > 1; --i) {
        const auto j = std::size_t((static_cast<unsigned __int128>(splitmix(state)) * i) >> 64);
        std::swap(key.order[i - 1], key.order[j]);
    }
    key.flip.resize(width);
    std::uint64_t word = 0;
    for (std::size_t j = 0; j < width; ++j) {
        if (j % 64 == 0) word = splitmix(state);
        key.flip[j] = std::uint8_t((word >> (j % 64)) & 1u);
    }
    return key;
}

Tensor interleave_rows(const Tensor& rows, std::span<const BitInterleave> keys) {
    check_keys(rows, keys, "interleave_rows");
    const std::size_t w = rows.cols();
    const auto v = rows.data();
    std::vector<double> out(v.size());
    for (std::size_t r = 0; r < keys.size(); ++r) {
        for (std::size_t j = 0; j < w; ++j) {
            const double x = v[r * w + j];
            out[r * w + keys[r].order[j]] = keys[r].flip[j] ? 1.0 - x : x;
        }
    }
    return Tensor::from(rows.rows(), w, std::move(out));
}

Tensor deinterleave_rows(const Tensor& rows, std::span<const BitInterleave> keys) {
    check_keys(rows, keys, "deinterleave_rows");
    const std::size_t w = rows.cols();
    const auto v = rows.data();
    std::vector<double> out(v.size());
    for (std::size_t r = 0; r < keys.size(); ++r) {
        for (std::size_t j = 0; j < w; ++j) {
            const double x = v[r * w + keys[r].order[j]];
            out[r * w + j] = keys[r].flip[j] ? 1.0 - x : x;
        }
    }
    return Tensor::from(rows.rows(), w, std::move(out));
}

std::vector<std::uint8_t> bits_from_hex(std::string_view hex) {
    if (hex.starts_with("0x") || hex.starts_with("0X")) hex.remove_prefix(2);
    if (hex.empty()) {
        throw DomainError("empty hex payload");
    }
    std::vector<std::uint8_t> bits;
    bits.reserve(hex.size() * 4);
    for (char ch : hex) {
        int v = -1;
        if (ch >= '0' && ch <= '9') v = ch - '0';
        if (ch >= 'a' && ch <= 'f') v = ch - 'a' + 10;
        if (ch >= 'A' && ch <= 'F') v = ch - 'A' + 10;
        if (v < 0) {
            throw DomainError(std::string("invalid hex digit '") + ch + "'");
        }
        for (int b = 3; b >= 0; --b) bits.push_back(static_cast<std::uint8_t>((v >> b) & 1));
    }
    return bits;
}

std::string hex_from_bits(std::span<const std::uint8_t> bits) {
    static constexpr char kDigits[] = "0123456789abcdef";
    if (bits.size() % 4 != 0) {
        throw DomainError("hex_from_bits: bit count not a multiple of 4");
    }
    std::string out;
    for (std::size_t i = 0; i < bits.size(); i += 4) {
        int v = 0;
        for (std::size_t b = 0; b < 4; ++b) v = (v << 1) | (bits[i + b] & 1);
        out.push_back(kDigits[v]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// 2D features

Tensor canonical_posenc(std::size_t length, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) {
        throw DimensionError("canonical_posenc: dimension must be even and positive");
    }
    std::vector<double> pe(length * dim);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < dim / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * double(i) / double(dim));
            pe[pos * dim + 2 * i] = std::sin(double(pos) * freq);
            pe[pos * dim + 2 * i + 1] = std::cos(double(pos) * freq);
        }
    }
    return Tensor::from(length, dim, std::move(pe));
}

namespace {

void check_canonical_shape(const Feature& f) {
    if (f.height != 4 || f.width != 4 || f.channels != kBaseTokens || f.values.size() != f.size()) {
        throw DomainError("feature must be 4x4x128 with 2048 values, got " +
                          std::to_string(f.height) + "x" + std::to_string(f.width) + "x" +
                          std::to_string(f.channels) + " with " + std::to_string(f.values.size()));
    }
}

}  // namespace

Tensor feature_tokens(const Feature& f) {
    check_canonical_shape(f);
    const std::size_t hw = f.height * f.width;
    std::vector<double> tokens(f.channels * hw);
    for (std::size_t h = 0; h < f.height; ++h) {
        for (std::size_t w = 0; w < f.width; ++w) {
            for (std::size_t c = 0; c < f.channels; ++c) {
                tokens[c * hw + h * f.width + w] = f.values[(h * f.width + w) * f.channels + c];
            }
        }
    }
    return Tensor::from(f.channels, hw, std::move(tokens));
}

Feature feature_from_tokens(const Tensor& tokens) {
    if (tokens.rows() != kBaseTokens || tokens.cols() != kFeatWidth) {
        throw DomainError("feature_from_tokens: expected 128x16 tokens, got " + tokens.shape_str());
    }
    Feature f;
    f.values.resize(f.size());
    const auto v = tokens.data();
    for (std::size_t h = 0; h < f.height; ++h) {
        for (std::size_t w = 0; w < f.width; ++w) {
            for (std::size_t c = 0; c < f.channels; ++c) {
                f.values[(h * f.width + w) * f.channels + c] = v[c * kFeatWidth + h * f.width + w];
            }
        }
    }
    return f;
}

Feature random_feature(nn::Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Feature f;
    f.values.resize(f.size());
    for (auto& x : f.values) x = dist(rng);
    return f;
}

double feature_relative_mse(const Feature& restored, const Feature& truth) {
    if (restored.values.size() != truth.values.size() || truth.values.empty()) {
        throw DomainError("feature_relative_mse: size mismatch");
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.values.size(); ++i) {
        const double d = restored.values[i] - truth.values[i];
        num += d * d;
        den += truth.values[i] * truth.values[i];
    }
    if (den == 0.0) {
        return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return num / den;
}

Feature read_feature_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open feature file '" + path + "'");
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 8) {
        throw LengthError(path + ": feature header needs 8 bytes");
    }
    std::uint16_t header[4];
    std::memcpy(header, bytes.data(), 8);
    Feature f;
    f.height = header[0];
    f.width = header[1];
    f.channels = header[2];
    const std::size_t need = 8 + f.size() * sizeof(float);
    if (bytes.size() != need) {
        throw LengthError(path + ": expected " + std::to_string(need) + " bytes, found " +
                          std::to_string(bytes.size()));
    }
    std::vector<float> raw(f.size());
    std::memcpy(raw.data(), bytes.data() + 8, raw.size() * sizeof(float));
    f.values.assign(raw.begin(), raw.end());
    for (double v : f.values) {
        if (!std::isfinite(v)) {
            throw ParseError(path + ": non-finite feature value");
        }
    }
    return f;
}

void write_feature_file(const Feature& f, const std::string& path) {
    if (f.values.size() != f.size()) {
        throw DomainError("write_feature_file: value count does not match shape");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw SerializationError("cannot write feature file '" + path + "'");
    }
    const std::uint16_t header[4] = {static_cast<std::uint16_t>(f.height),
                                     static_cast<std::uint16_t>(f.width),
                                     static_cast<std::uint16_t>(f.channels), 0};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    std::vector<float> raw(f.values.begin(), f.values.end());
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size() * sizeof(float)));
}

Tensor upsample_conv(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const std::size_t len = x.rows();
    const std::size_t c = x.cols();
    if (weight.rows() != c || weight.cols() != 4 * c) {
        throw DimensionError("upsample_conv: weight " + weight.shape_str() + " for input " +
                             x.shape_str());
    }
    const Tensor taps = t::reshape(t::matmul(x, weight), 4 * len, c);
    std::vector<std::int64_t> index(4 * len);
    for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t k = 0; k < 4; ++k) {
            const std::int64_t j = std::int64_t(2 * i + k) - 1;
            index[i * 4 + k] = (j < 0 || j >= std::int64_t(2 * len)) ? -1 : j;
        }
    }
    return t::add_row(t::scatter_add_rows(taps, index, 2 * len), bias);
}

Tensor downsample_conv(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const std::size_t len = x.rows();
    const std::size_t c = x.cols();
    if (len % 2 != 0 || weight.rows() != 4 * c || weight.cols() != c) {
        throw DimensionError("downsample_conv: weight " + weight.shape_str() + " for input " +
                             x.shape_str());
    }
    const std::size_t out = len / 2;
    std::vector<std::int64_t> index(4 * out);
    for (std::size_t i = 0; i < out; ++i) {
        for (std::size_t k = 0; k < 4; ++k) {
            const std::int64_t j = std::int64_t(2 * i + k) - 1;
            index[i * 4 + k] = (j < 0 || j >= std::int64_t(len)) ? -1 : j;
        }
    }
    const Tensor windows = t::reshape(t::gather_rows(x, index), out, 4 * c);
    return t::add_row(t::matmul(windows, weight), bias);
}

FeatureCodec::FeatureCodec(const CodecConfig& config, nn::Rng& rng) : config_(config) {
    std::size_t stages = 0;
    std::size_t len = kBaseTokens;
    while (len < config.tokens && stages < 4) {
        len *= 2;
        ++stages;
    }
    if (len != config.tokens) {
        throw ConfigError("feature codec: token count " + std::to_string(config.tokens) +
                          " is not 128 * 2^s with s <= 4");
    }
    if (!(config.gain > 0.0) || !std::isfinite(config.gain)) {
        throw ConfigError("feature codec: gain must be positive");
    }
    posenc_ = canonical_posenc(config.tokens, kFeatWidth);
    {
        using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        const auto pv = posenc_.data();
        const Eigen::Map<const Mat> pe(pv.data(), config.tokens, kFeatWidth);
        const Eigen::RowVectorXd mean = pe.colwise().mean();
        const Mat centred = pe.rowwise() - mean;
        Mat cov = centred.transpose() * centred / double(config.tokens);
        cov.diagonal().array() += config.gain * config.gain;
        const Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
        const Eigen::VectorXd root = eig.eigenvalues().cwiseSqrt();
        const Mat w = eig.eigenvectors() * root.cwiseInverse().asDiagonal();
        const Mat u = root.asDiagonal() * eig.eigenvectors().transpose();
        auto to_tensor = [](const auto& m) {
            return Tensor::from(m.rows(), m.cols(), std::vector<double>(m.data(), m.data() + m.size()));
        };
        token_mean_ = to_tensor(Mat(mean));
        whiten_ = to_tensor(w);
        unwhiten_ = to_tensor(u);
    }
    const std::size_t c = kFeatWidth;
    // Taps 1 and 2 start as nearest-neighbour duplication and pair averaging,
    // so an untrained codec round-trips a full token set exactly.
    for (std::size_t s = 0; s < stages; ++s) {
        Tensor up = Tensor::zeros(c, 4 * c, true);
        Tensor down = Tensor::zeros(4 * c, c, true);
        auto uw = up.mutable_data();
        auto dw = down.mutable_data();
        for (std::size_t k = 1; k <= 2; ++k) {
            for (std::size_t i = 0; i < c; ++i) {
                uw[i * 4 * c + k * c + i] = 1.0;
                dw[(k * c + i) * c + i] = 0.5;
            }
        }
        up_weight_.push_back(up);
        up_bias_.push_back(Tensor::zeros(1, c, true));
        down_weight_.push_back(down);
        down_bias_.push_back(Tensor::zeros(1, c, true));
    }
    std::vector<std::size_t> widths = {c};
    widths.insert(widths.end(), config.position_hidden.begin(), config.position_hidden.end());
    widths.push_back(c);
    position_ = nn::Mlp(widths, rng, true);
    widths = {c};
    widths.insert(widths.end(), config.refine_hidden.begin(), config.refine_hidden.end());
    widths.push_back(c);
    refine_ = nn::Mlp(widths, rng, true);
}

Tensor FeatureCodec::expand_tokens(const Tensor& base) const {
    if (base.rows() != kBaseTokens || base.cols() != kFeatWidth) {
        throw DomainError("expand: expected 128x16 base tokens, got " + base.shape_str());
    }
    Tensor h = base;
    for (std::size_t s = 0; s < stages(); ++s) h = upsample_conv(h, up_weight_[s], up_bias_[s]);
    return t::add(t::scale(h, config_.gain), posenc_);
}

Tensor FeatureCodec::to_patches(const Tensor& tokens) const {
    if (tokens.cols() != kFeatWidth) {
        throw DimensionError("to_patches: token width " + std::to_string(tokens.cols()));
    }
    return t::matmul(t::add_row(tokens, t::scale(token_mean_, -1.0)), whiten_);
}

Tensor FeatureCodec::from_patches(const Tensor& patches) const {
    if (patches.cols() != kFeatWidth) {
        throw DimensionError("from_patches: patch width " + std::to_string(patches.cols()));
    }
    return t::add_row(t::matmul(patches, unwhiten_), token_mean_);
}

PatchSet FeatureCodec::expand(const Feature& f) const {
    tensor::NoGradGuard guard;
    PatchSet set;
    set.modality = Modality::feat2d;
    set.patches = to_patches(expand_tokens(feature_tokens(f))).detach();
    return set;
}

Tensor FeatureCodec::predict_posenc(const Tensor& tokens) const {
    if (tokens.cols() != kFeatWidth) {
        throw DimensionError("predict_posenc: token width " + std::to_string(tokens.cols()));
    }
    return t::add(tokens, position_(tokens));
}

SlotAssignment FeatureCodec::assign(const Tensor& tokens) const {
    Tensor pred;
    {
        tensor::NoGradGuard guard;
        pred = predict_posenc(tokens);
    }
    const std::size_t m = tokens.rows();
    const std::size_t len = config_.tokens;
    const std::size_t c = kFeatWidth;
    const auto pv = pred.data();
    const auto pe = posenc_.data();
    const auto tv = tokens.data();

    SlotAssignment out;
    out.slot_token.assign(len, -1);
    std::vector<double> best_dist(len, std::numeric_limits<double>::infinity());
    auto token_less = [&](std::size_t a, std::size_t b) {
        return std::lexicographical_compare(tv.begin() + a * c, tv.begin() + (a + 1) * c,
                                            tv.begin() + b * c, tv.begin() + (b + 1) * c);
    };
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t slot = 0;
        double dist = std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < len; ++s) {
            double d = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                const double e = pv[i * c + j] - pe[s * c + j];
                d += e * e;
            }
            if (d < dist) {
                dist = d;
                slot = s;
            }
        }
        const std::int64_t holder = out.slot_token[slot];
        // Collisions keep the closer prediction; exact ties fall back to the
        // token values so the outcome does not depend on input order.
        const bool wins = holder < 0 || dist < best_dist[slot] ||
                          (dist == best_dist[slot] && token_less(i, std::size_t(holder)));
        if (wins) {
            out.slot_token[slot] = std::int64_t(i);
            best_dist[slot] = dist;
        }
    }
    out.assigned = std::size_t(
        std::count_if(out.slot_token.begin(), out.slot_token.end(), [](auto v) { return v >= 0; }));
    return out;
}

Tensor FeatureCodec::restore_tokens(const Tensor& tokens, const SlotAssignment& assignment) const {
    const std::size_t len = config_.tokens;
    if (assignment.slot_token.size() != len || assignment.assigned == 0) {
        throw ExtractionError("restore: no token could be assigned to a slot");
    }
    std::vector<double> pe(len * kFeatWidth, 0.0);
    const auto canon = posenc_.data();
    for (std::size_t s = 0; s < len; ++s) {
        if (assignment.slot_token[s] < 0) continue;
        std::copy_n(canon.begin() + s * kFeatWidth, kFeatWidth, pe.begin() + s * kFeatWidth);
    }
    const Tensor placed = t::gather_rows(tokens, assignment.slot_token);
    // Lost duplicates are compensated only where downsampling averages them.
    const double fill = stages() == 0 ? 1.0 : double(len) / double(assignment.assigned);
    const double rescale = fill / config_.gain;
    Tensor h = t::scale(t::sub(placed, Tensor::from(len, kFeatWidth, std::move(pe))), rescale);
    for (std::size_t s = stages(); s-- > 0;) h = downsample_conv(h, down_weight_[s], down_bias_[s]);
    return t::add(h, refine_(h));
}

Feature FeatureCodec::restore(const Tensor& patches) const {
    if (!patches.defined() || patches.rows() == 0) {
        throw ExtractionError("restore_feature: empty token subset");
    }
    tensor::NoGradGuard guard;
    const Tensor tokens = from_patches(patches);
    return feature_from_tokens(restore_tokens(tokens, assign(tokens)));
}

void FeatureCodec::collect(const std::string& prefix, tensor::ParamList& out) const {
    for (std::size_t s = 0; s < stages(); ++s) {
        const std::string tag = prefix + ".up" + std::to_string(s);
        out.push_back({tag + ".weight", up_weight_[s]});
        out.push_back({tag + ".bias", up_bias_[s]});
    }
    for (std::size_t s = 0; s < stages(); ++s) {
        const std::string tag = prefix + ".down" + std::to_string(s);
        out.push_back({tag + ".weight", down_weight_[s]});
        out.push_back({tag + ".bias", down_bias_[s]});
    }
    position_.collect(prefix + ".position", out);
    refine_.collect(prefix + ".refine", out);
}

// ---------------------------------------------------------------------------
// 3D objects

ObjectHeader object_header(const gscloud::GaussianCloud& object) {
    if (object.empty()) {
        throw EmptyCloudError("encode_object: empty object");
    }
    ObjectHeader h;
    for (std::size_t a = 0; a < 3; ++a) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (const auto& p : object.points) {
            lo = std::min(lo, double(p.position[a]));
            hi = std::max(hi, double(p.position[a]));
        }
        h.min[a] = lo;
        h.extent[a] = hi - lo;
    }
    if (object.size() == 1) {
        h.extent = {1.0, 1.0, 1.0};
    } else {
        for (std::size_t a = 0; a < 3; ++a) {
            if (!(h.extent[a] > 0.0) || !std::isfinite(h.extent[a])) {
                throw NormalizationError("encode_object: zero extent along axis " + std::to_string(a));
            }
        }
    }
    // Population mean and standard deviation per column; constant columns
    // keep a unit spread.
    const double n = double(object.size());
    std::array<double, kObjWidth> sq{};
    for (const auto& p : object.points) {
        const auto row = object_row(p, h);
        for (std::size_t j = 0; j < kObjWidth; ++j) h.mean[j] += row[j];
    }
    for (auto& m : h.mean) m /= n;
    for (const auto& p : object.points) {
        const auto row = object_row(p, h);
        for (std::size_t j = 0; j < kObjWidth; ++j) sq[j] += (row[j] - h.mean[j]) * (row[j] - h.mean[j]);
    }
    for (std::size_t j = 0; j < kObjWidth; ++j) {
        const double sd = std::sqrt(sq[j] / n);
        h.spread[j] = sd > 1e-9 ? sd : 1.0;
    }
    return h;
}

std::array<double, kObjWidth> object_row(const gscloud::GaussianPoint& p, const ObjectHeader& h) {
    std::array<double, kObjWidth> row{};
    std::size_t k = 0;
    for (std::size_t a = 0; a < 3; ++a) row[k++] = (double(p.position[a]) - h.min[a]) / h.extent[a];
    for (float v : p.scale) row[k++] = v;
    for (float v : p.rotation) row[k++] = v;
    row[k++] = p.opacity;
    for (float v : p.sh_dc) row[k++] = v;
    return row;
}

PatchSet encode_object(const gscloud::GaussianCloud& object, std::size_t replicas) {
    if (replicas == 0) {
        throw DomainError("encode_object: replicas must be >= 1");
    }
    const ObjectHeader header = object_header(object);
    std::vector<double> once;
    once.reserve(object.size() * kObjWidth);
    for (const auto& p : object.points) {
        const auto row = object_row(p, header);
        for (std::size_t j = 0; j < kObjWidth; ++j) once.push_back((row[j] - header.mean[j]) / header.spread[j]);
    }
    std::vector<double> data;
    data.reserve(once.size() * replicas);
    for (std::size_t r = 0; r < replicas; ++r) data.insert(data.end(), once.begin(), once.end());
    PatchSet set;
    set.modality = Modality::obj3d;
    set.patches = Tensor::from(object.size() * replicas, kObjWidth, std::move(data));
    set.replicas = replicas;
    set.object = header;
    return set;
}

gscloud::GaussianCloud decode_object(const Tensor& patches, const ObjectHeader& header) {
    if (!patches.defined() || patches.rows() == 0) {
        throw ExtractionError("decode_object: no patches");
    }
    if (patches.cols() != kObjWidth) {
        throw DimensionError("decode_object: patch width " + std::to_string(patches.cols()));
    }
    constexpr double kTol = 1e-4;
    const std::size_t k = patches.rows();
    const auto v = patches.data();
    auto row = [&](std::size_t i) { return v.subspan(i * kObjWidth, kObjWidth); };
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto ra = row(a), rb = row(b);
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    });

    // Greedy clustering in sorted order against each cluster's first member.
    struct Cluster {
        std::size_t first;
        std::array<double, kObjWidth> sum{};
        std::size_t count = 0;
    };
    std::vector<Cluster> clusters;
    std::size_t window = 0;
    for (std::size_t idx : order) {
        const auto r = row(idx);
        while (window < clusters.size() && r[0] - row(clusters[window].first)[0] > kTol) ++window;
        Cluster* home = nullptr;
        for (std::size_t c = window; c < clusters.size(); ++c) {
            const auto rep = row(clusters[c].first);
            bool close = true;
            for (std::size_t j = 0; j < kObjWidth && close; ++j) close = std::abs(r[j] - rep[j]) <= kTol;
            if (close) {
                home = &clusters[c];
                break;
            }
        }
        if (home == nullptr) {
            clusters.push_back({idx, {}, 0});
            home = &clusters.back();
        }
        for (std::size_t j = 0; j < kObjWidth; ++j) home->sum[j] += r[j];
        ++home->count;
    }

    gscloud::GaussianCloud out;
    out.points.reserve(clusters.size());
    for (const auto& c : clusters) {
        std::array<double, kObjWidth> m{};
        for (std::size_t j = 0; j < kObjWidth; ++j) {
            m[j] = c.sum[j] / double(c.count) * header.spread[j] + header.mean[j];
        }
        gscloud::GaussianPoint p;
        for (std::size_t a = 0; a < 3; ++a) {
            p.position[a] = static_cast<float>(m[a] * header.extent[a] + header.min[a]);
        }
        for (std::size_t a = 0; a < 3; ++a) p.scale[a] = static_cast<float>(m[3 + a]);
        for (std::size_t a = 0; a < 4; ++a) p.rotation[a] = static_cast<float>(m[6 + a]);
        p.opacity = static_cast<float>(m[10]);
        for (std::size_t a = 0; a < 3; ++a) p.sh_dc[a] = static_cast<float>(m[11 + a]);
        out.points.push_back(p);
    }
    return out;
}

gscloud::GaussianCloud synth_object(std::size_t n, nn::Rng& rng) {
    if (n == 0) {
        throw EmptyCloudError("synth_object: n must be >= 1");
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int shape = static_cast<int>(unit(rng) * 3.0) % 3;
    const double size = 0.2 + 0.3 * unit(rng);
    std::array<double, 3> center{};
    for (auto& c : center) c = unit(rng) - 0.5;
    std::array<double, 3> tint{};
    for (auto& c : tint) c = 0.3 * normal(rng);
    const double two_pi = 2.0 * std::numbers::pi;

    gscloud::GaussianCloud obj;
    obj.points.resize(n);
    for (auto& p : obj.points) {
        std::array<double, 3> q{};
        if (shape == 0) {
            double norm = 0.0;
            do {
                for (auto& x : q) x = normal(rng);
                norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
            } while (norm < 1e-9);
            for (auto& x : q) x = x / norm * size;
        } else if (shape == 1) {
            for (auto& x : q) x = (unit(rng) * 2.0 - 1.0) * size;
            const std::size_t face = static_cast<std::size_t>(unit(rng) * 3.0) % 3;
            q[face] = unit(rng) < 0.5 ? -size : size;
        } else {
            const double u = unit(rng) * two_pi, w = unit(rng) * two_pi;
            const double r = 0.3 * size;
            q = {(size + r * std::cos(w)) * std::cos(u), (size + r * std::cos(w)) * std::sin(u),
                 r * std::sin(w)};
        }
        for (std::size_t a = 0; a < 3; ++a) p.position[a] = static_cast<float>(center[a] + q[a]);
        for (auto& s : p.scale) s = static_cast<float>(-4.5 + 0.3 * normal(rng));
        double qn = 0.0;
        do {
            qn = 0.0;
            for (auto& r : p.rotation) {
                r = static_cast<float>(normal(rng));
                qn += double(r) * r;
            }
        } while (qn < 1e-12);
        for (auto& r : p.rotation) r = static_cast<float>(r / std::sqrt(qn));
        p.opacity = static_cast<float>(2.0 + normal(rng));
        for (std::size_t a = 0; a < 3; ++a) p.sh_dc[a] = static_cast<float>(tint[a] + 0.1 * normal(rng));
    }
    return obj;
}

}  // namespace xsgs::payload
