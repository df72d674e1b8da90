// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "xsgs/payload.hpp"

namespace p = xsgs::payload;
namespace t = xsgs::tensor;
using t::Tensor;

namespace {

std::vector<std::uint8_t> random_bits(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::uint8_t> b(n);
    for (auto& x : b) x = std::uint8_t(rng() & 1u);
    return b;
}

Tensor rows_of(const Tensor& a, const std::vector<std::size_t>& idx) {
    std::vector<std::int64_t> i(idx.begin(), idx.end());
    return t::gather_rows(a, i);
}

// Direct loops for the stride-2, kernel-4, padding-1 convolution pair.
std::vector<double> naive_up(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t L = x.rows(), c = x.cols();
    std::vector<double> out(2 * L * c, 0.0);
    for (std::size_t o = 0; o < 2 * L; ++o)
        for (std::size_t j = 0; j < c; ++j) out[o * c + j] = b.at(0, j);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t k = 0; k < 4; ++k) {
            const long o = 2 * long(i) + long(k) - 1;
            if (o < 0 || o >= long(2 * L)) continue;
            for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t co = 0; co < c; ++co)
                    out[std::size_t(o) * c + co] += x.at(i, ci) * w.at(ci, k * c + co);
        }
    return out;
}

std::vector<double> naive_down(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t L = x.rows(), c = x.cols();
    std::vector<double> out(L / 2 * c, 0.0);
    for (std::size_t o = 0; o < L / 2; ++o)
        for (std::size_t co = 0; co < c; ++co) {
            double s = b.at(0, co);
            for (std::size_t k = 0; k < 4; ++k) {
                const long i = 2 * long(o) + long(k) - 1;
                if (i < 0 || i >= long(L)) continue;
                for (std::size_t ci = 0; ci < c; ++ci) s += x.at(std::size_t(i), ci) * w.at(k * c + ci, co);
            }
            out[o * c + co] = s;
        }
    return out;
}

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, bool grad = false) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(r * c);
    for (auto& x : v) x = nd(rng);
    return Tensor::from(r, c, v, grad);
}

xsgs::gscloud::GaussianCloud small_object(std::size_t n, std::uint64_t seed) {
    xsgs::nn::Rng rng(seed);
    return p::synth_object(n, rng);
}

}  // namespace

// ---------------------------------------------------------------------------
// Bits

TEST(Bits, AllZeroWordGivesZeroReplicas) {
    const auto set = p::encode_bits(std::vector<std::uint8_t>(48, 0), 3);
    ASSERT_EQ(set.count(), 3u);
    ASSERT_EQ(set.width(), 48u);
    for (double v : set.patches.data()) EXPECT_EQ(v, 0.0);
}

TEST(Bits, ShapeForPaperScaleReplication) {
    const auto set = p::encode_bits(random_bits(48, 1), 1024);
    EXPECT_EQ(set.count(), 1024u);
    EXPECT_EQ(set.width(), 48u);
    EXPECT_EQ(set.replicas, 1024u);
    EXPECT_EQ(set.modality, p::Modality::bits1d);
}

TEST(Bits, ReplicasAreIdenticalAndRoundTrip) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto bits = random_bits(48, seed);
        const auto set = p::encode_bits(bits, 1 + seed % 7);
        for (std::size_t r = 1; r < set.count(); ++r)
            for (std::size_t j = 0; j < 48; ++j) EXPECT_EQ(set.patches.at(r, j), set.patches.at(0, j));
        EXPECT_EQ(p::decode_bits(set.patches).bits, bits);
    }
}

TEST(Bits, EncodeRejectsBadInput) {
    EXPECT_THROW(p::encode_bits(random_bits(8, 1), 0), xsgs::DomainError);
    EXPECT_THROW(p::encode_bits(std::vector<std::uint8_t>{}, 1), xsgs::DomainError);
    EXPECT_THROW(p::encode_bits(std::vector<std::uint8_t>{0, 2}, 1), xsgs::DomainError);
    EXPECT_THROW(p::decode_bits(Tensor::zeros(0, 4)), xsgs::ExtractionError);
}

TEST(Bits, SinglePatchIsThresholded) {
    const Tensor patch = Tensor::from(1, 4, {0.2, 0.5, 0.9, 0.49});
    EXPECT_EQ(p::decode_bits(patch).bits, (std::vector<std::uint8_t>{0, 1, 1, 0}));
}

TEST(Bits, MajorityRestoresAFlippedBit) {
    const auto bits = random_bits(48, 3);
    auto set = p::encode_bits(bits, 3);
    auto v = set.patches.mutable_data();
    v[1 * 48 + 5] = 1.0 - v[1 * 48 + 5];
    const auto d = p::decode_bits(set.patches);
    EXPECT_EQ(d.bits, bits);
    EXPECT_NEAR(d.confidence[5], 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(d.confidence[6], 1.0, 1e-12);
}

TEST(Bits, TieResolvesToOne) {
    const Tensor patches = Tensor::from(2, 2, {1.0, 0.0, 0.0, 0.0});
    const auto d = p::decode_bits(patches);
    EXPECT_EQ(d.bits, (std::vector<std::uint8_t>{1, 0}));
    EXPECT_EQ(d.confidence[0], 0.0);
}

// Every 8-bit word, every r <= 4, every replica subset: clean replicas vote
// back the word.
TEST(Bits, ExhaustiveSubsetsOfCleanReplicas) {
    for (unsigned w = 0; w < 256; ++w) {
        std::vector<std::uint8_t> bits(8);
        for (int i = 0; i < 8; ++i) bits[i] = (w >> (7 - i)) & 1u;
        for (std::size_t r = 1; r <= 4; ++r) {
            const auto set = p::encode_bits(bits, r);
            for (unsigned subset = 1; subset < (1u << r); ++subset) {
                std::vector<std::size_t> keep;
                for (std::size_t j = 0; j < r; ++j)
                    if (subset & (1u << j)) keep.push_back(j);
                ASSERT_EQ(p::decode_bits(rows_of(set.patches, keep)).bits, bits)
                    << "word " << w << " r " << r << " subset " << subset;
            }
        }
    }
}

// Every 8-bit word, every r <= 4 and every per-bit vote pattern against a
// counting oracle.
TEST(Bits, ExhaustiveVotePatternsMatchCountingOracle) {
    for (unsigned w = 0; w < 256; ++w) {
        for (std::size_t r = 1; r <= 4; ++r) {
            const unsigned patterns = 1u << r;
            for (unsigned q = 0; q < patterns; ++q) {
                std::vector<double> v(r * 8);
                std::vector<std::uint8_t> want(8);
                for (std::size_t i = 0; i < 8; ++i) {
                    const unsigned flips = (q + unsigned(i)) % patterns;
                    const unsigned bit = (w >> (7 - i)) & 1u;
                    std::size_t ones = 0;
                    for (std::size_t j = 0; j < r; ++j) {
                        const unsigned b = bit ^ ((flips >> j) & 1u);
                        v[j * 8 + i] = b ? 0.75 : 0.25;
                        ones += b;
                    }
                    want[i] = 2 * ones >= r ? 1 : 0;
                }
                ASSERT_EQ(p::decode_bits(Tensor::from(r, 8, v)).bits, want);
            }
        }
    }
}

TEST(Bits, NineReplicaVoteBeatsTheBinomialTail) {
    // Per-bit error after voting 9 replicas with flip rate 0.2.
    double tail = 0.0;
    for (int i = 5; i <= 9; ++i) {
        const double c = std::tgamma(10.0) / (std::tgamma(double(i) + 1) * std::tgamma(double(10 - i)));
        tail += c * std::pow(0.2, i) * std::pow(0.8, 9 - i);
    }
    std::mt19937_64 rng(17);
    std::bernoulli_distribution flip(0.2);
    const std::size_t trials = 4000;
    std::size_t errors = 0, total = 0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const auto bits = random_bits(48, trial + 100);
        auto set = p::encode_bits(bits, 9);
        for (auto& v : set.patches.mutable_data())
            if (flip(rng)) v = 1.0 - v;
        const auto d = p::decode_bits(set.patches);
        for (std::size_t i = 0; i < 48; ++i) errors += d.bits[i] != bits[i];
        total += 48;
    }
    const double rate = double(errors) / double(total);
    const double sd = std::sqrt(tail * (1 - tail) / double(total));
    EXPECT_NEAR(rate, tail, 5 * sd);
    EXPECT_LT(rate, 0.2);
}

TEST(Interleave, KeysArePermutationsFixedByPosition) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<float> u(-5.0f, 5.0f);
    std::size_t differing = 0;
    p::BitInterleave previous;
    for (int trial = 0; trial < 200; ++trial) {
        const std::array<float, 3> pos = {u(rng), u(rng), u(rng)};
        const auto key = p::bit_interleave(pos, 48);
        auto sorted = key.order;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::size_t> identity(48);
        std::iota(identity.begin(), identity.end(), std::size_t{0});
        ASSERT_EQ(sorted, identity);
        const auto again = p::bit_interleave(pos, 48);
        EXPECT_EQ(again.order, key.order);
        EXPECT_EQ(again.flip, key.flip);
        differing += trial > 0 && key.order != previous.order;
        previous = key;
    }
    EXPECT_EQ(differing, 199u);
    // Any change in the position bits moves the key.
    const std::array<float, 3> a = {1.0f, 2.0f, 3.0f};
    const std::array<float, 3> b = {1.0f, 2.0f, std::nextafter(3.0f, 4.0f)};
    EXPECT_NE(p::bit_interleave(a, 48).order, p::bit_interleave(b, 48).order);
}

TEST(Interleave, FlipsAreBalanced) {
    std::size_t ones = 0, total = 0;
    for (int i = 0; i < 500; ++i) {
        const auto key = p::bit_interleave({float(i), 0.5f, -float(i)}, 48);
        for (auto f : key.flip) ones += f;
        total += 48;
    }
    const double rate = double(ones) / double(total);
    EXPECT_NEAR(rate, 0.5, 0.02);  // 24000 fair coins: sd 0.0032
}

TEST(Interleave, RoundTripAndVote) {
    const std::vector<std::uint8_t> bits = p::bits_from_hex("c0ffee123456");
    const auto set = p::encode_bits(bits, 9);
    std::vector<p::BitInterleave> keys;
    for (int r = 0; r < 9; ++r) keys.push_back(p::bit_interleave({float(r), 1.0f, 2.0f}, 48));
    const Tensor stored = p::interleave_rows(set.patches, keys);
    // Stored rows differ per carrier but hold the same number of ones after unflipping.
    EXPECT_NE(std::vector<double>(stored.data().begin(), stored.data().begin() + 48),
              std::vector<double>(stored.data().begin() + 48, stored.data().begin() + 96));
    for (std::size_t r = 0; r < 9; ++r) {
        for (std::size_t j = 0; j < 48; ++j) {
            const double want = keys[r].flip[j] ? 1.0 - bits[j] : double(bits[j]);
            ASSERT_EQ(stored.at(r, keys[r].order[j]), want);
        }
    }
    const Tensor back = p::deinterleave_rows(stored, keys);
    for (std::size_t i = 0; i < back.size(); ++i) ASSERT_EQ(back.data()[i], set.patches.data()[i]);
    EXPECT_EQ(p::decode_bits(back).bits, bits);
    // Probabilities go through the same map: 0.8 stored becomes 0.2 where flipped.
    const Tensor probs = Tensor::from(1, 48, std::vector<double>(48, 0.8));
    const Tensor unflipped = p::deinterleave_rows(probs, std::span(keys).first(1));
    for (std::size_t j = 0; j < 48; ++j) EXPECT_DOUBLE_EQ(unflipped.at(0, j), keys[0].flip[j] ? 0.2 : 0.8);
}

TEST(Interleave, KeyCountMustMatchRows) {
    const auto set = p::encode_bits(p::bits_from_hex("ff"), 3);
    std::vector<p::BitInterleave> keys(2, p::bit_interleave({0, 0, 0}, 8));
    EXPECT_THROW(p::interleave_rows(set.patches, keys), xsgs::DimensionError);
    keys.push_back(p::bit_interleave({0, 0, 0}, 7));
    EXPECT_THROW(p::deinterleave_rows(set.patches, keys), xsgs::DimensionError);
}

TEST(Hex, MostSignificantBitFirst) {
    EXPECT_EQ(p::bits_from_hex("8"), (std::vector<std::uint8_t>{1, 0, 0, 0}));
    EXPECT_EQ(p::bits_from_hex("a1"), (std::vector<std::uint8_t>{1, 0, 1, 0, 0, 0, 0, 1}));
    EXPECT_EQ(p::bits_from_hex("A1"), p::bits_from_hex("a1"));
    const auto bits = random_bits(48, 4);
    EXPECT_EQ(p::bits_from_hex(p::hex_from_bits(bits)), bits);
    EXPECT_EQ(p::hex_from_bits(p::bits_from_hex("0123456789abcdef")), "0123456789abcdef");
    EXPECT_THROW(p::bits_from_hex(""), xsgs::DomainError);
    EXPECT_THROW(p::bits_from_hex("xy"), xsgs::DomainError);
    EXPECT_THROW(p::hex_from_bits(std::vector<std::uint8_t>{1, 0}), xsgs::DomainError);
}

// ---------------------------------------------------------------------------
// Position encoding and feature layout

TEST(Posenc, FirstRowAlternatesZeroOne) {
    const Tensor pe = p::canonical_posenc(2048, 16);
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(pe.at(0, j), j % 2 ? 1.0 : 0.0);
    EXPECT_NEAR(pe.at(3, 2), std::sin(3.0 / std::pow(10000.0, 2.0 / 16.0)), 1e-15);
    EXPECT_NEAR(pe.at(3, 3), std::cos(3.0 / std::pow(10000.0, 2.0 / 16.0)), 1e-15);
    EXPECT_THROW(p::canonical_posenc(4, 3), xsgs::DimensionError);
}

TEST(Posenc, AllRowsDistinctAndSelfNearest) {
    const Tensor pe = p::canonical_posenc(2048, 16);
    const auto v = pe.data();
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < 2048; ++a) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < 2048; ++b) {
            double d = 0.0;
            for (std::size_t j = 0; j < 16; ++j) d += std::pow(v[a * 16 + j] - v[b * 16 + j], 2);
            if (b != a) min_dist = std::min(min_dist, d);
            if (d < best_d) {
                best_d = d;
                best = b;
            }
        }
        ASSERT_EQ(best, a);
    }
    EXPECT_GT(min_dist, 0.0);
}

TEST(Feature, TokensAreChannelMajor) {
    xsgs::nn::Rng rng(5);
    const auto f = p::random_feature(rng);
    ASSERT_EQ(f.values.size(), 2048u);
    const Tensor tok = p::feature_tokens(f);
    ASSERT_EQ(tok.rows(), 128u);
    ASSERT_EQ(tok.cols(), 16u);
    for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t w = 0; w < 4; ++w)
            for (std::size_t c = 0; c < 128; ++c)
                ASSERT_EQ(tok.at(c, h * 4 + w), f.values[(h * 4 + w) * 128 + c]);
    EXPECT_EQ(p::feature_from_tokens(tok).values, f.values);
}

TEST(Feature, RelativeMse) {
    p::Feature a;
    a.values.assign(2048, 2.0);
    p::Feature b = a;
    b.values[0] = 4.0;
    EXPECT_NEAR(p::feature_relative_mse(b, a), 4.0 / (2048.0 * 4.0), 1e-15);
}

TEST(Feature, FileRoundTripAndHeader) {
    const auto dir = std::filesystem::temp_directory_path() / "xsgs_payload_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "f.bin").string();
    xsgs::nn::Rng rng(6);
    auto f = p::random_feature(rng);
    for (auto& v : f.values) v = double(float(v));
    p::write_feature_file(f, path);
    EXPECT_EQ(std::filesystem::file_size(path), 8u + 2048u * 4u);
    std::ifstream in(path, std::ios::binary);
    std::uint16_t header[4];
    in.read(reinterpret_cast<char*>(header), 8);
    EXPECT_EQ(header[0], 4);
    EXPECT_EQ(header[1], 4);
    EXPECT_EQ(header[2], 128);
    EXPECT_EQ(header[3], 0);
    EXPECT_EQ(p::read_feature_file(path).values, f.values);
    std::filesystem::resize_file(path, 100);
    EXPECT_THROW(p::read_feature_file(path), xsgs::LengthError);
    EXPECT_THROW(p::read_feature_file((dir / "none.bin").string()), xsgs::ParseError);
    std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Codec

TEST(Conv, MatchesDirectLoops) {
    const Tensor x = random_tensor(8, 3, 1);
    const Tensor wu = random_tensor(3, 12, 2), bu = random_tensor(1, 3, 3);
    const auto up = p::upsample_conv(x, wu, bu);
    const auto want_up = naive_up(x, wu, bu);
    ASSERT_EQ(up.rows(), 16u);
    for (std::size_t i = 0; i < want_up.size(); ++i) EXPECT_NEAR(up.data()[i], want_up[i], 1e-12);
    const Tensor wd = random_tensor(12, 3, 4), bd = random_tensor(1, 3, 5);
    const auto down = p::downsample_conv(x, wd, bd);
    const auto want_down = naive_down(x, wd, bd);
    ASSERT_EQ(down.rows(), 4u);
    for (std::size_t i = 0; i < want_down.size(); ++i) EXPECT_NEAR(down.data()[i], want_down[i], 1e-12);
}

TEST(Conv, GradCheck) {
    const Tensor x = random_tensor(8, 3, 6, true);
    const Tensor wu = random_tensor(3, 12, 7, true), bu = random_tensor(1, 3, 8, true);
    const Tensor wd = random_tensor(12, 3, 9, true), bd = random_tensor(1, 3, 10, true);
    auto f = [&](const Tensor&) {
        return t::sum(t::mul(p::downsample_conv(t::silu(p::upsample_conv(x, wu, bu)), wd, bd),
                             random_tensor(8, 3, 11)));
    };
    for (const Tensor& theta : {x, wu, bu, wd, bd}) EXPECT_LT(t::grad_check(f, theta), 1e-5);
}

TEST(Codec, StageCountFollowsTokenCount) {
    xsgs::nn::Rng rng(1);
    std::size_t s = 0;
    for (std::size_t tokens : {128u, 256u, 512u, 1024u, 2048u}) {
        p::CodecConfig cfg;
        cfg.tokens = tokens;
        EXPECT_EQ(p::FeatureCodec(cfg, rng).stages(), s++);
    }
    p::CodecConfig bad;
    bad.tokens = 3000;
    EXPECT_THROW(p::FeatureCodec(bad, rng), xsgs::ConfigError);
    bad.tokens = 4096;
    EXPECT_THROW(p::FeatureCodec(bad, rng), xsgs::ConfigError);
}

TEST(Codec, ZeroFeatureExpandsToPositionEncodings) {
    xsgs::nn::Rng rng(2);
    const p::FeatureCodec codec({}, rng);
    p::Feature zero;
    zero.values.assign(2048, 0.0);
    const auto set = codec.expand(zero);
    ASSERT_EQ(set.count(), 2048u);
    ASSERT_EQ(set.width(), 16u);
    const Tensor pe = p::canonical_posenc(2048, 16);
    const Tensor tokens = codec.from_patches(set.patches);
    for (std::size_t i = 0; i < pe.size(); ++i) ASSERT_NEAR(tokens.data()[i], pe.data()[i], 1e-12);
}

TEST(Codec, PatchesAreWhitened) {
    xsgs::nn::Rng rng(12);
    p::CodecConfig cfg;
    cfg.tokens = 128;
    cfg.gain = 0.15;
    const p::FeatureCodec codec(cfg, rng);
    // Sample moments over many features.
    const std::size_t draws = 400;
    std::vector<double> mean(16, 0.0), second(16 * 16, 0.0);
    double count = 0.0;
    for (std::size_t d = 0; d < draws; ++d) {
        const Tensor patches = codec.expand(p::random_feature(rng)).patches;
        for (std::size_t r = 0; r < patches.rows(); ++r) {
            for (std::size_t i = 0; i < 16; ++i) {
                mean[i] += patches.at(r, i);
                for (std::size_t j = 0; j < 16; ++j) second[i * 16 + j] += patches.at(r, i) * patches.at(r, j);
            }
            count += 1.0;
        }
    }
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_NEAR(mean[i] / count, 0.0, 0.01) << i;
        for (std::size_t j = 0; j < 16; ++j) {
            EXPECT_NEAR(second[i * 16 + j] / count, i == j ? 1.0 : 0.0, 0.03) << i << "," << j;
        }
    }
    const Tensor x = random_tensor(10, 16, 13);
    const Tensor back = codec.from_patches(codec.to_patches(x));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back.data()[i], x.data()[i], 1e-12);
}

TEST(Codec, CleanPositionEncodingsAssignToThemselves) {
    xsgs::nn::Rng rng(3);
    const p::FeatureCodec codec({}, rng);
    const auto a = codec.assign(codec.posenc());
    EXPECT_EQ(a.assigned, 2048u);
    for (std::size_t s = 0; s < 2048; ++s) ASSERT_EQ(a.slot_token[s], std::int64_t(s));
}

TEST(Codec, UntrainedCodecIsLosslessOnTheFullSet) {
    xsgs::nn::Rng rng(4);
    p::CodecConfig cfg;
    cfg.gain = 0.1;
    const p::FeatureCodec codec(cfg, rng);
    const auto f = p::random_feature(rng);
    const auto back = codec.restore(codec.expand(f).patches);
    EXPECT_LT(p::feature_relative_mse(back, f), 1e-20);
}

TEST(Codec, RestoreIsOrderInvariant) {
    xsgs::nn::Rng rng(5);
    p::CodecConfig cfg;
    cfg.gain = 0.1;
    const p::FeatureCodec codec(cfg, rng);
    const auto f = p::random_feature(rng);
    const Tensor tokens = codec.expand(f).patches;
    std::vector<std::size_t> perm(tokens.rows());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    // Also drop a quarter to make the assignment non-trivial.
    perm.resize(perm.size() * 3 / 4);
    auto sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(codec.restore(rows_of(tokens, perm)).values, codec.restore(rows_of(tokens, sorted)).values);
}

TEST(Codec, WithoutUpsamplingKeptTokensComeBackExactly) {
    xsgs::nn::Rng rng(8);
    p::CodecConfig cfg;
    cfg.tokens = 128;
    cfg.gain = 0.125;
    const p::FeatureCodec codec(cfg, rng);
    const auto f = p::random_feature(rng);
    const Tensor patches = codec.expand(f).patches;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < 128; ++i) {
        if (i % 4 != 1) keep.push_back(i);
    }
    const auto back = codec.restore(rows_of(patches, keep));
    const Tensor truth = p::feature_tokens(f);
    const Tensor got = p::feature_tokens(back);
    for (std::size_t i = 0; i < 128; ++i) {
        for (std::size_t j = 0; j < 16; ++j) {
            ASSERT_NEAR(got.at(i, j), i % 4 == 1 ? 0.0 : truth.at(i, j), 1e-9) << i << "," << j;
        }
    }
}

TEST(Codec, RestoreTokensGradCheck) {
    xsgs::nn::Rng rng(6);
    p::CodecConfig cfg;
    cfg.tokens = 256;
    cfg.gain = 0.1;
    cfg.position_hidden = {8};
    cfg.refine_hidden = {8};
    const p::FeatureCodec codec(cfg, rng);
    const auto f = p::random_feature(rng);
    Tensor tokens = codec.expand_tokens(p::feature_tokens(f)).detach();
    tokens.set_requires_grad(true);
    const auto assignment = codec.assign(tokens);
    const Tensor probe = random_tensor(128, 16, 7);
    auto loss = [&](const Tensor&) { return t::sum(t::mul(codec.restore_tokens(tokens, assignment), probe)); };
    EXPECT_LT(t::grad_check(loss, tokens), 1e-5);
    t::ParamList params;
    codec.collect("codec", params);
    for (auto& np : params) EXPECT_LT(t::grad_check(loss, np.value), 1e-5) << np.name;
}

TEST(Codec, EmptySubsetThrows) {
    xsgs::nn::Rng rng(7);
    const p::FeatureCodec codec({}, rng);
    EXPECT_THROW(codec.restore(Tensor::zeros(0, 16)), xsgs::ExtractionError);
}

// ---------------------------------------------------------------------------
// Objects

TEST(Object, SinglePointGivesOneRow) {
    auto o = small_object(1, 1);
    const auto set = p::encode_object(o, 1);
    EXPECT_EQ(set.count(), 1u);
    EXPECT_EQ(set.width(), 14u);
    EXPECT_EQ(set.object->extent, (std::array<double, 3>{1.0, 1.0, 1.0}));
    EXPECT_EQ(set.patches.at(0, 0), 0.0);
}

TEST(Object, PaperScaleShape) {
    const auto set = p::encode_object(small_object(10000, 2), 1);
    EXPECT_EQ(set.count(), 10000u);
    EXPECT_EQ(set.width(), 14u);
}

TEST(Object, PatchColumnsAreCentredWithUnitSpread) {
    const auto o = small_object(200, 3);
    const auto set = p::encode_object(o, 2);
    for (std::size_t j = 0; j < 14; ++j) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < set.count(); ++i) mean += set.patches.at(i, j) / double(set.count());
        for (std::size_t i = 0; i < set.count(); ++i) sq += std::pow(set.patches.at(i, j) - mean, 2);
        EXPECT_NEAR(mean, 0.0, 1e-9) << "column " << j;
        EXPECT_NEAR(std::sqrt(sq / double(set.count())), 1.0, 1e-9) << "column " << j;
    }
    // Unit-cube positions before centring.
    for (const auto& q : o.points) {
        const auto row = p::object_row(q, *set.object);
        for (std::size_t a = 0; a < 3; ++a) {
            EXPECT_GE(row[a], 0.0);
            EXPECT_LE(row[a], 1.0);
        }
    }
}

TEST(Object, ConstantColumnKeepsUnitSpread) {
    auto o = small_object(20, 11);
    for (auto& q : o.points) q.opacity = 3.0f;
    const auto set = p::encode_object(o, 1);
    EXPECT_EQ(set.object->spread[10], 1.0);
    EXPECT_EQ(set.object->mean[10], 3.0);
    for (std::size_t i = 0; i < set.count(); ++i) EXPECT_EQ(set.patches.at(i, 10), 0.0);
    for (const auto& q : p::decode_object(set.patches, *set.object).points) EXPECT_EQ(q.opacity, 3.0f);
}

TEST(Object, DecodeOfEncodeReproducesNormalizedFields) {
    const auto o = small_object(64, 4);
    const auto set = p::encode_object(o, 1);
    p::ObjectHeader unit = *set.object;
    unit.min = {0, 0, 0};
    unit.extent = {1, 1, 1};
    const auto normalized = p::decode_object(set.patches, unit);
    ASSERT_EQ(normalized.size(), o.size());
    // Compare as sets: match every original row to a decoded point.
    for (std::size_t i = 0; i < o.size(); ++i) {
        const auto want = p::object_row(o.points[i], *set.object);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : normalized.points) {
            const auto got = p::object_row(q, unit);
            double d = 0.0;
            for (std::size_t j = 0; j < 14; ++j) d = std::max(d, std::abs(got[j] - want[j]));
            best = std::min(best, d);
        }
        // Decoded points are stored as float32.
        EXPECT_LT(best, 1e-6);
    }
    const auto restored = p::decode_object(set.patches, *set.object);
    for (const auto& q : o.points) {
        const bool found = std::any_of(restored.points.begin(), restored.points.end(), [&](const auto& r) {
            for (std::size_t a = 0; a < 3; ++a)
                if (std::abs(double(r.position[a]) - double(q.position[a])) > 1e-6) return false;
            return r.sh_dc == q.sh_dc && r.opacity == q.opacity;
        });
        EXPECT_TRUE(found);
    }
}

TEST(Object, ReplicasMergeAndSurviveLosses) {
    const auto o = small_object(50, 5);
    const auto set = p::encode_object(o, 2);
    EXPECT_EQ(p::decode_object(set.patches, *set.object).size(), 50u);
    // Drop the first replica of even points and the second of odd points.
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < 50; ++i) keep.push_back(i % 2 ? i : 50 + i);
    EXPECT_EQ(p::decode_object(rows_of(set.patches, keep), *set.object).size(), 50u);
}

TEST(Object, PointOrderDoesNotMatter) {
    auto o = small_object(40, 6);
    const auto a = p::decode_object(p::encode_object(o, 1).patches, {{0, 0, 0}, {1, 1, 1}});
    std::reverse(o.points.begin(), o.points.end());
    const auto b = p::decode_object(p::encode_object(o, 1).patches, {{0, 0, 0}, {1, 1, 1}});
    EXPECT_EQ(a.points, b.points);
}

TEST(Object, DegenerateInputsThrow) {
    auto flat = small_object(10, 7);
    for (auto& q : flat.points) q.position[1] = 0.5f;
    EXPECT_THROW(p::encode_object(flat, 1), xsgs::NormalizationError);
    EXPECT_THROW(p::encode_object(xsgs::gscloud::GaussianCloud{}, 1), xsgs::EmptyCloudError);
    EXPECT_THROW(p::encode_object(small_object(3, 8), 0), xsgs::DomainError);
    EXPECT_THROW(p::decode_object(Tensor::zeros(2, 13), {}), xsgs::DimensionError);
}

TEST(Object, SynthIsDeterministic) {
    EXPECT_EQ(small_object(30, 9).points, small_object(30, 9).points);
    EXPECT_EQ(small_object(30, 9).size(), 30u);
}
