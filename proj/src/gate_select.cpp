// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/gate_select.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace xsgs::gate_select {

namespace t = xsgs::tensor;

const std::vector<std::size_t>& ScoreMask::of(Modality m) const {
    const auto& c = carriers[payload::index_of(m)];
    if (!c) {
        throw ContractError("mask requested for absent modality " +
                            std::string(payload::modality_name(m)));
    }
    return *c;
}

std::vector<std::uint8_t> ScoreMask::dense(Modality m) const {
    std::vector<std::uint8_t> out(points, 0);
    if (has(m)) {
        for (auto i : of(m)) out.at(i) = 1;
    }
    return out;
}

AttentionBlock::AttentionBlock(std::size_t d, nn::Rng& rng)
    : query(d, d, rng), key(d, d, rng), value(d, d, rng), ff({d, d, d}, rng) {}

Tensor AttentionBlock::operator()(const Tensor& a, const Tensor& b) const {
    const double inv = 1.0 / std::sqrt(static_cast<double>(query.out_features()));
    const Tensor logits = t::scale(t::matmul(query(a), t::transpose(key(b))), inv);
    const Tensor m = t::add(a, t::matmul(t::softmax_axis(logits, t::Axis::row), value(b)));
    return t::add(m, ff(m));
}

void AttentionBlock::collect(const std::string& prefix, tensor::ParamList& out) const {
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    ff.collect(prefix + ".ff", out);
}

SelectGate::SelectGate(std::size_t d,
                       const std::array<std::size_t, payload::kModalityCount>& widths,
                       nn::Rng& rng)
    : cover_embed_(gscloud::kPointFeatures, d, rng) {
    for (std::size_t m = 0; m < payload::kModalityCount; ++m) {
        patch_embed_[m] = nn::Linear(widths[m], d, rng);
    }
    anchor_ = nn::normal(1, d, 1.0, rng);
    induce_ = AttentionBlock(d, rng);
    broadcast_ = AttentionBlock(d, rng);
    for (auto& c : cross_) {
        c.query = nn::Linear(d, d, rng);
        c.key = nn::Linear(d, d, rng);
        c.value = nn::Linear(d, d, rng);
    }
    self_linear_ = nn::Linear(d, 1, rng);
    cross_linear_ = nn::Linear(d, 1, rng);
}

Tensor SelectGate::embed_cover(const Tensor& features) const {
    if (features.cols() != cover_embed_.in_features()) {
        throw DimensionError("embed: cover width " + std::to_string(features.cols()) +
                             ", expected " + std::to_string(cover_embed_.in_features()));
    }
    return cover_embed_(features);
}

Tensor SelectGate::embed_patches(const Tensor& patches, Modality m) const {
    const auto& lin = patch_embed_[payload::index_of(m)];
    if (patches.cols() != lin.in_features()) {
        throw DimensionError("embed: " + std::string(payload::modality_name(m)) + " width " +
                             std::to_string(patches.cols()) + ", expected " +
                             std::to_string(lin.in_features()));
    }
    return lin(patches);
}

Tensor SelectGate::self_score(const Tensor& x) const {
    const Tensor h = induce_(anchor_, x);
    return t::sigmoid(self_linear_(broadcast_(x, h)));
}

Tensor SelectGate::cross_score(const Tensor& x, const Tensor& y, Modality m) const {
    const auto& proj = cross_[payload::index_of(m)];
    const Tensor context = t::matmul(t::transpose(t::softmax_axis(proj.key(y), t::Axis::column)),
                                     proj.value(y));
    const Tensor o = t::matmul(t::softmax_axis(proj.query(x), t::Axis::row), context);
    return t::sigmoid(cross_linear_(o));
}

ModalityScores SelectGate::score_streaming(
    const Tensor& features, const std::array<const Tensor*, payload::kModalityCount>& patches,
    std::size_t chunk) const {
    t::NoGradGuard guard;
    const std::size_t n = features.rows();
    const std::size_t d = dim();
    if (n == 0) {
        throw EmptyCloudError("score: empty cloud");
    }
    chunk = std::max<std::size_t>(chunk, 1);
    auto rows = [&](std::size_t begin, std::size_t end) {
        const auto v = features.data();
        const std::size_t w = features.cols();
        return Tensor::from(end - begin, w,
                            std::vector<double>(v.begin() + begin * w, v.begin() + end * w));
    };

    // Pass 1: H = MA(I, X) with an online softmax over all n keys.
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    const Tensor q = induce_.query(anchor_);
    double running_max = -std::numeric_limits<double>::infinity();
    double denom = 0.0;
    std::vector<double> acc(d, 0.0);
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t end = std::min(n, begin + chunk);
        const Tensor e = embed_cover(rows(begin, end));
        const Tensor logits = t::scale(t::matmul(induce_.key(e), t::transpose(q)), inv);
        const Tensor v = induce_.value(e);
        const auto lv = logits.data();
        const double chunk_max = *std::max_element(lv.begin(), lv.end());
        if (chunk_max > running_max) {
            const double rescale = std::exp(running_max - chunk_max);
            denom *= rescale;
            for (auto& a : acc) a *= rescale;
            running_max = chunk_max;
        }
        const auto vv = v.data();
        for (std::size_t i = 0; i < lv.size(); ++i) {
            const double w = std::exp(lv[i] - running_max);
            denom += w;
            for (std::size_t j = 0; j < d; ++j) acc[j] += w * vv[i * d + j];
        }
    }
    for (auto& a : acc) a /= denom;
    const Tensor m = t::add(anchor_, Tensor::from(1, d, acc));
    const Tensor h = t::add(m, induce_.ff(m));

    std::array<Tensor, payload::kModalityCount> context;
    for (std::size_t k = 0; k < payload::kModalityCount; ++k) {
        if (patches[k] == nullptr) continue;
        const auto& proj = cross_[k];
        const Tensor y = embed_patches(*patches[k], payload::kModalities[k]);
        context[k] = t::matmul(t::transpose(t::softmax_axis(proj.key(y), t::Axis::column)),
                               proj.value(y));
    }

    // Pass 2: per-point scores chunk by chunk.
    ModalityScores out;
    out.self.reserve(n);
    for (std::size_t k = 0; k < payload::kModalityCount; ++k) {
        if (patches[k] != nullptr) out.cross[k].emplace().reserve(n);
    }
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t end = std::min(n, begin + chunk);
        const Tensor e = embed_cover(rows(begin, end));
        const Tensor s = t::sigmoid(self_linear_(broadcast_(e, h)));
        out.self.insert(out.self.end(), s.data().begin(), s.data().end());
        for (std::size_t k = 0; k < payload::kModalityCount; ++k) {
            if (patches[k] == nullptr) continue;
            const Tensor o =
                t::matmul(t::softmax_axis(cross_[k].query(e), t::Axis::row), context[k]);
            const Tensor c = t::sigmoid(cross_linear_(o));
            out.cross[k]->insert(out.cross[k]->end(), c.data().begin(), c.data().end());
        }
    }
    return out;
}

void SelectGate::collect(const std::string& prefix, tensor::ParamList& out) const {
    cover_embed_.collect(prefix + ".embed.cover", out);
    for (auto m : payload::kModalities) {
        patch_embed_[payload::index_of(m)].collect(
            prefix + ".embed." + std::string(payload::modality_name(m)), out);
    }
    out.push_back({prefix + ".anchor", anchor_});
    induce_.collect(prefix + ".induce", out);
    broadcast_.collect(prefix + ".broadcast", out);
    for (auto m : payload::kModalities) {
        const auto& c = cross_[payload::index_of(m)];
        const std::string tag = prefix + ".cross." + std::string(payload::modality_name(m));
        c.query.collect(tag + ".query", out);
        c.key.collect(tag + ".key", out);
        c.value.collect(tag + ".value", out);
    }
    self_linear_.collect(prefix + ".self_linear", out);
    cross_linear_.collect(prefix + ".cross_linear", out);
}

std::vector<std::size_t> fuse_and_topk(std::span<const double> self, std::span<const double> cross,
                                       std::size_t k, std::span<const std::uint8_t> excluded) {
    const std::size_t n = self.size();
    if (cross.size() != n || excluded.size() != n) {
        throw DimensionError("fuse_and_topk: score and exclusion lengths differ");
    }
    std::vector<std::size_t> candidates;
    candidates.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!excluded[i]) candidates.push_back(i);
    }
    if (k > candidates.size()) {
        throw CapacityError("top-k: n=" + std::to_string(n) + ", excluded=" +
                            std::to_string(n - candidates.size()) + ", k=" + std::to_string(k));
    }
    std::vector<double> fused(n);
    for (std::size_t i = 0; i < n; ++i) fused[i] = self[i] * cross[i];
    auto better = [&](std::size_t a, std::size_t b) {
        return fused[a] > fused[b] || (fused[a] == fused[b] && a < b);
    };
    std::partial_sort(candidates.begin(), candidates.begin() + std::ptrdiff_t(k), candidates.end(),
                      better);
    candidates.resize(k);
    std::sort(candidates.begin(), candidates.end());
    return candidates;
}

ScoreMask select_all(const Tensor& features,
                     const std::array<const Tensor*, payload::kModalityCount>& patches,
                     const SelectGate& gate,
                     const std::array<std::size_t, payload::kModalityCount>& k,
                     std::array<Modality, payload::kModalityCount> order) {
    const std::size_t n = features.rows();
    std::size_t total = 0;
    for (std::size_t m = 0; m < payload::kModalityCount; ++m) {
        if (patches[m] != nullptr) total += k[m];
    }
    if (total > n) {
        throw CapacityError("select_all: sum of k = " + std::to_string(total) + " exceeds n = " +
                            std::to_string(n));
    }
    const ModalityScores scores = gate.score_streaming(features, patches);
    ScoreMask mask;
    mask.points = n;
    std::vector<std::uint8_t> excluded(n, 0);
    for (Modality m : order) {
        const std::size_t idx = payload::index_of(m);
        if (patches[idx] == nullptr) continue;
        auto chosen = fuse_and_topk(scores.self, *scores.cross[idx], k[idx], excluded);
        for (auto i : chosen) excluded[i] = 1;
        mask.carriers[idx] = std::move(chosen);
    }
    return mask;
}

}  // namespace xsgs::gate_select
