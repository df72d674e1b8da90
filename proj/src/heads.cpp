// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/heads.hpp"

namespace xsgs::heads {

namespace t = xsgs::tensor;

namespace {

std::vector<std::size_t> widths_of(std::size_t in, const std::vector<std::size_t>& hidden,
                                   std::size_t out) {
    std::vector<std::size_t> w = {in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(out);
    return w;
}

}  // namespace

ModalityHead::ModalityHead(Modality m, std::size_t slot_width, std::size_t patch_width,
                           const std::vector<std::size_t>& hidden, nn::Rng& rng)
    : modality_(m),
      slot_width_(slot_width),
      patch_width_(patch_width),
      inject_(widths_of(slot_width + patch_width, hidden, slot_width), rng, true),
      extract_(widths_of(slot_width, hidden, patch_width), rng),
      inject_bypass_(slot_width + patch_width, slot_width, rng, true),
      extract_bypass_(slot_width, patch_width, rng, true) {}

Tensor ModalityHead::inject(const Tensor& slots, const Tensor& patches) const {
    if (slots.cols() != slot_width_ || patches.cols() != patch_width_ ||
        slots.rows() != patches.rows()) {
        throw DimensionError("inject: slots " + slots.shape_str() + " and patches " +
                             patches.shape_str() + " for head " + std::to_string(slot_width_) +
                             "+" + std::to_string(patch_width_));
    }
    // Bits enter centred on zero; the other modalities are already signed.
    const Tensor p = modality_ == Modality::bits1d ? t::add_scalar(t::scale(patches, 2.0), -1.0)
                                                   : patches;
    const Tensor in = t::concat_cols({t::scale(slots, gscloud::kSlotScale), p});
    const Tensor delta = t::add(inject_(in), inject_bypass_(in));
    return t::add(slots, t::scale(delta, 1.0 / gscloud::kSlotScale));
}

Tensor ModalityHead::extract(const Tensor& slots) const {
    if (slots.cols() != slot_width_) {
        throw DimensionError("extract: slot width " + std::to_string(slots.cols()) +
                             ", head expects " + std::to_string(slot_width_));
    }
    const Tensor in = t::scale(slots, gscloud::kSlotScale);
    return t::add(extract_(in), extract_bypass_(in));
}

void ModalityHead::collect(const std::string& prefix, tensor::ParamList& out) const {
    inject_.collect(prefix + ".inject", out);
    extract_.collect(prefix + ".extract", out);
    inject_bypass_.collect(prefix + ".inject_bypass", out);
    extract_bypass_.collect(prefix + ".extract_bypass", out);
}

const ModalityHead& Heads::of(Modality m) const {
    const auto& h = head[payload::index_of(m)];
    if (!h) {
        throw ContractError("no head for modality " + std::string(payload::modality_name(m)));
    }
    return *h;
}

void Heads::collect(const std::string& prefix, tensor::ParamList& out) const {
    for (auto m : payload::kModalities) {
        if (has(m)) of(m).collect(prefix + "." + std::string(payload::modality_name(m)), out);
    }
}

Injection apply_watermark(const gscloud::GaussianCloud& cloud,
                          const gate_select::ScoreMask& masks,
                          const std::array<const payload::PatchSet*, payload::kModalityCount>& sets,
                          const Heads& heads, const gscloud::SlotSpec& spec) {
    t::NoGradGuard guard;
    if (masks.points != cloud.size()) {
        throw AssignmentError("apply_watermark: mask covers " + std::to_string(masks.points) +
                              " points, cloud has " + std::to_string(cloud.size()));
    }
    Injection out;
    out.cloud = cloud;
    for (auto m : payload::kModalities) {
        const std::size_t idx = payload::index_of(m);
        const std::string name(payload::modality_name(m));
        const bool has_mask = masks.has(m);
        const bool has_set = sets[idx] != nullptr;
        if (has_mask != has_set) {
            throw AssignmentError("apply_watermark: " + name +
                                  (has_mask ? " has a mask but no patches" : " has patches but no mask"));
        }
        if (!has_mask) continue;
        const auto& carriers = masks.of(m);
        const auto& set = *sets[idx];
        if (set.count() != carriers.size()) {
            throw AssignmentError("apply_watermark: " + name + " has " +
                                  std::to_string(set.count()) + " patches for " +
                                  std::to_string(carriers.size()) + " masked points");
        }
        out.assignment[idx] = carriers;
        if (carriers.empty()) continue;
        const Tensor slots = gscloud::slot_matrix(cloud, carriers, spec);
        const Tensor patches =
            m == Modality::bits1d
                ? payload::interleave_rows(set.patches, interleave_keys(cloud, carriers, set.width()))
                : set.patches;
        const Tensor injected = heads.of(m).inject(slots, patches);
        const auto v = injected.data();
        const std::size_t w = spec.width();
        for (std::size_t i = 0; i < carriers.size(); ++i) {
            gscloud::write_back(out.cloud.points[carriers[i]], spec, v.subspan(i * w, w));
        }
    }
    return out;
}

Tensor extract_at(const gscloud::GaussianCloud& cloud, const std::vector<std::size_t>& points,
                  const ModalityHead& head, const gscloud::SlotSpec& spec) {
    t::NoGradGuard guard;
    return head.extract(gscloud::slot_matrix(cloud, points, spec));
}

std::vector<payload::BitInterleave> interleave_keys(const gscloud::GaussianCloud& cloud,
                                                    std::span<const std::size_t> points,
                                                    std::size_t width) {
    std::vector<payload::BitInterleave> keys;
    keys.reserve(points.size());
    for (auto i : points) keys.push_back(payload::bit_interleave(cloud.points.at(i).position, width));
    return keys;
}

Tensor extract_bits_at(const gscloud::GaussianCloud& cloud, const std::vector<std::size_t>& points,
                       const ModalityHead& head, const gscloud::SlotSpec& spec) {
    const Tensor probs = t::sigmoid(extract_at(cloud, points, head, spec));
    return payload::deinterleave_rows(probs, interleave_keys(cloud, points, probs.cols()));
}

}  // namespace xsgs::heads
