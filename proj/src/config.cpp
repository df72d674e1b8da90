// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/config.hpp"

#include <algorithm>
#include <set>

#include "xsgs/gscloud.hpp"

namespace xsgs::train {

namespace {

Json per_modality_json(const auto& values) {
    Json j = Json::object();
    for (auto m : payload::kModalities) {
        j[std::string(payload::modality_name(m))] = values[payload::index_of(m)];
    }
    return j;
}

template <typename T>
void read_per_modality(const Json& j, const char* key, PerModality<T>& out) {
    if (!j.is_object()) {
        throw ConfigError(std::string("config: '") + key + "' must be an object keyed by modality");
    }
    for (const auto& [name, value] : j.items()) {
        const auto m = payload::parse_modality(name);
        out[payload::index_of(m)] = value.template get<T>();
    }
}

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) {
        throw ConfigError("config: " + where + " must be a JSON object");
    }
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) {
            throw ConfigError("config: unknown key '" + key + "' in " + where);
        }
    }
}

template <typename T>
void read(const Json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).template get<T>();
}

}  // namespace

std::size_t TrainConfig::patch_width(payload::Modality m) const {
    switch (m) {
        case payload::Modality::bits1d: return bits_length;
        case payload::Modality::feat2d: return payload::kFeatWidth;
        case payload::Modality::obj3d: return payload::kObjWidth;
    }
    return 0;
}

PerModality<std::size_t> TrainConfig::patch_widths() const {
    PerModality<std::size_t> w{};
    for (auto m : payload::kModalities) w[payload::index_of(m)] = patch_width(m);
    return w;
}

void TrainConfig::validate() const {
    if (std::none_of(enabled.begin(), enabled.end(), [](bool b) { return b; })) {
        throw ConfigError("config: at least one modality must be enabled");
    }
    std::size_t total = 0;
    for (auto m : payload::kModalities) {
        if (!has(m)) continue;
        if (k_of(m) == 0) {
            throw ConfigError("config: k for " + std::string(payload::modality_name(m)) +
                              " must be >= 1");
        }
        total += k_of(m);
        if (head_hidden[payload::index_of(m)].size() < 1 ||
            head_hidden[payload::index_of(m)].size() > 4) {
            throw ConfigError("config: heads need 3 to 5 affine layers (1 to 4 hidden widths)");
        }
    }
    if (total > cloud_points) {
        throw ConfigError("config: sum of k = " + std::to_string(total) + " exceeds cloud_points = " +
                          std::to_string(cloud_points));
    }
    if (has(payload::Modality::obj3d) &&
        (object_points == 0 || k_of(payload::Modality::obj3d) % object_points != 0)) {
        throw ConfigError("config: k[obj3d] must be a positive multiple of object_points");
    }
    if (has(payload::Modality::feat2d)) {
        std::size_t len = payload::kBaseTokens;
        while (len < k_of(payload::Modality::feat2d) && len < payload::kBaseTokens * 16) len *= 2;
        if (len != k_of(payload::Modality::feat2d)) {
            throw ConfigError("config: k[feat2d] must be 128 * 2^s with s <= 4");
        }
        if (!(feature_gain > 0.0)) {
            throw ConfigError("config: feature_gain must be positive");
        }
    }
    for (double w : {loss.gamma, loss.phi, loss.theta, loss.delta, loss.mask, loss.codec}) {
        if (!(w >= 0.0)) {
            throw ConfigError("config: loss weights must be non-negative");
        }
    }
    if (bits_length == 0) throw ConfigError("config: bits_length must be >= 1");
    if (d == 0) throw ConfigError("config: d must be >= 1");
    if (detect_hidden.size() != 3) {
        throw ConfigError("config: the detect gate has exactly four affine layers");
    }
    if (batch == 0 || head_rows == 0 || payload_draws == 0) {
        throw ConfigError("config: batch, head_rows and payload_draws must be >= 1");
    }
    if (!(lr > 0.0) || !(detect_lr >= 0.0)) {
        throw ConfigError("config: learning rates must be positive");
    }
    if (!(max_drop >= 0.0 && max_drop < 1.0)) {
        throw ConfigError("config: max_drop must lie in [0, 1)");
    }
    gscloud::SlotSpec check(slots);
    (void)check;
}

Json TrainConfig::to_json() const {
    Json j;
    j["preset"] = preset;
    j["loss"] = {{"gamma", loss.gamma}, {"phi", loss.phi},   {"theta", loss.theta},
                 {"delta", loss.delta}, {"mask", loss.mask}, {"codec", loss.codec}};
    j["enabled"] = per_modality_json(enabled);
    j["k"] = per_modality_json(k);
    j["bits_length"] = bits_length;
    j["object_points"] = object_points;
    j["cloud_points"] = cloud_points;
    j["d"] = d;
    j["slots"] = slots;
    j["head_hidden"] = per_modality_json(head_hidden);
    j["detect_hidden"] = detect_hidden;
    j["feature_gain"] = feature_gain;
    j["codec_position_hidden"] = codec_position_hidden;
    j["codec_refine_hidden"] = codec_refine_hidden;
    j["lr"] = lr;
    j["detect_lr"] = detect_lr;
    j["cosine_schedule"] = cosine_schedule;
    j["batch"] = batch;
    j["steps"] = steps;
    j["head_rows"] = head_rows;
    j["payload_draws"] = payload_draws;
    j["detect_negatives"] = detect_negatives;
    j["sh_warmup"] = sh_warmup;
    j["max_drop"] = max_drop;
    j["seed"] = seed;
    return j;
}

TrainConfig TrainConfig::from_json(const Json& j) {
    static const std::set<std::string> kKeys = {
        "preset",        "loss",          "enabled",          "k",
        "bits_length",   "object_points", "cloud_points",     "d",
        "slots",         "head_hidden",   "detect_hidden",    "feature_gain",
        "codec_position_hidden", "codec_refine_hidden", "lr", "detect_lr",
        "cosine_schedule", "batch",       "steps",            "head_rows",
        "payload_draws", "detect_negatives", "sh_warmup",     "max_drop",
        "seed"};
    reject_unknown(j, kKeys, "config");
    // A preset name seeds the defaults; explicit keys override it.
    TrainConfig c;
    try {
        if (j.contains("preset")) c = named(j.at("preset").get<std::string>());
        if (j.contains("loss")) {
            const Json& l = j.at("loss");
            reject_unknown(l, {"gamma", "phi", "theta", "delta", "mask", "codec"}, "loss");
            read(l, "gamma", c.loss.gamma);
            read(l, "phi", c.loss.phi);
            read(l, "theta", c.loss.theta);
            read(l, "delta", c.loss.delta);
            read(l, "mask", c.loss.mask);
            read(l, "codec", c.loss.codec);
        }
        if (j.contains("enabled")) read_per_modality(j.at("enabled"), "enabled", c.enabled);
        if (j.contains("k")) read_per_modality(j.at("k"), "k", c.k);
        if (j.contains("head_hidden")) read_per_modality(j.at("head_hidden"), "head_hidden", c.head_hidden);
        read(j, "bits_length", c.bits_length);
        read(j, "object_points", c.object_points);
        read(j, "cloud_points", c.cloud_points);
        read(j, "d", c.d);
        read(j, "slots", c.slots);
        read(j, "detect_hidden", c.detect_hidden);
        read(j, "feature_gain", c.feature_gain);
        read(j, "codec_position_hidden", c.codec_position_hidden);
        read(j, "codec_refine_hidden", c.codec_refine_hidden);
        read(j, "lr", c.lr);
        read(j, "detect_lr", c.detect_lr);
        read(j, "cosine_schedule", c.cosine_schedule);
        read(j, "batch", c.batch);
        read(j, "steps", c.steps);
        read(j, "head_rows", c.head_rows);
        read(j, "payload_draws", c.payload_draws);
        read(j, "detect_negatives", c.detect_negatives);
        read(j, "sh_warmup", c.sh_warmup);
        read(j, "max_drop", c.max_drop);
        read(j, "seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::named(const std::string& preset) {
    TrainConfig c;
    c.preset = preset;
    if (preset == "default") return c;
    if (preset == "paper") {
        c.loss.gamma = 0.2;
        c.enabled = {true, true, true};
        c.k = {1024, 2048, 10000};
        c.object_points = 10000;
        c.cloud_points = 20000;
        return c;
    }
    if (preset == "desk-1d") {
        c.loss.gamma = 0.02;
        c.loss.phi = 1.0;
        c.enabled = {true, false, false};
        c.k = {64, 128, 256};
        c.head_hidden[0] = {384, 384, 384};
        c.steps = 8000;
        c.sh_warmup = 2000;
        return c;
    }
    if (preset == "desk-multimodal") {
        c.loss.gamma = 0.02;
        c.loss.phi = 1.0;
        c.loss.theta = 20.0;
        c.loss.delta = 20.0;
        c.enabled = {true, true, true};
        c.k = {64, 128, 256};
        c.cloud_points = 2048;
        c.object_points = 64;
        c.feature_gain = 0.125;
        c.head_hidden = {std::vector<std::size_t>{384, 384, 384}, {256, 256, 256}, {256, 256, 256}};
        c.steps = 8000;
        c.sh_warmup = 2000;
        return c;
    }
    throw ConfigError("unknown preset '" + preset + "'");
}

std::string canonical_json(const Json& j) { return j.dump(); }

}  // namespace xsgs::train
