// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace xsgs::train {

namespace t = xsgs::tensor;

namespace {

constexpr std::uint64_t kModelSalt = 0x6d6f64656cULL;
constexpr std::uint64_t kHeldoutSalt = 0x68656c646f7574ULL;

/// k distinct indices from [0, n) in ascending order.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, nn::Rng& rng) {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

std::size_t uniform_index(std::size_t n, nn::Rng& rng) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

Tensor rows_of(const Tensor& m, const std::vector<std::size_t>& rows) {
    std::vector<std::int64_t> idx(rows.begin(), rows.end());
    return t::gather_rows(m, idx);
}

double schedule(double base, std::int64_t step, const TrainConfig& c) {
    if (!c.cosine_schedule || c.steps == 0) return base;
    const double progress = std::min(1.0, double(step) / double(c.steps));
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    auto finalize = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return finalize(finalize(finalize(a) ^ b) ^ c);
}

// ---------------------------------------------------------------------------
// Model

Model Model::create(const TrainConfig& config) {
    config.validate();
    Model model;
    model.config = config;
    model.spec = gscloud::SlotSpec(config.slots);
    nn::Rng rng(mix_seed(config.seed, kModelSalt));
    model.select = gate_select::SelectGate(config.d, config.patch_widths(), rng);
    model.detect = gate_detect::DetectGate(config.detect_hidden, rng);
    for (auto m : payload::kModalities) {
        if (!config.has(m)) continue;
        model.heads.head[payload::index_of(m)].emplace(m, model.spec.width(), config.patch_width(m),
                                                      config.head_hidden[payload::index_of(m)],
                                                      rng);
    }
    if (config.has(Modality::feat2d)) {
        payload::CodecConfig cc;
        cc.tokens = config.k_of(Modality::feat2d);
        cc.gain = config.feature_gain;
        cc.position_hidden = config.codec_position_hidden;
        cc.refine_hidden = config.codec_refine_hidden;
        model.codec.emplace(cc, rng);
    }
    auto inj = model.injector_params();
    auto det = model.detector_params();
    t::round_to_float32(inj);
    t::round_to_float32(det);
    return model;
}

tensor::ParamList Model::injector_params() const {
    tensor::ParamList out;
    heads.collect("heads", out);
    if (codec) codec->collect("codec", out);
    select.collect("select", out);
    return out;
}

tensor::ParamList Model::detector_params() const {
    tensor::ParamList out;
    detect.collect("detect", out);
    return out;
}

TrainState TrainState::create(const TrainConfig& config) {
    TrainState s;
    s.model = Model::create(config);
    s.injector = t::AdamState::for_params(s.model.injector_params());
    s.detector = t::AdamState::for_params(s.model.detector_params());
    return s;
}

// ---------------------------------------------------------------------------
// Payloads

std::array<const payload::PatchSet*, payload::kModalityCount> PayloadDraw::pointers() const {
    std::array<const payload::PatchSet*, payload::kModalityCount> out{};
    for (std::size_t m = 0; m < payload::kModalityCount; ++m) {
        out[m] = sets[m] ? &*sets[m] : nullptr;
    }
    return out;
}

std::array<const Tensor*, payload::kModalityCount> PayloadDraw::patch_tensors() const {
    std::array<const Tensor*, payload::kModalityCount> out{};
    for (std::size_t m = 0; m < payload::kModalityCount; ++m) {
        out[m] = sets[m] ? &sets[m]->patches : nullptr;
    }
    return out;
}

PayloadDraw encode_payload(const Model& model, const std::vector<std::uint8_t>* bits,
                           const payload::Feature* feature, const gscloud::GaussianCloud* object) {
    const auto& c = model.config;
    PayloadDraw draw;
    auto require = [&](Modality m) {
        if (!c.has(m) || !model.heads.has(m)) {
            throw ContractError("checkpoint has no trained " + std::string(payload::modality_name(m)) +
                                " head");
        }
    };
    if (bits != nullptr) {
        require(Modality::bits1d);
        if (bits->size() != c.bits_length) {
            throw DomainError("bit payload has " + std::to_string(bits->size()) +
                              " bits, model expects " + std::to_string(c.bits_length));
        }
        draw.bits = *bits;
        draw.sets[0] = payload::encode_bits(*bits, c.k_of(Modality::bits1d));
    }
    if (feature != nullptr) {
        require(Modality::feat2d);
        draw.feature = *feature;
        draw.sets[1] = model.codec->expand(*feature);
    }
    if (object != nullptr) {
        require(Modality::obj3d);
        if (object->empty()) {
            throw EmptyCloudError("object payload is empty");
        }
        draw.object = *object;
        const std::size_t replicas = std::max<std::size_t>(1, c.k_of(Modality::obj3d) / object->size());
        draw.sets[2] = payload::encode_object(*object, replicas);
    }
    return draw;
}

PayloadDraw sample_payload(const Model& model, nn::Rng& rng) {
    const auto& c = model.config;
    std::vector<std::uint8_t> bits;
    std::optional<payload::Feature> feature;
    std::optional<gscloud::GaussianCloud> object;
    if (c.has(Modality::bits1d)) {
        std::bernoulli_distribution coin(0.5);
        bits.resize(c.bits_length);
        for (auto& b : bits) b = coin(rng) ? 1 : 0;
    }
    if (c.has(Modality::feat2d)) feature = payload::random_feature(rng);
    if (c.has(Modality::obj3d)) object = payload::synth_object(c.object_points, rng);
    return encode_payload(model, c.has(Modality::bits1d) ? &bits : nullptr,
                          feature ? &*feature : nullptr, object ? &*object : nullptr);
}

// ---------------------------------------------------------------------------
// Loss

LossBreakdown total_loss(const LossInputs& in, const TrainConfig& config, double gamma_scale) {
    LossBreakdown out;
    std::vector<Tensor> terms;
    auto require = [&](Modality m, const char* term) {
        if (!config.has(m)) {
            throw ContractError(std::string("total_loss: ") + term + " requested for disabled modality " +
                                std::string(payload::modality_name(m)));
        }
    };
    if (in.injected_slots.defined()) {
        const Tensor sh = t::mse(in.injected_slots, in.original_slots);
        out.sh = sh.item();
        terms.push_back(t::scale(sh, config.loss.gamma * gamma_scale));
    }
    if (in.bit_logits.defined()) {
        require(Modality::bits1d, "1D BCE");
        const Tensor b = t::bce_with_logits(in.bit_logits, in.bit_truth);
        out.bits = b.item();
        terms.push_back(t::scale(b, config.loss.phi));
    }
    if (in.feat_pred.defined()) {
        require(Modality::feat2d, "2D MSE");
        const Tensor f = t::mse(in.feat_pred, in.feat_truth);
        out.feat = f.item();
        terms.push_back(t::scale(f, config.loss.theta));
    }
    if (in.obj_pred.defined()) {
        require(Modality::obj3d, "3D MSE");
        const Tensor o = t::mse(in.obj_pred, in.obj_truth);
        out.obj = o.item();
        terms.push_back(t::scale(o, config.loss.delta));
    }
    if (in.mask_logits.defined()) {
        const Tensor mk = t::bce_with_logits(in.mask_logits, in.mask_truth);
        out.mask = mk.item();
        terms.push_back(t::scale(mk, config.loss.mask));
    }
    if (in.codec.defined()) {
        require(Modality::feat2d, "codec loss");
        out.codec = in.codec.item();
        terms.push_back(t::scale(in.codec, config.loss.codec));
    }
    if (terms.empty()) {
        out.total = Tensor::scalar(0.0);
        return out;
    }
    out.total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) out.total = t::add(out.total, terms[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct CloudLoss {
    Tensor injector;
    Tensor detector;
    LossBreakdown parts;
    double mask = 0.0;
    std::size_t bit_hits = 0, bit_total = 0;
    std::size_t det_hits = 0, det_total = 0;
};

/// Head rows for one modality: random carriers paired with fresh payload rows.
void head_rows(const Model& model, Modality m, const gscloud::GaussianCloud& sorted,
               const std::vector<std::size_t>& carriers, nn::Rng& rng, Tensor& original,
               Tensor& injected, Tensor& pred, Tensor& truth) {
    const auto& c = model.config;
    const std::size_t rows = c.head_rows;
    std::vector<std::size_t> points(rows);
    for (auto& p : points) p = carriers[uniform_index(carriers.size(), rng)];
    const std::size_t width = c.patch_width(m);
    std::vector<double> target;
    target.reserve(rows * width);
    if (m == Modality::bits1d) {
        std::bernoulli_distribution coin(0.5);
        for (std::size_t i = 0; i < rows * width; ++i) target.push_back(coin(rng) ? 1.0 : 0.0);
    } else {
        std::vector<Tensor> pools;
        for (std::size_t d = 0; d < c.payload_draws; ++d) {
            if (m == Modality::feat2d) {
                pools.push_back(model.codec->expand(payload::random_feature(rng)).patches);
            } else {
                pools.push_back(payload::encode_object(payload::synth_object(c.object_points, rng), 1)
                                    .patches);
            }
        }
        for (std::size_t i = 0; i < rows; ++i) {
            const Tensor& pool = pools[uniform_index(pools.size(), rng)];
            const std::size_t r = uniform_index(pool.rows(), rng);
            const auto v = pool.data().subspan(r * width, width);
            target.insert(target.end(), v.begin(), v.end());
        }
    }
    truth = Tensor::from(rows, width, std::move(target));
    const auto& head = model.heads.of(m);
    original = gscloud::slot_matrix(sorted, points, model.spec);
    injected = head.inject(original, truth);
    pred = head.extract(injected);
}

Tensor codec_loss(const Model& model, const PayloadDraw& draw, const gscloud::GaussianCloud& wm,
                  const gate_select::ScoreMask& mask, nn::Rng& rng) {
    const auto& codec = *model.codec;
    const std::size_t len = codec.tokens();
    const Tensor base = payload::feature_tokens(*draw.feature);
    const Tensor tokens = codec.expand_tokens(base);
    // Extraction error of the current heads rides along as a constant offset.
    Tensor error;
    {
        t::NoGradGuard guard;
        const Tensor extracted =
            heads::extract_at(wm, mask.of(Modality::feat2d), model.heads.of(Modality::feat2d), model.spec);
        error = t::sub(codec.from_patches(extracted), codec.from_patches(draw.sets[1]->patches)).detach();
    }
    const double drop = std::uniform_real_distribution<double>(0.0, model.config.max_drop)(rng);
    const std::size_t keep = len - static_cast<std::size_t>(std::floor(drop * double(len)));
    const auto kept = sample_without_replacement(len, std::max<std::size_t>(keep, 1), rng);
    const Tensor subset = rows_of(t::add(tokens, error), kept);
    const auto assignment = codec.assign(subset);
    const Tensor restored = codec.restore_tokens(subset, assignment);
    const Tensor position = t::mse(codec.predict_posenc(subset), rows_of(codec.posenc(), kept));
    return t::add(t::mse(restored, base), position);
}

CloudLoss cloud_loss(const Model& model, const gscloud::GaussianCloud& cloud, double gamma_scale,
                     nn::Rng& rng) {
    const auto& c = model.config;
    const gscloud::GaussianCloud sorted = gscloud::sort_canonical(cloud).cloud;
    const PayloadDraw draw = sample_payload(model, rng);
    const Tensor features = gscloud::gate_features(sorted);
    const gate_select::ScoreMask mask =
        gate_select::select_all(features, draw.patch_tensors(), model.select, [&] {
            PerModality<std::size_t> k{};
            for (std::size_t m = 0; m < payload::kModalityCount; ++m) {
                k[m] = draw.sets[m] ? draw.sets[m]->count() : 0;
            }
            return k;
        }());
    // Detached watermark with the pre-update heads; the detector only sees this.
    const heads::Injection wm =
        heads::apply_watermark(sorted, mask, draw.pointers(), model.heads, model.spec);

    CloudLoss out;
    LossInputs in;
    std::vector<Tensor> original, injected;
    for (auto m : payload::kModalities) {
        if (!c.has(m)) continue;
        Tensor o, i, p, truth;
        head_rows(model, m, sorted, mask.of(m), rng, o, i, p, truth);
        original.push_back(o);
        injected.push_back(i);
        if (m == Modality::bits1d) {
            in.bit_logits = p;
            in.bit_truth = truth;
            const auto lv = p.data();
            const auto tv = truth.data();
            for (std::size_t j = 0; j < lv.size(); ++j) out.bit_hits += (lv[j] >= 0.0) == (tv[j] >= 0.5);
            out.bit_total += lv.size();
        } else if (m == Modality::feat2d) {
            in.feat_pred = p;
            in.feat_truth = truth;
        } else {
            in.obj_pred = p;
            in.obj_truth = truth;
        }
    }
    in.original_slots = t::concat_rows(original);
    in.injected_slots = t::concat_rows(injected);
    if (c.has(Modality::feat2d)) in.codec = codec_loss(model, draw, wm.cloud, mask, rng);
    out.parts = total_loss(in, c, gamma_scale);
    out.injector = out.parts.total;

    // Detector rows: every carrier plus sampled non-carriers.
    std::vector<std::uint8_t> is_carrier(sorted.size(), 0);
    for (auto m : payload::kModalities) {
        if (!mask.has(m)) continue;
        for (auto i : mask.of(m)) is_carrier[i] = 1;
    }
    std::vector<std::size_t> carriers, others;
    for (std::size_t i = 0; i < sorted.size(); ++i) (is_carrier[i] ? carriers : others).push_back(i);
    std::vector<std::size_t> rows = carriers;
    if (c.detect_negatives == 0 || c.detect_negatives >= others.size()) {
        rows.insert(rows.end(), others.begin(), others.end());
    } else {
        for (auto j : sample_without_replacement(others.size(), c.detect_negatives, rng)) {
            rows.push_back(others[j]);
        }
    }
    const Tensor wm_features = rows_of(gscloud::gate_features(wm.cloud), rows);
    const Tensor truth = rows_of(gate_detect::truth_matrix(mask), rows);
    LossInputs din;
    din.mask_logits = model.detect.logits(wm_features);
    din.mask_truth = truth;
    const auto det = total_loss(din, c);
    out.detector = det.total;
    out.mask = det.mask;
    const auto lv = din.mask_logits.data();
    const auto tv = truth.data();
    for (std::size_t j = 0; j < lv.size(); ++j) out.det_hits += (lv[j] >= 0.0) == (tv[j] >= 0.5);
    out.det_total += lv.size();
    return out;
}

}  // namespace

StepMetrics train_step(TrainState& state, const std::vector<gscloud::GaussianCloud>& batch,
                       nn::Rng& rng) {
    if (batch.empty()) {
        throw ContractError("train_step: empty batch");
    }
    const Model& model = state.model;
    const auto& c = model.config;
    const double gamma_scale =
        c.sh_warmup == 0 ? 1.0 : std::min(1.0, double(state.step) / double(c.sh_warmup));
    auto inj = model.injector_params();
    auto det = model.detector_params();
    t::zero_grads(inj);
    t::zero_grads(det);

    StepMetrics metrics;
    metrics.step = state.step;
    std::vector<Tensor> inj_losses, det_losses;
    std::size_t bit_hits = 0, bit_total = 0, det_hits = 0, det_total = 0;
    for (const auto& cloud : batch) {
        CloudLoss cl = cloud_loss(model, cloud, gamma_scale, rng);
        inj_losses.push_back(cl.injector);
        det_losses.push_back(cl.detector);
        metrics.sh += cl.parts.sh;
        metrics.bits += cl.parts.bits;
        metrics.feat += cl.parts.feat;
        metrics.obj += cl.parts.obj;
        metrics.codec += cl.parts.codec;
        metrics.mask += cl.mask;
        bit_hits += cl.bit_hits;
        bit_total += cl.bit_total;
        det_hits += cl.det_hits;
        det_total += cl.det_total;
    }
    const double inv = 1.0 / double(batch.size());
    Tensor inj_total = inj_losses.front();
    Tensor det_total_loss = det_losses.front();
    for (std::size_t i = 1; i < batch.size(); ++i) {
        inj_total = t::add(inj_total, inj_losses[i]);
        det_total_loss = t::add(det_total_loss, det_losses[i]);
    }
    inj_total = t::scale(inj_total, inv);
    det_total_loss = t::scale(det_total_loss, inv);
    if (inj_total.requires_grad()) inj_total.backward();
    det_total_loss.backward();

    t::AdamHyper hi;
    hi.lr = schedule(c.lr, state.step, c);
    hi.float32_state = true;
    t::adam_step(inj, state.injector, hi);
    t::AdamHyper hd;
    hd.lr = schedule(c.detect_lr, state.step, c);
    hd.float32_state = true;
    t::adam_step(det, state.detector, hd);
    t::zero_grads(inj);
    t::zero_grads(det);

    metrics.injector_loss = inj_total.item();
    metrics.sh *= inv;
    metrics.bits *= inv;
    metrics.feat *= inv;
    metrics.obj *= inv;
    metrics.codec *= inv;
    metrics.mask *= inv;
    metrics.bit_accuracy = bit_total ? double(bit_hits) / double(bit_total) : 0.0;
    metrics.detect_accuracy = det_total ? double(det_hits) / double(det_total) : 0.0;
    state.step += 1;
    return metrics;
}

StepMetrics train_step(TrainState& state) {
    const auto& c = state.model.config;
    std::vector<gscloud::GaussianCloud> batch;
    batch.reserve(c.batch);
    for (std::size_t b = 0; b < c.batch; ++b) {
        batch.push_back(gscloud::synth_cloud(c.cloud_points,
                                             mix_seed(c.seed, std::uint64_t(state.step), b + 1)));
    }
    nn::Rng rng(mix_seed(c.seed, std::uint64_t(state.step), 0));
    return train_step(state, batch, rng);
}

void train(TrainState& state, const StepCallback& on_step) {
    while (state.step < std::int64_t(state.model.config.steps)) {
        const StepMetrics m = train_step(state);
        if (on_step) on_step(m);
    }
}

gscloud::GaussianCloud heldout_cloud(const TrainConfig& config, std::uint64_t index) {
    return gscloud::synth_cloud(config.cloud_points, mix_seed(~config.seed, kHeldoutSalt, index));
}

// ---------------------------------------------------------------------------
// Inference

Watermarked embed(const gscloud::GaussianCloud& cloud, const PayloadDraw& draw, const Model& model) {
    const gscloud::GaussianCloud sorted = gscloud::sort_canonical(cloud).cloud;
    PerModality<std::size_t> k{};
    for (std::size_t m = 0; m < payload::kModalityCount; ++m) {
        k[m] = draw.sets[m] ? draw.sets[m]->count() : 0;
    }
    Watermarked out;
    out.mask = gate_select::select_all(gscloud::gate_features(sorted), draw.patch_tensors(),
                                       model.select, k);
    out.cloud = heads::apply_watermark(sorted, out.mask, draw.pointers(), model.heads, model.spec).cloud;
    return out;
}

Extracted extract(const gscloud::GaussianCloud& cloud, const Model& model, double tau,
                  const payload::ObjectHeader* header) {
    Extracted out;
    out.sorted = gscloud::sort_canonical(cloud).cloud;
    out.detection = model.detect.detect(out.sorted, tau);
    for (auto m : payload::kModalities) {
        const auto& points = out.detection.carriers[payload::index_of(m)];
        if (!model.heads.has(m) || points.empty()) continue;
        if (m == Modality::bits1d) {
            out.bits = payload::decode_bits(
                heads::extract_bits_at(out.sorted, points, model.heads.of(m), model.spec));
            continue;
        }
        const Tensor raw = heads::extract_at(out.sorted, points, model.heads.of(m), model.spec);
        if (m == Modality::feat2d) {
            out.feature = model.codec->restore(raw);
        } else {
            const payload::ObjectHeader unit{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
            out.object = payload::decode_object(raw, header != nullptr ? *header : unit);
        }
    }
    return out;
}

}  // namespace xsgs::train
