// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/eval_attack.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

namespace xsgs::eval {

using payload::Modality;

Pruned prune_random_indexed(const gscloud::GaussianCloud& cloud, double rate, std::uint64_t seed) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw DomainError("prune_random: rate must lie in [0, 1)");
    }
    const std::size_t n = cloud.size();
    const std::size_t remove = static_cast<std::size_t>(std::floor(rate * double(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    nn::Rng rng(seed);
    for (std::size_t i = 0; i < remove; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(order[i], order[pick(rng)]);
    }
    std::vector<std::uint8_t> gone(n, 0);
    for (std::size_t i = 0; i < remove; ++i) gone[order[i]] = 1;
    Pruned out;
    out.cloud.source_path = cloud.source_path;
    out.cloud.points.reserve(n - remove);
    out.kept.reserve(n - remove);
    for (std::size_t i = 0; i < n; ++i) {
        if (gone[i]) continue;
        out.cloud.points.push_back(cloud.points[i]);
        out.kept.push_back(i);
    }
    return out;
}

gscloud::GaussianCloud prune_random(const gscloud::GaussianCloud& cloud, double rate,
                                    std::uint64_t seed) {
    return prune_random_indexed(cloud, rate, seed).cloud;
}

double bit_precision(std::span<const std::uint8_t> extracted, std::span<const std::uint8_t> truth) {
    if (extracted.size() != truth.size() || truth.empty()) {
        throw DomainError("bit_precision: lengths " + std::to_string(extracted.size()) + " and " +
                          std::to_string(truth.size()));
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += (extracted[i] != 0) == (truth[i] != 0);
    return double(hits) / double(truth.size());
}

double sh_psnr(const gscloud::GaussianCloud& a, const gscloud::GaussianCloud& b,
               const gscloud::SlotSpec& spec) {
    if (a.size() != b.size() || a.empty()) {
        throw DomainError("sh_psnr: clouds of " + std::to_string(a.size()) + " and " +
                          std::to_string(b.size()) + " points are not aligned");
    }
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (auto s : spec.flat()) {
            const double va = a.points[i].sh_rest[s];
            const double d = va - double(b.points[i].sh_rest[s]);
            lo = std::min(lo, va);
            hi = std::max(hi, va);
            sum += d * d;
        }
    }
    const double mse = sum / double(a.size() * spec.width());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    const double range = hi - lo;
    return 10.0 * std::log10(range * range / mse);
}

double chamfer(const gscloud::GaussianCloud& a, const gscloud::GaussianCloud& b) {
    if (a.empty() || b.empty()) {
        throw DomainError("chamfer: empty point set");
    }
    auto one_way = [](const gscloud::GaussianCloud& from, const gscloud::GaussianCloud& to) {
        double total = 0.0;
        for (const auto& p : from.points) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to.points) {
                double d = 0.0;
                for (std::size_t k = 0; k < 3; ++k) {
                    const double e = double(p.position[k]) - double(q.position[k]);
                    d += e * e;
                }
                best = std::min(best, d);
            }
            total += best;
        }
        return total / double(from.size());
    };
    return 0.5 * (one_way(a, b) + one_way(b, a));
}

gscloud::GaussianCloud normalized(const gscloud::GaussianCloud& object,
                                  const payload::ObjectHeader& header) {
    gscloud::GaussianCloud out = object;
    for (auto& p : out.points) {
        for (std::size_t k = 0; k < 3; ++k) {
            p.position[k] = static_cast<float>((double(p.position[k]) - header.min[k]) / header.extent[k]);
        }
    }
    return out;
}

namespace {

Json per_modality(const auto& values) {
    Json j = Json::object();
    for (auto m : payload::kModalities) {
        j[std::string(payload::modality_name(m))] = values[payload::index_of(m)];
    }
    return j;
}

Json finite_or_text(double v) {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}

}  // namespace

bool watermark_present(const gate_detect::DetectResult& detection, const train::TrainConfig& config) {
    for (auto m : payload::kModalities) {
        const double flagged = double(detection.carriers[payload::index_of(m)].size());
        if (config.has(m) && flagged >= std::max(1.0, 0.25 * double(config.k_of(m)))) return true;
    }
    return false;
}

Json FalsePositiveReport::to_json() const {
    Json j;
    j["points"] = points;
    j["flagged"] = per_modality(flagged);
    j["flagged_fraction"] = per_modality(flagged_fraction);
    j["watermark_detected"] = watermark_detected;
    j["forced_points"] = forced_points;
    j["forced_bit_precision"] = forced_bit_precision ? Json(*forced_bit_precision) : Json(nullptr);
    return j;
}

FalsePositiveReport false_positive_check(const gscloud::GaussianCloud& clean,
                                         const train::Model& model,
                                         std::span<const std::uint8_t> reference_bits, double tau) {
    const auto& c = model.config;
    const gscloud::GaussianCloud sorted = gscloud::sort_canonical(clean).cloud;
    const auto det = model.detect.detect(sorted, tau);
    FalsePositiveReport r;
    r.points = sorted.size();
    for (auto m : payload::kModalities) {
        const std::size_t i = payload::index_of(m);
        r.flagged[i] = det.carriers[i].size();
        r.flagged_fraction[i] = double(r.flagged[i]) / double(r.points);
    }
    r.watermark_detected = watermark_present(det, c);
    if (c.has(Modality::bits1d) && !reference_bits.empty()) {
        std::vector<std::size_t> points = det.carriers[payload::index_of(Modality::bits1d)];
        if (points.empty()) {
            std::vector<std::size_t> order(sorted.size());
            std::iota(order.begin(), order.end(), 0);
            const std::size_t k = std::min(order.size(), c.k_of(Modality::bits1d));
            std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k), order.end(),
                              [&](std::size_t a, std::size_t b) {
                                  const double pa = det.prob(a, Modality::bits1d);
                                  const double pb = det.prob(b, Modality::bits1d);
                                  return pa > pb || (pa == pb && a < b);
                              });
            order.resize(k);
            std::sort(order.begin(), order.end());
            points = std::move(order);
        }
        r.forced_points = points.size();
        const auto bits = payload::decode_bits(
            heads::extract_bits_at(sorted, points, model.heads.of(Modality::bits1d), model.spec));
        r.forced_bit_precision = bit_precision(bits.bits, reference_bits);
    }
    return r;
}

std::size_t worker_threads() {
    if (const char* env = std::getenv("XSGS_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v >= 1) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

struct TrialResult {
    double bits = 0.0;
    std::optional<double> feature;
    std::optional<double> chamfer;
    double psnr = 0.0;
    std::size_t tp = 0, detected = 0, truth = 0;
};

TrialResult run_trial(const train::Model& model, double rate, std::uint64_t seed,
                      std::size_t rate_index, std::size_t trial,
                      const gscloud::GaussianCloud* cover) {
    const auto& c = model.config;
    const gscloud::GaussianCloud cloud =
        cover != nullptr ? *cover : train::heldout_cloud(c, train::mix_seed(seed, trial));
    nn::Rng rng(train::mix_seed(seed, rate_index + 1, trial));
    const train::PayloadDraw draw = train::sample_payload(model, rng);
    const train::Watermarked wm = train::embed(cloud, draw, model);
    const gscloud::GaussianCloud original = gscloud::sort_canonical(cloud).cloud;

    TrialResult r;
    r.psnr = sh_psnr(original, wm.cloud, model.spec);
    const Pruned pruned = prune_random_indexed(wm.cloud, rate, train::mix_seed(seed, 0x9e11, trial * 31 + rate_index));
    const train::Extracted ex = train::extract(pruned.cloud, model);

    std::vector<std::int64_t> survivor(wm.cloud.size(), -1);
    for (std::size_t j = 0; j < pruned.kept.size(); ++j) survivor[pruned.kept[j]] = std::int64_t(j);
    for (auto m : payload::kModalities) {
        if (!wm.mask.has(m)) continue;
        std::vector<std::uint8_t> truth(pruned.kept.size(), 0);
        for (auto i : wm.mask.of(m)) {
            if (survivor[i] >= 0) truth[std::size_t(survivor[i])] = 1;
        }
        r.truth += std::size_t(std::count(truth.begin(), truth.end(), 1));
        for (auto j : ex.detection.carriers[payload::index_of(m)]) {
            ++r.detected;
            r.tp += truth[j];
        }
    }
    if (c.has(Modality::bits1d)) {
        r.bits = ex.bits ? bit_precision(ex.bits->bits, draw.bits) : 0.0;
    }
    if (c.has(Modality::feat2d)) {
        r.feature = ex.feature ? payload::feature_relative_mse(*ex.feature, *draw.feature)
                               : std::numeric_limits<double>::infinity();
    }
    if (c.has(Modality::obj3d)) {
        const auto& header = *draw.sets[payload::index_of(Modality::obj3d)]->object;
        r.chamfer = ex.object ? chamfer(*ex.object, normalized(*draw.object, header))
                              : std::numeric_limits<double>::infinity();
    }
    return r;
}

}  // namespace

RobustnessReport run_robustness_suite(const train::Model& model, std::vector<double> rates,
                                      std::size_t trials, std::uint64_t seed,
                                      const gscloud::GaussianCloud* cover) {
    if (trials == 0) {
        throw DomainError("robustness suite: trials must be >= 1");
    }
    std::sort(rates.begin(), rates.end());
    const std::size_t jobs = rates.size() * trials;
    std::vector<TrialResult> results(jobs);
    std::vector<std::string> errors(jobs);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs; j = next++) {
            try {
                results[j] = run_trial(model, rates[j / trials], seed, j / trials, j % trials, cover);
            } catch (const std::exception& e) {
                errors[j] = e.what();
            }
        }
    };
    const std::size_t threads = std::min(worker_threads(), std::max<std::size_t>(jobs, 1));
    std::vector<std::thread> pool;
    for (std::size_t i = 1; i < threads; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
        if (!e.empty()) throw ExtractionError("robustness trial failed: " + e);
    }

    RobustnessReport report;
    for (std::size_t ri = 0; ri < rates.size(); ++ri) {
        RateMetrics row;
        row.rate = rates[ri];
        row.trials = trials;
        row.min_bit_precision = 1.0;
        double feat = 0.0, cham = 0.0, psnr = 0.0;
        std::size_t tp = 0, det = 0, truth = 0;
        bool finite_psnr = true;
        for (std::size_t t = 0; t < trials; ++t) {
            const auto& r = results[ri * trials + t];
            row.bit_precision += r.bits;
            row.min_bit_precision = std::min(row.min_bit_precision, r.bits);
            if (r.feature) feat += *r.feature;
            if (r.chamfer) cham += *r.chamfer;
            if (std::isfinite(r.psnr)) psnr += r.psnr; else finite_psnr = false;
            tp += r.tp;
            det += r.detected;
            truth += r.truth;
        }
        row.bit_precision /= double(trials);
        if (!model.config.has(Modality::bits1d)) row.min_bit_precision = 0.0;
        if (model.config.has(Modality::feat2d)) row.feature_rel_mse = feat / double(trials);
        if (model.config.has(Modality::obj3d)) row.chamfer = cham / double(trials);
        row.sh_psnr = finite_psnr ? psnr / double(trials) : std::numeric_limits<double>::infinity();
        row.mask_precision = det ? double(tp) / double(det) : 0.0;
        row.mask_recall = truth ? double(tp) / double(truth) : 1.0;
        report.rows.push_back(row);
    }
    return report;
}

Json RobustnessReport::to_json() const {
    Json rows_json = Json::array();
    for (const auto& r : rows) {
        Json j;
        j["rate"] = r.rate;
        j["trials"] = r.trials;
        j["bit_precision"] = r.bit_precision;
        j["min_bit_precision"] = r.min_bit_precision;
        j["feature_rel_mse"] = r.feature_rel_mse ? finite_or_text(*r.feature_rel_mse) : Json(nullptr);
        j["chamfer"] = r.chamfer ? finite_or_text(*r.chamfer) : Json(nullptr);
        j["sh_psnr"] = finite_or_text(r.sh_psnr);
        j["mask_precision"] = r.mask_precision;
        j["mask_recall"] = r.mask_recall;
        rows_json.push_back(j);
    }
    return Json{{"rows", rows_json}};
}

std::string RobustnessReport::to_table() const {
    std::ostringstream os;
    auto opt = [](const std::optional<double>& v) {
        if (!v) return std::string("-");
        std::ostringstream s;
        s << std::scientific << std::setprecision(3) << *v;
        return s.str();
    };
    os << std::left << std::setw(7) << "rate" << std::setw(8) << "trials" << std::setw(11)
       << "bit_prec" << std::setw(11) << "min_prec" << std::setw(12) << "feat_rmse" << std::setw(12)
       << "chamfer" << std::setw(10) << "sh_psnr" << std::setw(10) << "mask_p" << "mask_r\n";
    for (const auto& r : rows) {
        os << std::left << std::fixed << std::setprecision(2) << std::setw(7) << r.rate
           << std::setw(8) << r.trials << std::setprecision(5) << std::setw(11) << r.bit_precision
           << std::setw(11) << r.min_bit_precision << std::setw(12) << opt(r.feature_rel_mse)
           << std::setw(12) << opt(r.chamfer) << std::setprecision(2) << std::setw(10) << r.sh_psnr
           << std::setprecision(5) << std::setw(10) << r.mask_precision << r.mask_recall << "\n";
    }
    return os.str();
}

}  // namespace xsgs::eval
