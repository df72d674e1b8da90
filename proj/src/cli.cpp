// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>

#include "xsgs/checkpoint.hpp"
#include "xsgs/eval_attack.hpp"
#include "xsgs/train.hpp"

namespace xsgs::cli {

namespace fs = std::filesystem;
using train::Json;
using payload::Modality;

namespace {

/// Raised for argument combinations CLI11 cannot express.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void require_parent_dir(const std::string& path, const std::string& what) {
    const fs::path parent = fs::absolute(fs::path(path)).parent_path();
    if (!fs::is_directory(parent)) {
        throw UsageError(what + ": directory " + parent.string() + " does not exist");
    }
}

Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void write_text_atomic(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw SerializationError("cannot write " + tmp);
        out << text;
        if (!out) throw SerializationError("short write to " + tmp);
    }
    fs::rename(tmp, path);
}

void save_checkpoint_atomic(const train::TrainState& state, const std::string& path) {
    const std::string tmp = path + ".tmp";
    train::save_checkpoint_file(state, tmp);
    fs::rename(tmp, path);
}

Json header_json(const payload::ObjectHeader& h) {
    return Json{{"min", h.min}, {"extent", h.extent}, {"mean", h.mean}, {"spread", h.spread}};
}

payload::ObjectHeader header_from_json(const Json& j) {
    try {
        payload::ObjectHeader h;
        h.min = j.at("min").get<std::array<double, 3>>();
        h.extent = j.at("extent").get<std::array<double, 3>>();
        h.mean = j.at("mean").get<std::array<double, payload::kObjWidth>>();
        h.spread = j.at("spread").get<std::array<double, payload::kObjWidth>>();
        return h;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("object header: ") + e.what());
    }
}

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// Subcommands

struct TrainArgs {
    std::string config;
    std::string resume;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    const TrainFile file = TrainFile::load(a.config);
    train::TrainState state = a.resume.empty() ? train::TrainState::create(file.config)
                                               : train::load_checkpoint_file(a.resume);
    if (!(state.model.config == file.config)) {
        throw ConfigError("resume: checkpoint was trained with a different config");
    }
    std::optional<std::ofstream> metrics;
    if (file.metrics) {
        metrics.emplace(*file.metrics, a.resume.empty() ? std::ios::trunc : std::ios::app);
        if (!*metrics) throw SerializationError("cannot open " + *file.metrics);
    }
    out << "training " << file.config.preset << " from step " << state.step << " to "
        << file.config.steps << "\n";
    train::train(state, [&](const train::StepMetrics& m) {
        if (metrics) {
            *metrics << Json{{"step", m.step},   {"loss", m.injector_loss}, {"sh", m.sh},
                             {"bits", m.bits},   {"feat", m.feat},          {"obj", m.obj},
                             {"mask", m.mask},   {"codec", m.codec},
                             {"bit_accuracy", m.bit_accuracy},
                             {"detect_accuracy", m.detect_accuracy}}
                            .dump()
                     << "\n";
        }
        const std::int64_t done = m.step + 1;
        if (file.log_every > 0 && done % std::int64_t(file.log_every) == 0) {
            out << "step " << done << " loss " << fixed(m.injector_loss, 5) << " bit_acc "
                << fixed(m.bit_accuracy, 4) << " detect_acc " << fixed(m.detect_accuracy, 5)
                << "\n";
        }
        if (file.checkpoint_every > 0 && done % std::int64_t(file.checkpoint_every) == 0) {
            save_checkpoint_atomic(state, file.checkpoint);
        }
    });
    save_checkpoint_atomic(state, file.checkpoint);
    out << "saved " << file.checkpoint << " at step " << state.step << "\n";
    return kExitOk;
}

struct InjectArgs {
    std::string ckpt, cloud, bits, feature, object, out, sidecar;
    bool in_place = false;
};

int cmd_inject(const InjectArgs& a, std::ostream& out) {
    if (a.bits.empty() && a.feature.empty() && a.object.empty()) {
        throw UsageError("inject: pass at least one of --bits, --feature, --object");
    }
    if (fs::weakly_canonical(a.out) == fs::weakly_canonical(a.cloud) && !a.in_place) {
        throw UsageError("inject: --out equals --cloud; pass --in-place to overwrite the input");
    }
    require_parent_dir(a.out, "--out");
    const std::string sidecar = a.sidecar.empty() ? a.out + ".json" : a.sidecar;
    require_parent_dir(sidecar, "--sidecar");

    const train::TrainState state = train::load_checkpoint_file(a.ckpt);
    const auto& model = state.model;
    const gscloud::GaussianCloud cloud = gscloud::read_ply_file(a.cloud);
    std::optional<std::vector<std::uint8_t>> bits;
    std::optional<payload::Feature> feature;
    std::optional<gscloud::GaussianCloud> object;
    if (!a.bits.empty()) bits = payload::bits_from_hex(a.bits);
    if (!a.feature.empty()) feature = payload::read_feature_file(a.feature);
    if (!a.object.empty()) object = gscloud::read_ply_file(a.object);

    const train::PayloadDraw draw = train::encode_payload(
        model, bits ? &*bits : nullptr, feature ? &*feature : nullptr, object ? &*object : nullptr);
    const train::Watermarked wm = train::embed(cloud, draw, model);

    // Back to the input's point order so only carrier SH values differ.
    const auto perm = gscloud::sort_canonical(cloud).permutation;
    gscloud::GaussianCloud result;
    result.points.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) result.points.push_back(wm.cloud.points[perm[i]]);

    const std::string tmp = a.out + ".tmp";
    gscloud::write_ply_file(result, tmp);
    fs::rename(tmp, a.out);

    Json side;
    side["bits_length"] = model.config.bits_length;
    Json carriers = Json::object();
    for (auto m : payload::kModalities) {
        if (wm.mask.has(m)) carriers[std::string(payload::modality_name(m))] = wm.mask.of(m).size();
    }
    side["carriers"] = carriers;
    const auto& obj = draw.sets[payload::index_of(Modality::obj3d)];
    side["object_header"] = obj && obj->object ? header_json(*obj->object) : Json(nullptr);
    write_text_atomic(sidecar, train::canonical_json(side) + "\n");

    const double psnr = eval::sh_psnr(gscloud::sort_canonical(cloud).cloud, wm.cloud, model.spec);
    out << "wrote " << a.out << " (" << result.size() << " points)\n";
    for (auto& [name, count] : carriers.items()) out << "  " << name << " carriers " << count << "\n";
    out << "  sh_psnr " << (std::isfinite(psnr) ? fixed(psnr, 2) : std::string("inf")) << " dB\n";
    out << "  sidecar " << sidecar << "\n";
    return kExitOk;
}

struct ExtractArgs {
    std::string ckpt, cloud, out_dir, header;
    double tau = 0.5;
};

int cmd_extract(const ExtractArgs& a, std::ostream& out) {
    require_parent_dir(a.out_dir, "--out-dir");
    const train::TrainState state = train::load_checkpoint_file(a.ckpt);
    const auto& model = state.model;
    const gscloud::GaussianCloud cloud = gscloud::read_ply_file(a.cloud);
    std::optional<payload::ObjectHeader> header;
    if (!a.header.empty()) {
        const Json side = read_json_file(a.header);
        if (side.contains("object_header") && !side["object_header"].is_null()) {
            header = header_from_json(side["object_header"]);
        }
    }
    const train::Extracted ex = train::extract(cloud, model, a.tau, header ? &*header : nullptr);
    const bool present = eval::watermark_present(ex.detection, model.config);

    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    Json report;
    report["points"] = cloud.size();
    report["watermark_detected"] = present;
    Json flagged = Json::object();
    for (auto m : payload::kModalities) {
        if (model.config.has(m)) {
            flagged[std::string(payload::modality_name(m))] =
                ex.detection.carriers[payload::index_of(m)].size();
        }
    }
    report["flagged"] = flagged;
    out << (present ? "watermark detected" : "no watermark detected") << " in " << a.cloud << "\n";
    for (auto& [name, count] : flagged.items()) {
        out << "  " << name << " flagged " << count << " of " << cloud.size() << " ("
            << fixed(double(count.get<std::size_t>()) / double(cloud.size()), 4) << ")\n";
    }
    if (ex.bits) {
        const std::string hex = payload::hex_from_bits(ex.bits->bits);
        double conf = 0.0;
        for (double c : ex.bits->confidence) conf += c;
        conf /= double(std::max<std::size_t>(1, ex.bits->confidence.size()));
        report["bits"] = {{"hex", hex}, {"mean_confidence", conf}};
        write_text_atomic((dir / "bits.hex").string(), hex + "\n");
        out << "  bits " << hex << " (mean confidence " << fixed(conf, 3) << ")\n";
    }
    if (ex.feature) {
        payload::write_feature_file(*ex.feature, (dir / "feature.bin").string());
        report["feature"] = "feature.bin";
        out << "  feature written to " << (dir / "feature.bin").string() << "\n";
    }
    if (ex.object) {
        gscloud::write_ply_file(*ex.object, (dir / "object.ply").string());
        report["object"] = {{"file", "object.ply"}, {"points", ex.object->size()},
                            {"normalized", !header.has_value()}};
        out << "  object with " << ex.object->size() << " points written to "
            << (dir / "object.ply").string() << "\n";
    }
    write_text_atomic((dir / "report.json").string(), train::canonical_json(report) + "\n");
    return kExitOk;
}

struct DetectArgs {
    std::string ckpt, cloud, masks;
    double tau = 0.5;
};

int cmd_detect(const DetectArgs& a, std::ostream& out) {
    if (!a.masks.empty()) require_parent_dir(a.masks, "--masks");
    const train::TrainState state = train::load_checkpoint_file(a.ckpt);
    const auto& model = state.model;
    const gscloud::GaussianCloud cloud = gscloud::read_ply_file(a.cloud);
    const auto sorted = gscloud::sort_canonical(cloud);
    const auto det = model.detect.detect(sorted.cloud, a.tau);

    std::vector<std::size_t> original(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) original[sorted.permutation[i]] = i;
    Json masks = Json::object();
    out << "points " << cloud.size() << "\n";
    for (auto m : payload::kModalities) {
        if (!model.config.has(m)) continue;
        std::vector<std::size_t> idx;
        for (auto j : det.carriers[payload::index_of(m)]) idx.push_back(original[j]);
        std::sort(idx.begin(), idx.end());
        out << payload::modality_name(m) << " " << idx.size() << " ("
            << fixed(double(idx.size()) / double(cloud.size()), 4) << ")\n";
        masks[std::string(payload::modality_name(m))] = idx;
    }
    out << "watermark " << (eval::watermark_present(det, model.config) ? "present" : "absent")
        << "\n";
    if (!a.masks.empty()) write_text_atomic(a.masks, train::canonical_json(masks) + "\n");
    return kExitOk;
}

struct AttackArgs {
    std::string ckpt, cloud, rates = "0.05..0.25", json;
    std::size_t trials = 20;
    std::uint64_t seed = 0;
};

int cmd_attack(const AttackArgs& a, std::ostream& out) {
    const std::vector<double> rates = parse_rates(a.rates);
    if (!a.json.empty()) require_parent_dir(a.json, "--json");
    const train::TrainState state = train::load_checkpoint_file(a.ckpt);
    std::optional<gscloud::GaussianCloud> cover;
    if (!a.cloud.empty()) cover = gscloud::read_ply_file(a.cloud);
    const auto report = eval::run_robustness_suite(state.model, rates, a.trials, a.seed,
                                                   cover ? &*cover : nullptr);
    out << report.to_table();
    if (!a.json.empty()) write_text_atomic(a.json, train::canonical_json(report.to_json()) + "\n");
    return kExitOk;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
    const gscloud::GaussianCloud cloud = gscloud::read_ply_file(path);
    const auto names = gscloud::ply_property_names();
    out << "file " << path << "\nformat binary_little_endian 1.0\npoints " << cloud.size()
        << "\nproperties " << names.size() << "\n";
    if (cloud.empty()) return kExitOk;
    std::vector<double> lo(names.size(), std::numeric_limits<double>::infinity());
    std::vector<double> hi(names.size(), -std::numeric_limits<double>::infinity());
    std::vector<double> sum(names.size(), 0.0);
    std::size_t nonfinite = 0;
    for (const auto& p : cloud.points) {
        const auto v = gscloud::ply_values(p);
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!std::isfinite(v[i])) {
                ++nonfinite;
                continue;
            }
            lo[i] = std::min(lo[i], double(v[i]));
            hi[i] = std::max(hi[i], double(v[i]));
            sum[i] += v[i];
        }
    }
    out << std::left << std::setw(12) << "field" << std::right << std::setw(14) << "min"
        << std::setw(14) << "mean" << std::setw(14) << "max" << "\n";
    for (std::size_t i = 0; i < names.size(); ++i) {
        out << std::left << std::setw(12) << names[i] << std::right << std::scientific
            << std::setprecision(5) << std::setw(14) << lo[i] << std::setw(14)
            << sum[i] / double(cloud.size()) << std::setw(14) << hi[i] << "\n";
    }
    out << std::defaultfloat;
    if (nonfinite > 0) out << "non-finite values " << nonfinite << "\n";
    return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------
// TrainFile

Json TrainFile::to_json() const {
    Json j;
    j["config"] = config.to_json();
    j["paths"] = {{"checkpoint", checkpoint}};
    if (metrics) j["paths"]["metrics"] = *metrics;
    j["checkpoint_every"] = checkpoint_every;
    j["log_every"] = log_every;
    return j;
}

TrainFile TrainFile::from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("train file: expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "config" && key != "paths" && key != "checkpoint_every" && key != "log_every") {
            throw ConfigError("train file: unknown key '" + key + "'");
        }
    }
    if (!j.contains("config")) throw ConfigError("train file: missing 'config'");
    if (!j.contains("paths")) throw ConfigError("train file: missing 'paths'");
    TrainFile f;
    f.config = train::TrainConfig::from_json(j.at("config"));
    try {
        const Json& p = j.at("paths");
        if (!p.is_object()) throw ConfigError("train file: 'paths' must be an object");
        for (const auto& [key, _] : p.items()) {
            if (key != "checkpoint" && key != "metrics") {
                throw ConfigError("train file: unknown key '" + key + "' in paths");
            }
        }
        if (!p.contains("checkpoint")) throw ConfigError("train file: missing paths.checkpoint");
        f.checkpoint = p.at("checkpoint").get<std::string>();
        if (p.contains("metrics")) f.metrics = p.at("metrics").get<std::string>();
        if (j.contains("checkpoint_every")) f.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
        if (j.contains("log_every")) f.log_every = j.at("log_every").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train file: ") + e.what());
    }
    return f;
}

TrainFile TrainFile::load(const std::string& path) {
    TrainFile f = from_json(read_json_file(path));
    require_parent_dir(f.checkpoint, "paths.checkpoint");
    if (f.metrics) require_parent_dir(*f.metrics, "paths.metrics");
    return f;
}

std::vector<double> parse_rates(const std::string& text) {
    auto number = [&](const std::string& s) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != s.size()) throw ParseError("rates: bad number '" + s + "'");
        return v;
    };
    std::vector<double> rates;
    if (const auto dots = text.find(".."); dots != std::string::npos) {
        const std::string rest = text.substr(dots + 2);
        const auto colon = rest.find(':');
        const double lo = number(text.substr(0, dots));
        const double hi = number(rest.substr(0, colon));
        const double step = colon == std::string::npos ? 0.05 : number(rest.substr(colon + 1));
        if (!(step > 0.0) || hi < lo) throw ParseError("rates: empty range '" + text + "'");
        const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
        for (std::size_t i = 0; i <= count; ++i) {
            rates.push_back(std::round((lo + double(i) * step) * 1e9) / 1e9);
        }
    } else {
        std::stringstream ss(text);
        for (std::string item; std::getline(ss, item, ',');) rates.push_back(number(item));
    }
    if (rates.empty()) throw ParseError("rates: none given");
    for (double r : rates) {
        if (!(r >= 0.0 && r < 1.0)) throw DomainError("rates: " + std::to_string(r) + " outside [0, 1)");
    }
    return rates;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Embed, detect and extract watermarks in Gaussian splat PLY files", "xsgs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "xsgs 0.1.0");

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON config");
    train_cmd->add_option("--config", ta.config, "Training file")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--resume", ta.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

    InjectArgs ia;
    auto* inject_cmd = app.add_subcommand("inject", "Embed payloads into a cloud");
    inject_cmd->add_option("--ckpt", ia.ckpt)->required()->check(CLI::ExistingFile);
    inject_cmd->add_option("--cloud", ia.cloud, "Cover PLY")->required()->check(CLI::ExistingFile);
    inject_cmd->add_option("--bits", ia.bits, "1D payload as hex, most significant bit first");
    inject_cmd->add_option("--feature", ia.feature, "2D feature file")->check(CLI::ExistingFile);
    inject_cmd->add_option("--object", ia.object, "3D payload PLY")->check(CLI::ExistingFile);
    inject_cmd->add_option("--out", ia.out, "Output PLY")->required();
    inject_cmd->add_option("--sidecar", ia.sidecar, "Object header JSON (default: OUT.json)");
    inject_cmd->add_flag("--in-place", ia.in_place, "Allow --out to be the input file");

    ExtractArgs ea;
    auto* extract_cmd = app.add_subcommand("extract", "Detect carriers and decode payloads");
    extract_cmd->add_option("--ckpt", ea.ckpt)->required()->check(CLI::ExistingFile);
    extract_cmd->add_option("--cloud", ea.cloud)->required()->check(CLI::ExistingFile);
    extract_cmd->add_option("--out-dir", ea.out_dir)->required();
    extract_cmd->add_option("--header", ea.header, "Sidecar written by inject")->check(CLI::ExistingFile);
    extract_cmd->add_option("--tau", ea.tau, "Detection threshold")->check(CLI::Range(0.0, 1.0));

    DetectArgs da;
    auto* detect_cmd = app.add_subcommand("detect", "Report carrier masks and counts");
    detect_cmd->add_option("--ckpt", da.ckpt)->required()->check(CLI::ExistingFile);
    detect_cmd->add_option("--cloud", da.cloud)->required()->check(CLI::ExistingFile);
    detect_cmd->add_option("--masks", da.masks, "Write carrier indices as JSON");
    detect_cmd->add_option("--tau", da.tau, "Detection threshold")->check(CLI::Range(0.0, 1.0));

    AttackArgs aa;
    auto* attack_cmd = app.add_subcommand("attack", "Random pruning robustness suite");
    attack_cmd->add_option("--ckpt", aa.ckpt)->required()->check(CLI::ExistingFile);
    attack_cmd->add_option("--cloud", aa.cloud, "Cover PLY (default: held-out synthetic clouds)")
        ->check(CLI::ExistingFile);
    attack_cmd->add_option("--rates", aa.rates, "lo..hi[:step] or a comma list");
    attack_cmd->add_option("--trials", aa.trials)->check(CLI::PositiveNumber);
    attack_cmd->add_option("--seed", aa.seed);
    attack_cmd->add_option("--json", aa.json, "Write the report as JSON");

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect", "Print header and field statistics");
    inspect_cmd->add_option("--cloud", inspect_path)->required()->check(CLI::ExistingFile);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << app.version() << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "xsgs: " << e.what() << "\nRun with --help for usage.\n";
        return kExitUsage;
    }

    try {
        if (*train_cmd) return cmd_train(ta, out);
        if (*inject_cmd) return cmd_inject(ia, out);
        if (*extract_cmd) return cmd_extract(ea, out);
        if (*detect_cmd) return cmd_detect(da, out);
        if (*attack_cmd) return cmd_attack(aa, out);
        if (*inspect_cmd) return cmd_inspect(inspect_path, out);
    } catch (const UsageError& e) {
        err << "xsgs: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        err << "xsgs: " << e.what() << "\n";
        return kExitError;
    } catch (const std::exception& e) {
        err << "xsgs: unexpected failure: " << e.what() << "\n";
        return kExitError;
    }
    return kExitUsage;
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace xsgs::cli
