// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace xsgs::train {

namespace {

constexpr char kMagic[4] = {'X', 'S', 'G', 'S'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <typename T>
    void pod(T v) {
        bytes(&v, sizeof(v));
    }
    void record(const std::string& name, const Tensor& t) {
        if (name.size() > 0xffff) {
            throw SerializationError("tensor name too long: " + name);
        }
        pod<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        bytes(name.data(), name.size());
        pod<std::uint8_t>(2);
        pod<std::uint32_t>(static_cast<std::uint32_t>(t.rows()));
        pod<std::uint32_t>(static_cast<std::uint32_t>(t.cols()));
        for (double v : t.data()) pod<float>(static_cast<float>(v));
    }
    void record(const std::string& name, const std::vector<double>& v, std::size_t rows,
                std::size_t cols) {
        record(name, Tensor::from(rows, cols, v));
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
    void bytes(void* p, std::size_t n) {
        if (pos_ + n > b_.size()) {
            throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
        }
        std::memcpy(p, b_.data() + pos_, n);
        pos_ += n;
    }
    template <typename T>
    T pod() {
        T v;
        bytes(&v, sizeof(v));
        return v;
    }
    bool done() const { return pos_ == b_.size(); }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

struct Record {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

std::map<std::string, Record> read_records(Reader& r) {
    std::map<std::string, Record> out;
    const auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.pod<std::uint16_t>();
        std::string name(len, '\0');
        r.bytes(name.data(), len);
        Record rec;
        const auto rank = r.pod<std::uint8_t>();
        std::size_t total = 1;
        for (std::uint8_t k = 0; k < rank; ++k) {
            rec.dims.push_back(r.pod<std::uint32_t>());
            total *= rec.dims.back();
        }
        if (total > (std::size_t(1) << 31)) {
            throw ParseError("checkpoint record '" + name + "' has an implausible size");
        }
        rec.data.resize(total);
        r.bytes(rec.data.data(), total * sizeof(float));
        if (!out.emplace(name, std::move(rec)).second) {
            throw ParseError("checkpoint repeats tensor '" + name + "'");
        }
    }
    return out;
}

std::string shape_text(const std::vector<std::uint32_t>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
    return s + "]";
}

const Record& find(std::map<std::string, Record>& records, const std::string& name,
                   std::size_t rows, std::size_t cols) {
    auto it = records.find(name);
    if (it == records.end()) {
        throw SerializationError("checkpoint lacks tensor '" + name + "'");
    }
    const auto& d = it->second.dims;
    if (d.size() != 2 || d[0] != rows || d[1] != cols) {
        throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_text(d) +
                             ", model expects [" + std::to_string(rows) + "x" +
                             std::to_string(cols) + "]");
    }
    return it->second;
}

void load_params(std::map<std::string, Record>& records, tensor::ParamList params) {
    for (auto& p : params) {
        const Record& rec = find(records, p.name, p.value.rows(), p.value.cols());
        auto dst = p.value.mutable_data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = rec.data[i];
        records.erase(p.name);
    }
}

void load_moments(std::map<std::string, Record>& records, const std::string& prefix,
                  const tensor::ParamList& params, tensor::AdamState& state) {
    state = tensor::AdamState::for_params(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        for (auto [tag, buf] : {std::pair{"m", &state.m[i]}, std::pair{"v", &state.v[i]}}) {
            const std::string name = prefix + "." + tag + "/" + p.name;
            const Record& rec = find(records, name, p.value.rows(), p.value.cols());
            buf->assign(rec.data.begin(), rec.data.end());
            records.erase(name);
        }
    }
}

void write_moments(Writer& w, const std::string& prefix, const tensor::ParamList& params,
                   const tensor::AdamState& state) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        w.record(prefix + ".m/" + p.name, state.m.at(i), p.value.rows(), p.value.cols());
        w.record(prefix + ".v/" + p.name, state.v.at(i), p.value.rows(), p.value.cols());
    }
}

Json read_header(Reader& r) {
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw ParseError("not a checkpoint (bad magic)");
    }
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint version " + std::to_string(version) +
                           " cannot be migrated to version " + std::to_string(kCheckpointVersion));
    }
    const auto len = r.pod<std::uint32_t>();
    std::string text(len, '\0');
    r.bytes(text.data(), len);
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint config block: ") + e.what());
    }
}

void load_body(Reader& r, const Json& header, TrainState& target) {
    auto params = read_records(r);
    auto optim = read_records(r);
    if (!r.done()) {
        throw ParseError("checkpoint has trailing bytes");
    }
    load_params(params, target.model.injector_params());
    load_params(params, target.model.detector_params());
    if (!params.empty()) {
        throw SerializationError("checkpoint tensor '" + params.begin()->first +
                                 "' does not belong to this model");
    }
    load_moments(optim, "optim.injector", target.model.injector_params(), target.injector);
    load_moments(optim, "optim.detector", target.model.detector_params(), target.detector);
    if (!optim.empty()) {
        throw SerializationError("checkpoint optimizer record '" + optim.begin()->first +
                                 "' does not belong to this model");
    }
    const Json& s = header.at("state");
    target.step = s.at("step").get<std::int64_t>();
    target.injector.step = s.at("injector_step").get<std::int64_t>();
    target.detector.step = s.at("detector_step").get<std::int64_t>();
}

}  // namespace

std::vector<std::uint8_t> save_checkpoint(const TrainState& state) {
    Json header;
    header["config"] = state.model.config.to_json();
    header["state"] = {{"step", state.step},
                       {"injector_step", state.injector.step},
                       {"detector_step", state.detector.step}};
    const std::string text = canonical_json(header);
    Writer w;
    w.bytes(kMagic, 4);
    w.pod<std::uint32_t>(kCheckpointVersion);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
    w.bytes(text.data(), text.size());

    const auto inj = state.model.injector_params();
    const auto det = state.model.detector_params();
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(inj.size() + det.size()));
    for (const auto& p : inj) w.record(p.name, p.value);
    for (const auto& p : det) w.record(p.name, p.value);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(2 * (inj.size() + det.size())));
    write_moments(w, "optim.injector", inj, state.injector);
    write_moments(w, "optim.detector", det, state.detector);
    return w.take();
}

TrainState load_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    const Json header = read_header(r);
    TrainState state;
    try {
        state = TrainState::create(TrainConfig::from_json(header.at("config")));
        load_body(r, header, state);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint header: ") + e.what());
    }
    return state;
}

void load_checkpoint_into(std::span<const std::uint8_t> bytes, TrainState& target) {
    Reader r(bytes);
    const Json header = read_header(r);
    try {
        load_body(r, header, target);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint header: ") + e.what());
    }
}

void save_checkpoint_file(const TrainState& state, const std::string& path) {
    const auto bytes = save_checkpoint(state);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw SerializationError("cannot write checkpoint '" + path + "'");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

TrainState load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open checkpoint '" + path + "'");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return load_checkpoint(bytes);
}

}  // namespace xsgs::train
