// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/gscloud.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace xsgs::gscloud {

static_assert(std::endian::native == std::endian::little,
              "PLY I/O assumes a little-endian host");

std::vector<std::string> ply_property_names() {
    std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (std::size_t i = 0; i < kShRest; ++i) names.push_back("f_rest_" + std::to_string(i));
    names.insert(names.end(), {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
                               "rot_2", "rot_3"});
    return names;
}

namespace {

/// Pointers into a point in canonical PLY property order.
std::array<float*, kPlyProperties> fields(GaussianPoint& p) {
    std::array<float*, kPlyProperties> f{};
    std::size_t k = 0;
    for (auto& v : p.position) f[k++] = &v;
    for (auto& v : p.normal) f[k++] = &v;
    for (auto& v : p.sh_dc) f[k++] = &v;
    for (auto& v : p.sh_rest) f[k++] = &v;
    f[k++] = &p.opacity;
    for (auto& v : p.scale) f[k++] = &v;
    for (auto& v : p.rotation) f[k++] = &v;
    return f;
}

std::string header_for(std::size_t n) {
    std::ostringstream os;
    os << "ply\nformat binary_little_endian 1.0\nelement vertex " << n << "\n";
    for (const auto& name : ply_property_names()) os << "property float " << name << "\n";
    os << "end_header\n";
    return os.str();
}

}  // namespace

std::array<float, kPlyProperties> ply_values(const GaussianPoint& p) {
    std::array<float, kPlyProperties> out{};
    auto f = fields(const_cast<GaussianPoint&>(p));
    for (std::size_t i = 0; i < kPlyProperties; ++i) out[i] = *f[i];
    return out;
}

// ---------------------------------------------------------------------------
// SlotSpec

SlotSpec::SlotSpec() : SlotSpec(std::vector<std::size_t>{3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14}) {}

SlotSpec::SlotSpec(std::vector<std::size_t> per_channel) : per_channel_(std::move(per_channel)) {
    if (per_channel_.empty()) {
        throw SpecError("SlotSpec: empty index set");
    }
    std::vector<std::size_t> sorted = per_channel_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw SpecError("SlotSpec: duplicate per-channel index");
    }
    for (auto i : per_channel_) {
        if (i >= kShRestPerChannel) {
            throw SpecError("SlotSpec: index " + std::to_string(i) + " outside [0, 14]");
        }
    }
    for (std::size_t c = 0; c < 3; ++c) {
        for (auto i : per_channel_) flat_.push_back(c * kShRestPerChannel + i);
    }
}

SlotSpec SlotSpec::all_rest() {
    std::vector<std::size_t> idx(kShRestPerChannel);
    std::iota(idx.begin(), idx.end(), 0);
    return SlotSpec(std::move(idx));
}

// ---------------------------------------------------------------------------
// PLY

GaussianCloud read_ply(std::span<const std::uint8_t> bytes) {
    static const std::string kEnd = "end_header\n";
    const std::string_view text(reinterpret_cast<const char*>(bytes.data()),
                                std::min<std::size_t>(bytes.size(), 1 << 16));
    const auto end = text.find(kEnd);
    if (text.substr(0, 4) != "ply\n" && text.substr(0, 5) != "ply\r\n") {
        throw ParseError("read_ply: missing 'ply' magic");
    }
    if (end == std::string_view::npos) {
        throw ParseError("read_ply: no end_header within the first 64 KiB");
    }
    const std::size_t body_offset = end + kEnd.size();

    std::istringstream header{std::string(text.substr(0, end))};
    std::string line;
    std::size_t vertex_count = 0;
    bool have_vertex = false;
    bool in_vertex = false;
    std::vector<std::string> props;
    while (std::getline(header, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian") {
                throw FormatError("read_ply: unsupported format '" + fmt +
                                  "' (only binary_little_endian)");
            }
        } else if (word == "element") {
            std::string name;
            long long count = -1;
            ls >> name >> count;
            if (name != "vertex") {
                throw FormatError("read_ply: unsupported element '" + name + "'");
            }
            if (count < 0) {
                throw ParseError("read_ply: bad vertex count");
            }
            have_vertex = true;
            in_vertex = true;
            vertex_count = static_cast<std::size_t>(count);
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            if (!in_vertex) {
                throw ParseError("read_ply: property before element");
            }
            if (type != "float" && type != "float32") {
                throw FormatError("read_ply: property '" + name + "' has unsupported type '" +
                                  type + "'");
            }
            props.push_back(name);
        }
    }
    if (!have_vertex) {
        throw ParseError("read_ply: no vertex element");
    }

    std::map<std::string, std::size_t> column;
    for (std::size_t i = 0; i < props.size(); ++i) column[props[i]] = i;
    const auto names = ply_property_names();
    std::array<std::size_t, kPlyProperties> source{};
    for (std::size_t i = 0; i < kPlyProperties; ++i) {
        auto it = column.find(names[i]);
        if (it == column.end()) {
            throw ParseError("read_ply: missing property '" + names[i] + "'");
        }
        source[i] = it->second;
    }

    if (vertex_count == 0) {
        throw EmptyCloudError("read_ply: cloud has no vertices");
    }
    const std::size_t stride = props.size() * sizeof(float);
    const std::size_t need = vertex_count * stride;
    if (bytes.size() < body_offset + need) {
        throw LengthError("read_ply: body holds " + std::to_string(bytes.size() - body_offset) +
                          " bytes, header promises " + std::to_string(need));
    }

    GaussianCloud cloud;
    cloud.points.resize(vertex_count);
    std::vector<float> row(props.size());
    for (std::size_t v = 0; v < vertex_count; ++v) {
        std::memcpy(row.data(), bytes.data() + body_offset + v * stride, stride);
        auto f = fields(cloud.points[v]);
        for (std::size_t i = 0; i < kPlyProperties; ++i) *f[i] = row[source[i]];
    }
    return cloud;
}

std::vector<std::uint8_t> write_ply(const GaussianCloud& cloud) {
    validate_finite(cloud);
    const std::string header = header_for(cloud.size());
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + cloud.size() * kPlyProperties * sizeof(float));
    for (const auto& p : cloud.points) {
        const auto v = ply_values(p);
        const auto* raw = reinterpret_cast<const std::uint8_t*>(v.data());
        out.insert(out.end(), raw, raw + sizeof(v));
    }
    return out;
}

GaussianCloud read_ply_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open '" + path + "'");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    try {
        auto cloud = read_ply(bytes);
        cloud.source_path = path;
        return cloud;
    } catch (const Error& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void write_ply_file(const GaussianCloud& cloud, const std::string& path) {
    const auto bytes = write_ply(cloud);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw SerializationError("cannot write '" + path + "'");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void validate_finite(const GaussianCloud& cloud) {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (float v : ply_values(cloud.points[i])) {
            if (!std::isfinite(v)) {
                throw SerializationError("non-finite field in point " + std::to_string(i));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Ordering and slots

SortResult sort_canonical(const GaussianCloud& cloud) {
    std::vector<std::size_t> order(cloud.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return cloud.points[a].position < cloud.points[b].position;
    });
    SortResult out;
    out.cloud.source_path = cloud.source_path;
    out.cloud.points.reserve(cloud.size());
    out.permutation.resize(cloud.size());
    for (std::size_t j = 0; j < order.size(); ++j) {
        out.cloud.points.push_back(cloud.points[order[j]]);
        out.permutation[order[j]] = j;
    }
    out.cloud.sort_permutation = out.permutation;
    return out;
}

std::vector<double> writable_view(const GaussianPoint& point, const SlotSpec& spec) {
    std::vector<double> out;
    out.reserve(spec.width());
    for (auto i : spec.flat()) out.push_back(point.sh_rest[i]);
    return out;
}

void write_back(GaussianPoint& point, const SlotSpec& spec, std::span<const double> values) {
    if (values.size() != spec.width()) {
        throw DimensionError("write_back: " + std::to_string(values.size()) +
                             " values for slot width " + std::to_string(spec.width()));
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
        point.sh_rest[spec.flat()[k]] = static_cast<float>(values[k]);
    }
}

GaussianCloud synth_cloud(std::size_t n, std::uint64_t seed) {
    if (n == 0) {
        throw EmptyCloudError("synth_cloud: n must be >= 1");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> pos(-1.0f, 1.0f);
    std::normal_distribution<float> scale(-4.0f, 0.5f);
    std::normal_distribution<float> unit(0.0f, 1.0f);
    std::normal_distribution<float> opacity(2.0f, 1.0f);
    std::normal_distribution<float> dc(0.0f, 0.3f);
    std::normal_distribution<float> rest(0.0f, 0.05f);

    GaussianCloud cloud;
    cloud.points.resize(n);
    for (auto& p : cloud.points) {
        for (auto& v : p.position) v = pos(rng);
        for (auto& v : p.scale) v = scale(rng);
        float norm2 = 0.0f;
        do {
            norm2 = 0.0f;
            for (auto& v : p.rotation) {
                v = unit(rng);
                norm2 += v * v;
            }
        } while (norm2 < 1e-12f);
        const float inv = 1.0f / std::sqrt(norm2);
        for (auto& v : p.rotation) v *= inv;
        p.opacity = opacity(rng);
        for (auto& v : p.sh_dc) v = dc(rng);
        for (auto& v : p.sh_rest) v = rest(rng);
    }
    return cloud;
}

std::array<double, kPointFeatures> point_features(const GaussianPoint& p) {
    std::array<double, kPointFeatures> f{};
    std::size_t k = 0;
    for (float v : p.position) f[k++] = v;
    for (float v : p.scale) f[k++] = v;
    for (float v : p.rotation) f[k++] = v;
    f[k++] = p.opacity;
    for (float v : p.sh_dc) f[k++] = v;
    for (float v : p.sh_rest) f[k++] = v;
    return f;
}

tensor::Tensor feature_matrix(const GaussianCloud& cloud) {
    std::vector<double> data;
    data.reserve(cloud.size() * kPointFeatures);
    for (const auto& p : cloud.points) {
        const auto f = point_features(p);
        data.insert(data.end(), f.begin(), f.end());
    }
    return tensor::Tensor::from(cloud.size(), kPointFeatures, std::move(data));
}

tensor::Tensor gate_features(const GaussianCloud& cloud) {
    std::vector<double> data;
    data.reserve(cloud.size() * kPointFeatures);
    for (const auto& p : cloud.points) {
        auto f = point_features(p);
        for (std::size_t j = feature::sh_rest; j < kPointFeatures; ++j) f[j] *= kSlotScale;
        data.insert(data.end(), f.begin(), f.end());
    }
    return tensor::Tensor::from(cloud.size(), kPointFeatures, std::move(data));
}

tensor::Tensor slot_matrix(const GaussianCloud& cloud, std::span<const std::size_t> index,
                           const SlotSpec& spec) {
    std::vector<double> data;
    data.reserve(index.size() * spec.width());
    for (auto i : index) {
        for (auto s : spec.flat()) data.push_back(cloud.points.at(i).sh_rest[s]);
    }
    return tensor::Tensor::from(index.size(), spec.width(), std::move(data));
}

}  // namespace xsgs::gscloud
