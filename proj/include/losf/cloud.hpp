#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "losf/common.hpp"

namespace losf {

// A raw point cloud together with its normalization into the [-0.5, 0.5] box:
// normalized = (raw - center) * scale, isotropic so aspect is preserved.
struct PointCloud {
    std::vector<Vec3f> points;  // normalized coordinates
    Vec3f center = Vec3f::Zero();
    float scale = 1.0f;

    std::size_t size() const { return points.size(); }
    Vec3f denormalize(const Vec3f& p) const { return p / scale + center; }
    Vec3f normalize_point(const Vec3f& raw) const { return (raw - center) * scale; }
};

// center = bounding-box midpoint, scale = 1 / longest bbox edge.
inline PointCloud normalize_cloud(std::span<const Vec3f> raw) {
    if (raw.empty()) throw ContractError("normalize_cloud: empty cloud");
    Vec3f lo = raw[0], hi = raw[0];
    for (const Vec3f& p : raw) {
        if (!p.allFinite()) throw ContractError("normalize_cloud: non-finite coordinate");
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    float extent = (hi - lo).maxCoeff();
    if (extent <= 0.0f) throw ContractError("normalize_cloud: all points coincident");
    PointCloud cloud;
    cloud.center = 0.5f * (lo + hi);
    cloud.scale = 1.0f / extent;
    cloud.points.reserve(raw.size());
    for (const Vec3f& p : raw) cloud.points.push_back((p - cloud.center) * cloud.scale);
    return cloud;
}

// ---------------------------------------------------------------------------
// ASCII XYZ: one "x y z" per line (extra columns ignored).

inline std::vector<Vec3f> read_xyz(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot open point cloud: " + path);
    std::vector<Vec3f> points;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        double x, y, z;
        if (!(ls >> x)) continue;  // blank line
        if (!(ls >> y >> z))
            throw FormatError(path + ":" + std::to_string(lineno) + ": expected x y z", 0);
        points.emplace_back(float(x), float(y), float(z));
    }
    if (points.empty()) throw ContractError("empty point cloud: " + path);
    return points;
}

inline void write_xyz(const std::string& path, std::span<const Vec3f> points) {
    std::ofstream out(path);
    if (!out) throw ContractError("cannot open for writing: " + path);
    char buf[96];
    for (const Vec3f& p : points) {
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", double(p.x()), double(p.y()), double(p.z()));
        out << buf;
    }
    if (!out) throw ContractError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Binary little-endian PLY, vertex element with at least float x/y/z.

namespace detail {

struct PlyProperty {
    std::string name;
    std::string type;
    bool is_list = false;
    std::string count_type;

    static std::size_t type_size(const std::string& t) {
        if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
        if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
        if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
            t == "float32")
            return 4;
        if (t == "double" || t == "float64") return 8;
        throw ContractError("PLY: unknown property type '" + t + "'");
    }
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
};

struct PlyHeader {
    std::vector<PlyElement> elements;
    std::size_t data_offset = 0;
};

inline PlyHeader parse_ply_header(const std::vector<std::uint8_t>& buf, const std::string& path) {
    PlyHeader header;
    std::size_t pos = 0;
    auto next_line = [&]() {
        std::size_t start = pos;
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
        std::string line(reinterpret_cast<const char*>(buf.data() + start), pos - start);
        if (pos < buf.size()) ++pos;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
    };
    if (next_line() != "ply") throw FormatError(path + ": not a PLY file", 0);
    bool fmt_seen = false;
    for (;;) {
        if (pos >= buf.size()) throw FormatError(path + ": PLY header has no end_header", pos);
        std::string line = next_line();
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "comment" || tok == "obj_info" || tok.empty()) continue;
        if (tok == "format") {
            std::string fmt, ver;
            ls >> fmt >> ver;
            if (fmt != "binary_little_endian")
                throw FormatError(path + ": unsupported PLY format '" + fmt +
                                  "' (need binary_little_endian)", 0);
            fmt_seen = true;
        } else if (tok == "element") {
            PlyElement el;
            ls >> el.name >> el.count;
            header.elements.push_back(el);
        } else if (tok == "property") {
            if (header.elements.empty()) throw FormatError(path + ": property before element", pos);
            PlyProperty prop;
            std::string t;
            ls >> t;
            if (t == "list") {
                prop.is_list = true;
                ls >> prop.count_type >> prop.type >> prop.name;
            } else {
                prop.type = t;
                ls >> prop.name;
            }
            header.elements.back().properties.push_back(prop);
        } else if (tok == "end_header") {
            break;
        } else {
            throw FormatError(path + ": unexpected PLY header token '" + tok + "'", pos);
        }
    }
    if (!fmt_seen) throw FormatError(path + ": PLY header missing format line", 0);
    header.data_offset = pos;
    return header;
}

}  // namespace detail

inline std::vector<Vec3f> read_ply_cloud(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open point cloud: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    detail::PlyHeader header = detail::parse_ply_header(buf, path);
    std::size_t pos = header.data_offset;
    std::vector<Vec3f> points;
    for (const auto& el : header.elements) {
        if (el.name != "vertex") {
            // Skip a fixed-size element; list-typed elements after the vertex
            // data are irrelevant and not traversed.
            bool has_list = false;
            std::size_t row = 0;
            for (const auto& p : el.properties) {
                if (p.is_list) has_list = true;
                else row += detail::PlyProperty::type_size(p.type);
            }
            if (!points.empty()) break;
            if (has_list) throw FormatError(path + ": list element precedes vertex data", pos);
            pos += row * el.count;
            continue;
        }
        int off_x = -1, off_y = -1, off_z = -1;
        std::string type_x;
        std::size_t row = 0;
        for (const auto& p : el.properties) {
            if (p.is_list) throw FormatError(path + ": list property in vertex element", pos);
            if (p.name == "x") { off_x = int(row); type_x = p.type; }
            if (p.name == "y") off_y = int(row);
            if (p.name == "z") off_z = int(row);
            row += detail::PlyProperty::type_size(p.type);
        }
        if (off_x < 0 || off_y < 0 || off_z < 0)
            throw FormatError(path + ": vertex element lacks x/y/z", pos);
        bool is_double = (type_x == "double" || type_x == "float64");
        if (!is_double && type_x != "float" && type_x != "float32")
            throw FormatError(path + ": x/y/z must be float or double", pos);
        if (pos + row * el.count > buf.size())
            throw FormatError(path + ": vertex data truncated", pos);
        points.reserve(el.count);
        for (std::size_t i = 0; i < el.count; ++i) {
            const std::uint8_t* rec = buf.data() + pos + i * row;
            auto get = [&](int off) {
                return is_double ? float(load_le<double>(rec + off)) : load_le<float>(rec + off);
            };
            points.emplace_back(get(off_x), get(off_y), get(off_z));
        }
        pos += row * el.count;
    }
    if (points.empty()) throw FormatError(path + ": no vertex element", 0);
    return points;
}

inline void write_ply_cloud(const std::string& path, std::span<const Vec3f> points) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot open for writing: " + path);
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << points.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\nend_header\n";
    std::vector<std::uint8_t> rec(12);
    for (const Vec3f& p : points) {
        store_le(rec.data(), p.x());
        store_le(rec.data() + 4, p.y());
        store_le(rec.data() + 8, p.z());
        out.write(reinterpret_cast<const char*>(rec.data()), 12);
    }
    if (!out) throw ContractError("write failed: " + path);
}

// Dispatch on extension: ".xyz" text or ".ply" binary.
inline std::vector<Vec3f> read_cloud_file(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".ply") return read_ply_cloud(path);
    return read_xyz(path);
}

inline void write_cloud_file(const std::string& path, std::span<const Vec3f> points) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".ply") write_ply_cloud(path, points);
    else write_xyz(path, points);
}

}  // namespace losf
