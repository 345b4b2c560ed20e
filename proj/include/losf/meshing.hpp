#pragma once

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "losf/mc_tables.hpp"
#include "losf/query.hpp"

namespace losf {

struct TriMesh {
    std::vector<Vec3f> vertices;
    std::vector<std::array<std::uint32_t, 3>> triangles;

    bool empty() const { return triangles.empty(); }
};

// ---------------------------------------------------------------------------
// Marching cubes on the UDF lattice. Since a UDF is nonnegative, the iso set
// is a double-layer shell around the zero set. Vertices are welded by global
// (grid vertex, axis) edge key and each edge is interpolated once in a fixed
// corner order, so shared cube edges produce identical vertices.

inline TriMesh marching_cubes(const UdfGrid& grid, float iso) {
    if (!(iso > 0.0f) || iso >= grid.sentinel)
        throw ContractError("marching_cubes: iso must be in (0, sentinel); sentinel cells would "
                            "generate spurious surface");
    const int R = grid.resolution;
    TriMesh mesh;
    std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
    edge_vertex.reserve(1 << 16);

    auto vertex_id = [&](int x, int y, int z) {
        return (std::uint64_t(z) * R + std::uint64_t(y)) * R + std::uint64_t(x);
    };
    auto edge_key = [&](std::uint64_t lo_id, int axis) { return lo_id * 3 + std::uint64_t(axis); };

    float vals[8];
    std::uint32_t everts[12];
    const float tol2 = 1e-24f * grid.spacing * grid.spacing * grid.spacing * grid.spacing;

    for (int k = 0; k + 1 < R; ++k)
        for (int j = 0; j + 1 < R; ++j)
            for (int i = 0; i + 1 < R; ++i) {
                int mask = 0;
                for (int c = 0; c < 8; ++c) {
                    vals[c] = grid.at(i + mc::kCornerOffset[c][0], j + mc::kCornerOffset[c][1],
                                      k + mc::kCornerOffset[c][2]);
                    if (vals[c] < iso) mask |= 1 << c;
                }
                std::uint16_t edges = mc::kEdgeTable[mask];
                if (edges == 0) continue;
                for (int e = 0; e < 12; ++e) {
                    if (!(edges & (1 << e))) continue;
                    int ca = mc::kEdgeCorners[e][0], cb = mc::kEdgeCorners[e][1];
                    int ax = i + mc::kCornerOffset[ca][0], ay = j + mc::kCornerOffset[ca][1],
                        az = k + mc::kCornerOffset[ca][2];
                    int bx = i + mc::kCornerOffset[cb][0], by = j + mc::kCornerOffset[cb][1],
                        bz = k + mc::kCornerOffset[cb][2];
                    int axis = bx != ax ? 0 : (by != ay ? 1 : 2);
                    // Canonical endpoint order: lower grid id first.
                    float fa = vals[ca], fb = vals[cb];
                    if (std::uint64_t ida = vertex_id(ax, ay, az), idb = vertex_id(bx, by, bz);
                        idb < ida) {
                        std::swap(ax, bx);
                        std::swap(ay, by);
                        std::swap(az, bz);
                        std::swap(fa, fb);
                    }
                    std::uint64_t key = edge_key(vertex_id(ax, ay, az), axis);
                    auto it = edge_vertex.find(key);
                    if (it != edge_vertex.end()) {
                        everts[e] = it->second;
                        continue;
                    }
                    float t = (iso - fa) / (fb - fa);
                    t = std::clamp(t, 0.0f, 1.0f);
                    Vec3f pa = grid.vertex(ax, ay, az);
                    Vec3f pb = grid.vertex(bx, by, bz);
                    Vec3f pos = pa + t * (pb - pa);
                    std::uint32_t idx = std::uint32_t(mesh.vertices.size());
                    mesh.vertices.push_back(pos);
                    edge_vertex.emplace(key, idx);
                    everts[e] = idx;
                }
                const std::int8_t* tri = mc::kTriTable[mask];
                for (int t = 0; tri[t] != -1; t += 3) {
                    std::uint32_t a = everts[tri[t]], b = everts[tri[t + 1]], c = everts[tri[t + 2]];
                    if (a == b || b == c || a == c) continue;
                    Vec3f cr = (mesh.vertices[b] - mesh.vertices[a])
                                   .cross(mesh.vertices[c] - mesh.vertices[a]);
                    if (cr.squaredNorm() <= tol2) continue;
                    mesh.triangles.push_back({a, b, c});
                }
            }
    return mesh;
}

// ---------------------------------------------------------------------------
// Trilinear sampling helpers for vertex projection.

namespace detail {

inline float grid_node_value(const UdfGrid& g, int x, int y, int z) {
    x = std::clamp(x, 0, g.resolution - 1);
    y = std::clamp(y, 0, g.resolution - 1);
    z = std::clamp(z, 0, g.resolution - 1);
    return g.at(x, y, z);
}

// Central differences, one-sided at the boundary.
inline Vec3f grid_node_gradient(const UdfGrid& g, int x, int y, int z) {
    auto diff = [&](int dx, int dy, int dz, int axis) {
        int lo[3] = {x - dx, y - dy, z - dz};
        int hi[3] = {x + dx, y + dy, z + dz};
        float span = 2.0f;
        if (lo[axis] < 0) { lo[axis] = 0; span = 1.0f; }
        if (hi[axis] > g.resolution - 1) { hi[axis] = g.resolution - 1; span = 1.0f; }
        return (grid_node_value(g, hi[0], hi[1], hi[2]) - grid_node_value(g, lo[0], lo[1], lo[2])) /
               (span * g.spacing);
    };
    return Vec3f(diff(1, 0, 0, 0), diff(0, 1, 0, 1), diff(0, 0, 1, 2));
}

struct TrilinearCell {
    int x0, y0, z0;
    float fx, fy, fz;
};

inline TrilinearCell locate(const UdfGrid& g, const Vec3f& p) {
    auto coord = [&](float v) {
        float c = (v - g.origin) / g.spacing;
        return std::clamp(c, 0.0f, float(g.resolution - 1));
    };
    float cx = coord(p.x()), cy = coord(p.y()), cz = coord(p.z());
    TrilinearCell cell;
    cell.x0 = std::min(int(cx), g.resolution - 2);
    cell.y0 = std::min(int(cy), g.resolution - 2);
    cell.z0 = std::min(int(cz), g.resolution - 2);
    cell.fx = cx - float(cell.x0);
    cell.fy = cy - float(cell.y0);
    cell.fz = cz - float(cell.z0);
    return cell;
}

template <typename F>
auto trilerp(const TrilinearCell& c, F corner) {
    auto lerp = [](auto a, auto b, float t) { return a + t * (b - a); };
    auto v00 = lerp(corner(0, 0, 0), corner(1, 0, 0), c.fx);
    auto v10 = lerp(corner(0, 1, 0), corner(1, 1, 0), c.fx);
    auto v01 = lerp(corner(0, 0, 1), corner(1, 0, 1), c.fx);
    auto v11 = lerp(corner(0, 1, 1), corner(1, 1, 1), c.fx);
    return lerp(lerp(v00, v10, c.fy), lerp(v01, v11, c.fy), c.fz);
}

}  // namespace detail

inline float grid_value_trilinear(const UdfGrid& g, const Vec3f& p) {
    auto c = detail::locate(g, p);
    return detail::trilerp(c, [&](int dx, int dy, int dz) {
        return detail::grid_node_value(g, c.x0 + dx, c.y0 + dy, c.z0 + dz);
    });
}

inline Vec3f grid_gradient_trilinear(const UdfGrid& g, const Vec3f& p) {
    auto c = detail::locate(g, p);
    return detail::trilerp(c, [&](int dx, int dy, int dz) {
        return detail::grid_node_gradient(g, c.x0 + dx, c.y0 + dy, c.z0 + dz);
    });
}

// Moves each vertex down the interpolated UDF gradient by min(U(v), h/2) per
// iteration, thinning the double-layer shell toward the zero set. Vertices
// are clamped to the grid domain.
inline TriMesh project_vertices(const TriMesh& mesh, const UdfGrid& grid, int iterations) {
    if (iterations < 0) throw ContractError("project_vertices: iterations must be >= 0");
    TriMesh out = mesh;
    const float lo = grid.origin;
    const float hi = grid.origin + grid.spacing * float(grid.resolution - 1);
    const float max_step = 0.5f * grid.spacing;
    for (int it = 0; it < iterations; ++it) {
        for (auto& v : out.vertices) {
            float u = grid_value_trilinear(grid, v);
            if (u <= 0.0f) continue;
            Vec3f g = grid_gradient_trilinear(grid, v);
            float norm = g.norm();
            if (norm < 1e-12f) continue;
            float step = std::min(u, max_step);
            v -= (step / norm) * g;
            for (int a = 0; a < 3; ++a) v[a] = std::clamp(v[a], lo, hi);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mesh I/O: OBJ (text, 1-based indices) and binary little-endian PLY.

inline void write_obj(const std::string& path, const TriMesh& mesh) {
    std::ofstream out(path);
    if (!out) throw ContractError("cannot open for writing: " + path);
    char buf[128];
    for (const Vec3f& v : mesh.vertices) {
        std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", double(v.x()), double(v.y()),
                      double(v.z()));
        out << buf;
    }
    for (const auto& t : mesh.triangles)
        out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    if (!out) throw ContractError("write failed: " + path);
}

inline TriMesh read_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot open mesh: " + path);
    TriMesh mesh;
    std::string line;
    int lineno = 0;
    auto face_index = [&](const std::string& tok) {
        std::size_t slash = tok.find('/');
        long v = std::stol(slash == std::string::npos ? tok : tok.substr(0, slash));
        if (v < 0) v = long(mesh.vertices.size()) + v + 1;  // negative = relative
        if (v < 1 || v > long(mesh.vertices.size()))
            throw FormatError(path + ":" + std::to_string(lineno) + ": face index out of range", 0);
        return std::uint32_t(v - 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            double x, y, z;
            if (!(ls >> x >> y >> z))
                throw FormatError(path + ":" + std::to_string(lineno) + ": bad vertex", 0);
            mesh.vertices.emplace_back(float(x), float(y), float(z));
        } else if (tag == "f") {
            std::vector<std::uint32_t> poly;
            std::string tok;
            while (ls >> tok) poly.push_back(face_index(tok));
            if (poly.size() < 3)
                throw FormatError(path + ":" + std::to_string(lineno) + ": face needs 3+ vertices", 0);
            for (std::size_t i = 2; i < poly.size(); ++i)
                mesh.triangles.push_back({poly[0], poly[i - 1], poly[i]});
        }
    }
    return mesh;
}

inline void write_ply_mesh(const std::string& path, const TriMesh& mesh) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot open for writing: " + path);
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << mesh.vertices.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "element face " << mesh.triangles.size() << "\n"
        << "property list uchar int vertex_indices\nend_header\n";
    std::vector<std::uint8_t> rec(12);
    for (const Vec3f& v : mesh.vertices) {
        store_le(rec.data(), v.x());
        store_le(rec.data() + 4, v.y());
        store_le(rec.data() + 8, v.z());
        out.write(reinterpret_cast<const char*>(rec.data()), 12);
    }
    std::vector<std::uint8_t> face(13);
    face[0] = 3;
    for (const auto& t : mesh.triangles) {
        for (int i = 0; i < 3; ++i) store_le(face.data() + 1 + 4 * i, std::int32_t(t[i]));
        out.write(reinterpret_cast<const char*>(face.data()), 13);
    }
    if (!out) throw ContractError("write failed: " + path);
}

inline TriMesh read_ply_mesh(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open mesh: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    detail::PlyHeader header = detail::parse_ply_header(buf, path);
    TriMesh mesh;
    std::size_t pos = header.data_offset;
    for (const auto& el : header.elements) {
        if (el.name == "vertex") {
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
            if (pos + row * el.count > buf.size())
                throw FormatError(path + ": vertex data truncated", pos);
            mesh.vertices.reserve(el.count);
            for (std::size_t i = 0; i < el.count; ++i) {
                const std::uint8_t* rec = buf.data() + pos + i * row;
                auto get = [&](int off) {
                    return is_double ? float(load_le<double>(rec + off)) : load_le<float>(rec + off);
                };
                mesh.vertices.emplace_back(get(off_x), get(off_y), get(off_z));
            }
            pos += row * el.count;
        } else if (el.name == "face") {
            if (el.properties.size() != 1 || !el.properties[0].is_list)
                throw FormatError(path + ": face element must be a single list property", pos);
            std::size_t count_size = detail::PlyProperty::type_size(el.properties[0].count_type);
            std::size_t index_size = detail::PlyProperty::type_size(el.properties[0].type);
            for (std::size_t i = 0; i < el.count; ++i) {
                if (pos + count_size > buf.size())
                    throw FormatError(path + ": face data truncated", pos);
                std::uint64_t n = 0;
                if (count_size == 1) n = buf[pos];
                else if (count_size == 2) n = load_le<std::uint16_t>(buf.data() + pos);
                else n = load_le<std::uint32_t>(buf.data() + pos);
                pos += count_size;
                if (pos + n * index_size > buf.size())
                    throw FormatError(path + ": face data truncated", pos);
                std::vector<std::uint32_t> poly(n);
                for (std::uint64_t v = 0; v < n; ++v) {
                    if (index_size == 4)
                        poly[v] = std::uint32_t(load_le<std::int32_t>(buf.data() + pos + 4 * v));
                    else if (index_size == 2)
                        poly[v] = load_le<std::uint16_t>(buf.data() + pos + 2 * v);
                    else
                        poly[v] = buf[pos + v];
                }
                pos += n * index_size;
                for (std::size_t t = 2; t < poly.size(); ++t)
                    mesh.triangles.push_back({poly[0], poly[t - 1], poly[t]});
            }
        } else {
            std::size_t row = 0;
            bool has_list = false;
            for (const auto& p : el.properties) {
                if (p.is_list) has_list = true;
                else row += detail::PlyProperty::type_size(p.type);
            }
            if (has_list) throw FormatError(path + ": unsupported list element '" + el.name + "'", pos);
            pos += row * el.count;
        }
    }
    for (const auto& t : mesh.triangles)
        for (std::uint32_t idx : t)
            if (idx >= mesh.vertices.size())
                throw FormatError(path + ": face index out of range", pos);
    return mesh;
}

inline TriMesh read_mesh_file(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".ply") return read_ply_mesh(path);
    return read_obj(path);
}

inline void write_mesh_file(const std::string& path, const TriMesh& mesh) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".ply") write_ply_mesh(path, mesh);
    else write_obj(path, mesh);
}

}  // namespace losf
