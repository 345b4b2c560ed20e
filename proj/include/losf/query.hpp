#pragma once

#include <atomic>
#include <fstream>
#include <optional>
#include <thread>

#include "losf/cloud.hpp"
#include "losf/model.hpp"
#include "losf/patchgen.hpp"
#include "losf/spatial.hpp"

namespace losf {

// Regular lattice of predicted unsigned distances over the normalized
// [-0.5, 0.5] box. Vertices with fewer than kMinPatchPoints cloud points in
// radius hold the sentinel value.
struct UdfGrid {
    int resolution = 0;
    float origin = -0.5f;
    float spacing = 0.0f;
    float radius = 0.0f;    // patch extraction radius used
    float sentinel = 0.0f;  // value for empty vertices (4 * radius)
    Vec3f cloud_center = Vec3f::Zero();
    float cloud_scale = 1.0f;
    std::vector<float> values;  // x fastest: ix + R*(iy + R*iz)

    float& at(int ix, int iy, int iz) {
        return values[std::size_t(ix) + std::size_t(resolution) * (std::size_t(iy) + std::size_t(resolution) * iz)];
    }
    float at(int ix, int iy, int iz) const {
        return values[std::size_t(ix) + std::size_t(resolution) * (std::size_t(iy) + std::size_t(resolution) * iz)];
    }
    Vec3f vertex(int ix, int iy, int iz) const {
        return Vec3f(origin + spacing * float(ix), origin + spacing * float(iy),
                     origin + spacing * float(iz));
    }
};

constexpr int kMinPatchPoints = 5;

struct PatchQuery {
    std::vector<float> points;     // m x 3 canonical
    std::array<float, 3> query{};  // canonical
    float inv_scale = 1.0f;        // canonical -> normalized-cloud length factor
    float min_dist = 0.0f;         // min distance to a selected point, cloud units
};

// Gathers cloud points within radius r of q and maps them, with q, into the
// canonical frame the network was trained on. Candidates are ordered by
// (distance, position) before seeded subsampling/padding, so the result is
// invariant to cloud row order. Returns nullopt for fewer than 5 points.
inline std::optional<PatchQuery> extract_patch(const SpatialIndex& index, const Vec3f& q, float r,
                                               int m, std::uint64_t query_key,
                                               std::vector<std::uint32_t>& scratch) {
    index.radius_query(q, r, scratch);
    if (int(scratch.size()) < kMinPatchPoints) return std::nullopt;

    struct Candidate {
        float d2;
        Vec3f p;
    };
    std::vector<Candidate> cand;
    cand.reserve(scratch.size());
    for (std::uint32_t i : scratch) cand.push_back({(index.point(i) - q).squaredNorm(), index.point(i)});
    std::sort(cand.begin(), cand.end(), [](const Candidate& a, const Candidate& b) {
        if (a.d2 != b.d2) return a.d2 < b.d2;
        if (a.p.x() != b.p.x()) return a.p.x() < b.p.x();
        if (a.p.y() != b.p.y()) return a.p.y() < b.p.y();
        return a.p.z() < b.p.z();
    });

    Rng rng = make_rng(mix_seed(0xe81a, query_key));
    PatchQuery out;
    out.points.resize(std::size_t(m) * 3);
    float min_d2 = std::numeric_limits<float>::infinity();
    auto put = [&](int row, const Candidate& c) {
        out.points[3 * row] = c.p.x();
        out.points[3 * row + 1] = c.p.y();
        out.points[3 * row + 2] = c.p.z();
        min_d2 = std::min(min_d2, c.d2);
    };
    int n = int(cand.size());
    if (n >= m) {
        // m distinct picks via partial Fisher-Yates over candidate ranks.
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < m; ++i) {
            int j = i + int(uniform_index(rng, std::uint64_t(n - i)));
            std::swap(idx[i], idx[j]);
            put(i, cand[std::size_t(idx[i])]);
        }
    } else {
        for (int i = 0; i < n; ++i) put(i, cand[std::size_t(i)]);
        for (int i = n; i < m; ++i) put(i, cand[uniform_index(rng, std::uint64_t(n))]);
    }
    out.min_dist = std::sqrt(min_d2);
    out.query = {q.x(), q.y(), q.z()};
    float udf_placeholder = 0.0f;
    float s = normalize_pair<float>(std::span<float>(out.points), out.query.data(), udf_placeholder);
    out.inv_scale = 1.0f / s;
    return out;
}

// Network prediction mapped back to normalized-cloud units and clamped to
// [0, min point distance]: a true UDF can never exceed the distance to any
// observed surface point.
inline float predict_udf(ModelParams<float>& params, const PatchQuery& patch, Tape<float>& tape) {
    tape.reset();
    ForwardNodes<float> out =
        forward_on_tape(tape, params, std::span<const float>(patch.points),
                        std::span<const float>(patch.query.data(), 3), /*with_grad=*/false);
    float udf = out.udf.value() * patch.inv_scale;
    return std::clamp(udf, 0.0f, patch.min_dist);
}

inline float predict_udf(ModelParams<float>& params, const PatchQuery& patch) {
    Tape<float> tape;
    return predict_udf(params, patch, tape);
}

struct GridStats {
    std::int64_t total_vertices = 0;
    std::int64_t predicted = 0;       // >= 5 points in radius
    std::int64_t sparse_nopatch = 0;  // 1..4 points in radius
    std::int64_t empty = 0;           // no points in radius
    double mean_nn_spacing = 0.0;

    // NoPatch share among vertices that see at least one point: the
    // radius-too-small diagnostic.
    double near_surface_nopatch_fraction() const {
        std::int64_t near = predicted + sparse_nopatch;
        return near == 0 ? 0.0 : double(sparse_nopatch) / double(near);
    }
};

// Evaluates the UDF on an R^3 lattice over the normalized box. Vertices are
// independent; the work is split over threads in fixed slabs and every vertex
// value is identical regardless of the thread count.
inline UdfGrid evaluate_grid(ModelParams<float>& params, const PointCloud& cloud, int resolution,
                             float r, int threads = 1, GridStats* stats_out = nullptr) {
    if (resolution < 8) throw ContractError("evaluate_grid: resolution must be >= 8");
    if (!(r > 0.0f)) throw ContractError("evaluate_grid: radius must be positive");
    if (threads < 1) throw ContractError("evaluate_grid: threads must be >= 1");

    SpatialIndex index(std::span<const Vec3f>(cloud.points), r);
    UdfGrid grid;
    grid.resolution = resolution;
    grid.origin = -0.5f;
    grid.spacing = 1.0f / float(resolution - 1);
    grid.radius = r;
    grid.sentinel = 4.0f * r;
    grid.cloud_center = cloud.center;
    grid.cloud_scale = cloud.scale;
    grid.values.assign(std::size_t(resolution) * resolution * resolution, grid.sentinel);

    const int m = params.config().m;
    std::atomic<std::int64_t> n_predicted{0}, n_sparse{0}, n_empty{0};

    auto run_slab = [&](int z0, int z1) {
        Tape<float> tape;
        std::vector<std::uint32_t> scratch;
        std::int64_t predicted = 0, sparse = 0, empty = 0;
        for (int iz = z0; iz < z1; ++iz)
            for (int iy = 0; iy < resolution; ++iy)
                for (int ix = 0; ix < resolution; ++ix) {
                    Vec3f q = grid.vertex(ix, iy, iz);
                    std::uint64_t key =
                        std::uint64_t(ix) + std::uint64_t(resolution) * (std::uint64_t(iy) + std::uint64_t(resolution) * std::uint64_t(iz));
                    auto patch = extract_patch(index, q, r, m, key, scratch);
                    if (!patch) {
                        if (scratch.empty()) ++empty;
                        else ++sparse;
                        continue;
                    }
                    ++predicted;
                    grid.at(ix, iy, iz) = predict_udf(params, *patch, tape);
                }
        n_predicted += predicted;
        n_sparse += sparse;
        n_empty += empty;
    };

    if (threads == 1) {
        run_slab(0, resolution);
    } else {
        std::vector<std::thread> pool;
        int chunk = (resolution + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            int z0 = t * chunk, z1 = std::min(resolution, z0 + chunk);
            if (z0 >= z1) break;
            pool.emplace_back(run_slab, z0, z1);
        }
        for (auto& th : pool) th.join();
    }

    if (stats_out) {
        stats_out->total_vertices = std::int64_t(grid.values.size());
        stats_out->predicted = n_predicted.load();
        stats_out->sparse_nopatch = n_sparse.load();
        stats_out->empty = n_empty.load();
        stats_out->mean_nn_spacing = mean_nn_spacing(index);
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Grid dump: raw little-endian f32 values plus a text sidecar "<path>.meta"
// with the lattice and cloud transform.

inline void write_grid(const std::string& path, const UdfGrid& grid) {
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ContractError("cannot open grid file for writing: " + path);
        std::vector<std::uint8_t> buf(grid.values.size() * 4);
        for (std::size_t i = 0; i < grid.values.size(); ++i) store_le(buf.data() + 4 * i, grid.values[i]);
        out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
        if (!out) throw ContractError("grid write failed: " + path);
    }
    std::ofstream meta(path + ".meta");
    if (!meta) throw ContractError("cannot open grid sidecar for writing: " + path + ".meta");
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "resolution = %d\norigin = %.9g\nspacing = %.9g\nradius = %.9g\nsentinel = %.9g\n"
                  "cloud_center = %.9g %.9g %.9g\ncloud_scale = %.9g\n",
                  grid.resolution, double(grid.origin), double(grid.spacing), double(grid.radius),
                  double(grid.sentinel), double(grid.cloud_center.x()), double(grid.cloud_center.y()),
                  double(grid.cloud_center.z()), double(grid.cloud_scale));
    meta << buf;
}

inline UdfGrid read_grid(const std::string& path) {
    UdfGrid grid;
    std::ifstream meta(path + ".meta");
    if (!meta) throw ContractError("cannot open grid sidecar: " + path + ".meta");
    std::string key, eq;
    while (meta >> key) {
        meta >> eq;
        if (key == "resolution") meta >> grid.resolution;
        else if (key == "origin") meta >> grid.origin;
        else if (key == "spacing") meta >> grid.spacing;
        else if (key == "radius") meta >> grid.radius;
        else if (key == "sentinel") meta >> grid.sentinel;
        else if (key == "cloud_scale") meta >> grid.cloud_scale;
        else if (key == "cloud_center")
            meta >> grid.cloud_center.x() >> grid.cloud_center.y() >> grid.cloud_center.z();
        else throw ContractError("grid sidecar: unknown key '" + key + "'");
    }
    if (grid.resolution < 2) throw ContractError("grid sidecar: bad resolution");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open grid file: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t want = std::size_t(grid.resolution) * grid.resolution * grid.resolution;
    if (buf.size() != want * 4)
        throw FormatError("grid payload size mismatch: expected " + std::to_string(want * 4) +
                          " bytes, got " + std::to_string(buf.size()), buf.size());
    grid.values.resize(want);
    for (std::size_t i = 0; i < want; ++i) grid.values[i] = load_le<float>(buf.data() + 4 * i);
    return grid;
}

}  // namespace losf
