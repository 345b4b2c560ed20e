#pragma once

#include <cstdio>
#include <ostream>

#include "losf/cloud.hpp"
#include "losf/meshing.hpp"
#include "losf/spatial.hpp"

namespace losf {

// Metrics and corruption tools. Chamfer distance here is the symmetric mean
// Euclidean convention CD = 0.5 * (mean_a min_b ||a-b|| + mean_b min_a ||a-b||),
// reported multiplied by 100; F1 uses precision/recall of points matched
// within tau.

struct MetricReport {
    double cd_x100 = 0.0;
    double f1_005 = 0.0;
    double f1_01 = 0.0;
    std::int64_t n_samples = 0;

    static const char* csv_header() { return "cd_x100,f1_005,f1_01,n_samples"; }

    void to_csv(std::ostream& out) const {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%lld\n", cd_x100, f1_005, f1_01,
                      (long long)n_samples);
        out << buf;
    }

    void to_text(std::ostream& out) const {
        char buf[192];
        std::snprintf(buf, sizeof(buf),
                      "CD x100   : %.6f  (symmetric mean Euclidean, halved)\n"
                      "F1 @0.005 : %.6f\nF1 @0.01  : %.6f\nsamples   : %lld per mesh\n",
                      cd_x100, f1_005, f1_01, (long long)n_samples);
        out << buf;
    }
};

// Area-weighted surface sampling with uniform barycentric placement.
inline std::vector<Vec3f> sample_mesh(const TriMesh& mesh, std::int64_t n, Rng& rng) {
    if (mesh.triangles.empty()) throw ContractError("sample_mesh: empty mesh");
    std::vector<double> cum(mesh.triangles.size());
    double total = 0.0;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        Vec3d a = mesh.vertices[tri[0]].cast<double>();
        Vec3d b = mesh.vertices[tri[1]].cast<double>();
        Vec3d c = mesh.vertices[tri[2]].cast<double>();
        total += 0.5 * (b - a).cross(c - a).norm();
        cum[t] = total;
    }
    if (total <= 0.0) throw ContractError("sample_mesh: zero total area");
    std::vector<Vec3f> out;
    out.reserve(std::size_t(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double pick = uniform01(rng) * total;
        std::size_t t = std::size_t(std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin());
        if (t >= cum.size()) t = cum.size() - 1;
        const auto& tri = mesh.triangles[t];
        double u = uniform01(rng), v = uniform01(rng);
        if (u + v > 1.0) {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        Vec3f a = mesh.vertices[tri[0]], b = mesh.vertices[tri[1]], c = mesh.vertices[tri[2]];
        out.push_back(a + float(u) * (b - a) + float(v) * (c - a));
    }
    return out;
}

namespace detail {

// Index cell size tuned for NN queries: roughly one point per cell.
inline float nn_cell_edge(std::span<const Vec3f> pts) {
    Vec3f lo = pts[0], hi = pts[0];
    for (const Vec3f& p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    float extent = std::max((hi - lo).maxCoeff(), 1e-6f);
    double per_axis = std::cbrt(double(pts.size()));
    return std::max(extent / float(std::max(1.0, per_axis)), extent * 1e-4f);
}

inline double mean_nn_distance(std::span<const Vec3f> from, const SpatialIndex& to_index) {
    double sum = 0.0;
    for (const Vec3f& p : from) {
        float d2;
        to_index.nearest(p, d2);
        sum += std::sqrt(double(d2));
    }
    return sum / double(from.size());
}

}  // namespace detail

inline double chamfer(std::span<const Vec3f> a, std::span<const Vec3f> b) {
    if (a.empty() || b.empty()) throw ContractError("chamfer: empty point set");
    SpatialIndex ib(b, detail::nn_cell_edge(b));
    SpatialIndex ia(a, detail::nn_cell_edge(a));
    return 0.5 * (detail::mean_nn_distance(a, ib) + detail::mean_nn_distance(b, ia));
}

// O(N^2) reference used to certify the indexed path.
inline double chamfer_brute(std::span<const Vec3f> a, std::span<const Vec3f> b) {
    if (a.empty() || b.empty()) throw ContractError("chamfer: empty point set");
    auto one_way = [](std::span<const Vec3f> from, std::span<const Vec3f> to) {
        double sum = 0.0;
        for (const Vec3f& p : from) {
            float best = std::numeric_limits<float>::infinity();
            for (const Vec3f& q : to) best = std::min(best, (p - q).squaredNorm());
            sum += std::sqrt(double(best));
        }
        return sum / double(from.size());
    };
    return 0.5 * (one_way(a, b) + one_way(b, a));
}

inline double f1_score(std::span<const Vec3f> a, std::span<const Vec3f> b, double tau) {
    if (a.empty() || b.empty()) throw ContractError("f1: empty point set");
    if (!(tau > 0.0)) throw ContractError("f1: tau must be positive");
    SpatialIndex ib(b, detail::nn_cell_edge(b));
    SpatialIndex ia(a, detail::nn_cell_edge(a));
    double tau2 = tau * tau;
    auto fraction_within = [&](std::span<const Vec3f> from, const SpatialIndex& to) {
        std::int64_t hit = 0;
        for (const Vec3f& p : from) {
            float d2;
            to.nearest(p, d2);
            if (double(d2) <= tau2) ++hit;
        }
        return double(hit) / double(from.size());
    };
    double precision = fraction_within(a, ib);
    double recall = fraction_within(b, ia);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

inline MetricReport compute_metrics(std::span<const Vec3f> pred, std::span<const Vec3f> gt) {
    MetricReport report;
    report.cd_x100 = 100.0 * chamfer(pred, gt);
    report.f1_005 = f1_score(pred, gt, 0.005);
    report.f1_01 = f1_score(pred, gt, 0.01);
    report.n_samples = std::int64_t(pred.size());
    return report;
}

// ---------------------------------------------------------------------------
// Corruption generators (operate on the normalized coordinates).

inline void add_noise(PointCloud& cloud, double sigma, Rng& rng) {
    if (sigma < 0.0) throw ContractError("add_noise: sigma must be >= 0");
    if (sigma == 0.0) return;
    for (Vec3f& p : cloud.points)
        for (int a = 0; a < 3; ++a) p[a] += float(gaussian(rng) * sigma);
}

// Replaces floor(fraction * N) randomly chosen points with uniform samples in
// the normalized [-0.5, 0.5] box; the rest stay bitwise untouched.
inline void add_outliers(PointCloud& cloud, double fraction, Rng& rng) {
    if (fraction < 0.0 || fraction >= 1.0) throw ContractError("add_outliers: fraction must be in [0, 1)");
    std::size_t n = cloud.points.size();
    std::size_t k = std::size_t(fraction * double(n));
    if (k == 0) return;
    std::vector<std::uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + uniform_index(rng, n - i);
        std::swap(idx[i], idx[j]);
    }
    for (std::size_t i = 0; i < k; ++i) {
        Vec3f& p = cloud.points[idx[i]];
        for (int a = 0; a < 3; ++a) p[a] = float(uniform(rng, -0.5, 0.5));
    }
}

// ---------------------------------------------------------------------------
// Exact point-to-triangle distance (closest-point region decomposition) and
// the brute-force mesh UDF oracle built on it.

inline Vec3d closest_point_on_triangle(const Vec3d& p, const Vec3d& a, const Vec3d& b, const Vec3d& c) {
    Vec3d ab = b - a, ac = c - a, ap = p - a;
    double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;

    Vec3d bp = p - b;
    double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return b;

    double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

    Vec3d cp = p - c;
    double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return c;

    double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

    double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);

    double denom = 1.0 / (va + vb + vc);
    return a + (vb * denom) * ab + (vc * denom) * ac;
}

inline double brute_udf(const TriMesh& mesh, const Vec3d& q) {
    if (mesh.triangles.empty()) throw ContractError("brute_udf: empty mesh");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& tri : mesh.triangles) {
        Vec3d a = mesh.vertices[tri[0]].cast<double>();
        Vec3d b = mesh.vertices[tri[1]].cast<double>();
        Vec3d c = mesh.vertices[tri[2]].cast<double>();
        best = std::min(best, (q - closest_point_on_triangle(q, a, b, c)).squaredNorm());
    }
    return std::sqrt(best);
}

}  // namespace losf
