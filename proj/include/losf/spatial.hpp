#pragma once

#include <span>
#include <vector>

#include "losf/common.hpp"

namespace losf {

// Uniform grid over a point set, bucketed by counting sort. Radius queries
// with r <= cell_edge consult at most 27 cells; nearest-neighbor queries
// expand Chebyshev rings with an exact lower-bound cutoff. Bucket contents
// preserve input order, so query results are deterministic for a fixed build.
class SpatialIndex {
public:
    SpatialIndex(std::span<const Vec3f> points, float cell_edge, int max_cells_per_axis = 192)
        : points_(points.begin(), points.end()) {
        if (points.empty()) throw ContractError("SpatialIndex: empty point set");
        if (!(cell_edge > 0.0f)) throw ContractError("SpatialIndex: cell edge must be positive");
        Vec3f lo = points_[0], hi = points_[0];
        for (const Vec3f& p : points_) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        origin_ = lo;
        Vec3f extent = hi - lo;
        // Never shrink below the requested edge (the 27-cell radius-query
        // guarantee needs cell_edge >= r); cap the cell count per axis.
        cell_ = cell_edge;
        for (int a = 0; a < 3; ++a)
            cell_ = std::max(cell_, extent[a] / float(max_cells_per_axis));
        for (int a = 0; a < 3; ++a)
            dims_[a] = std::max(1, int(std::floor(extent[a] / cell_)) + 1);
        std::size_t n_cells = std::size_t(dims_[0]) * dims_[1] * dims_[2];
        cell_start_.assign(n_cells + 1, 0);
        std::vector<std::uint32_t> cell_of(points_.size());
        for (std::size_t i = 0; i < points_.size(); ++i) {
            cell_of[i] = cell_index(clamped_coords(points_[i]));
            cell_start_[cell_of[i] + 1]++;
        }
        for (std::size_t c = 1; c < cell_start_.size(); ++c) cell_start_[c] += cell_start_[c - 1];
        bucket_.resize(points_.size());
        std::vector<std::uint32_t> cursor(cell_start_.begin(), cell_start_.end() - 1);
        for (std::size_t i = 0; i < points_.size(); ++i) bucket_[cursor[cell_of[i]]++] = std::uint32_t(i);
    }

    float cell_edge() const { return cell_; }
    std::size_t size() const { return points_.size(); }
    const Vec3f& point(std::uint32_t i) const { return points_[i]; }

    // Indices of all points with ||p - q|| <= r (closed ball). Requires
    // r <= cell_edge().
    void radius_query(const Vec3f& q, float r, std::vector<std::uint32_t>& out) const {
        out.clear();
        if (r > cell_ * (1.0f + 1e-6f))
            throw ContractError("radius_query: radius exceeds index cell edge");
        float r2 = r * r;
        std::array<int, 3> c = raw_coords(q);
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int x = c[0] + dx, y = c[1] + dy, z = c[2] + dz;
                    if (x < 0 || y < 0 || z < 0 || x >= dims_[0] || y >= dims_[1] || z >= dims_[2])
                        continue;
                    std::uint32_t cell = cell_index({x, y, z});
                    for (std::uint32_t k = cell_start_[cell]; k < cell_start_[cell + 1]; ++k) {
                        std::uint32_t i = bucket_[k];
                        if ((points_[i] - q).squaredNorm() <= r2) out.push_back(i);
                    }
                }
    }

    // Exact nearest neighbor (optionally excluding one index). Returns the
    // index and writes the squared distance.
    std::uint32_t nearest(const Vec3f& q, float& best_d2,
                          std::uint32_t exclude = std::uint32_t(-1)) const {
        std::array<int, 3> c = raw_coords(q);
        best_d2 = std::numeric_limits<float>::infinity();
        std::uint32_t best = std::uint32_t(-1);
        int max_ring = 0;
        for (int a = 0; a < 3; ++a)
            max_ring = std::max({max_ring, std::abs(c[a]), std::abs(dims_[a] - 1 - c[a])});
        for (int ring = 0; ring <= max_ring; ++ring) {
            if (best != std::uint32_t(-1)) {
                float lb = float(ring - 1) * cell_;
                if (lb > 0.0f && lb * lb > best_d2) break;
            }
            scan_ring(q, c, ring, exclude, best, best_d2);
        }
        return best;
    }

private:
    std::array<int, 3> raw_coords(const Vec3f& p) const {
        std::array<int, 3> c;
        for (int a = 0; a < 3; ++a) c[a] = int(std::floor((p[a] - origin_[a]) / cell_));
        return c;
    }
    std::array<int, 3> clamped_coords(const Vec3f& p) const {
        std::array<int, 3> c = raw_coords(p);
        for (int a = 0; a < 3; ++a) c[a] = std::clamp(c[a], 0, dims_[a] - 1);
        return c;
    }
    std::uint32_t cell_index(const std::array<int, 3>& c) const {
        return std::uint32_t((std::size_t(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0]);
    }

    void scan_cell(const Vec3f& q, int x, int y, int z, std::uint32_t exclude, std::uint32_t& best,
                   float& best_d2) const {
        if (x < 0 || y < 0 || z < 0 || x >= dims_[0] || y >= dims_[1] || z >= dims_[2]) return;
        std::uint32_t cell = cell_index({x, y, z});
        for (std::uint32_t k = cell_start_[cell]; k < cell_start_[cell + 1]; ++k) {
            std::uint32_t i = bucket_[k];
            if (i == exclude) continue;
            float d2 = (points_[i] - q).squaredNorm();
            if (d2 < best_d2) {
                best_d2 = d2;
                best = i;
            }
        }
    }

    // Cells at exactly Chebyshev distance `ring` from c.
    void scan_ring(const Vec3f& q, const std::array<int, 3>& c, int ring, std::uint32_t exclude,
                   std::uint32_t& best, float& best_d2) const {
        if (ring == 0) {
            scan_cell(q, c[0], c[1], c[2], exclude, best, best_d2);
            return;
        }
        // Iterate only the part of the ring cube that intersects the grid.
        int x0 = std::max(c[0] - ring, 0), x1 = std::min(c[0] + ring, dims_[0] - 1);
        int y0 = std::max(c[1] - ring, 0), y1 = std::min(c[1] + ring, dims_[1] - 1);
        int z0 = std::max(c[2] - ring, 0), z1 = std::min(c[2] + ring, dims_[2] - 1);
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    int cheb = std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])});
                    if (cheb != ring) continue;
                    scan_cell(q, x, y, z, exclude, best, best_d2);
                }
    }

    std::vector<Vec3f> points_;
    Vec3f origin_ = Vec3f::Zero();
    float cell_ = 1.0f;
    std::array<int, 3> dims_{1, 1, 1};
    std::vector<std::uint32_t> cell_start_;
    std::vector<std::uint32_t> bucket_;
};

// Mean distance to the nearest other point; a scale reference for choosing
// the patch radius.
inline double mean_nn_spacing(const SpatialIndex& index) {
    if (index.size() < 2) return 0.0;
    double sum = 0.0;
    for (std::uint32_t i = 0; i < index.size(); ++i) {
        float d2;
        index.nearest(index.point(i), d2, i);
        sum += std::sqrt(double(d2));
    }
    return sum / double(index.size());
}

}  // namespace losf
