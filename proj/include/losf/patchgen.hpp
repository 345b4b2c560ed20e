#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "losf/common.hpp"
#include "losf/config.hpp"

namespace losf {

// Synthetic training patches. A patch is m surface samples of a local shape
// function z = f(x, y) over a disk of radius r0, with one query point on the
// vertical axis and its analytic unsigned distance. Patches whose nearest
// surface point is not the axis intersection (high curvature / sharpness)
// are rejected by dense resampling.

enum class ShapeFamily : std::uint8_t { Smooth = 0, Crease, Cusp, Corner, VSaddle };
constexpr int kFamilyCount = 5;

inline const char* family_name(ShapeFamily f) {
    switch (f) {
        case ShapeFamily::Smooth: return "smooth";
        case ShapeFamily::Crease: return "crease";
        case ShapeFamily::Cusp: return "cusp";
        case ShapeFamily::Corner: return "corner";
        case ShapeFamily::VSaddle: return "v-saddle";
    }
    return "?";
}

struct ShapeParams {
    ShapeFamily family = ShapeFamily::Smooth;
    double kappa1 = 0.0;  // principal curvatures, smooth only
    double kappa2 = 0.0;
    double h = 1.0;       // sharpness slope, sharp families only
    double k = 0.0;       // crease direction slope, crease only
};

// Height of the local shape function at (x, y). Smooth patches are the
// quadratic 0.5*(k1 x^2 + k2 y^2); the four sharp families peak at z = 1.
inline double eval_shape(const ShapeParams& sp, double x, double y) {
    auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
    switch (sp.family) {
        case ShapeFamily::Smooth:
            return 0.5 * (sp.kappa1 * x * x + sp.kappa2 * y * y);
        case ShapeFamily::Crease:
            return 1.0 - sp.h * std::abs(sp.k * x - y) / std::sqrt(1.0 + sp.k * sp.k);
        case ShapeFamily::Cusp:
            return 1.0 - sp.h * std::sqrt(x * x + y * y);
        case ShapeFamily::Corner:
            return 1.0 - sp.h * std::max(std::abs(x), std::abs(y));
        case ShapeFamily::VSaddle:
            return 1.0 - sp.h * std::abs(x) + std::abs(y) * (sgn(x) * sgn(y));
    }
    return 0.0;
}

// m area-uniform samples of the shape over the disk of radius r0. Output is
// a flat xyz array; identical seeds give bitwise-identical points.
inline std::vector<double> sample_patch(const ShapeParams& sp, int m, double r0, Rng& rng) {
    if (m < 5) throw ContractError("sample_patch: m must be >= 5");
    if (!(r0 > 0.0)) throw ContractError("sample_patch: r0 must be positive");
    std::vector<double> pts(std::size_t(m) * 3);
    for (int i = 0; i < m; ++i) {
        double u = uniform01(rng);
        double theta = uniform(rng, 0.0, 2.0 * M_PI);
        double rho = r0 * std::sqrt(u);
        double x = rho * std::cos(theta);
        double y = rho * std::sin(theta);
        pts[3 * i] = x;
        pts[3 * i + 1] = y;
        pts[3 * i + 2] = eval_shape(sp, x, y);
    }
    return pts;
}

constexpr int kDenseValidationSamples = 4096;

// Minimum distance from `query` to a dense deterministic resampling of the
// shape (Fibonacci spiral over the disk, M points).
inline double dense_min_distance(const ShapeParams& sp, const Vec3d& query, double r0,
                                 int m_dense = kDenseValidationSamples) {
    const double golden_angle = M_PI * (3.0 - std::sqrt(5.0));
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m_dense; ++i) {
        double rho = r0 * std::sqrt((i + 0.5) / m_dense);
        double theta = i * golden_angle;
        double x = rho * std::cos(theta);
        double y = rho * std::sin(theta);
        double z = eval_shape(sp, x, y);
        double dx = x - query.x(), dy = y - query.y(), dz = z - query.z();
        best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    return std::sqrt(best);
}

// Accepts `claimed_udf` unless the densely resampled shape comes closer than
// claimed_udf - tol. tol defaults to the dense sampling resolution allowance
// 2*r0/sqrt(M).
inline bool validate_sample(const ShapeParams& sp, const Vec3d& query, double claimed_udf,
                            double tol, double r0 = 1.0, int m_dense = kDenseValidationSamples) {
    if (claimed_udf < 0.0) throw ContractError("validate_sample: claimed udf must be >= 0");
    return dense_min_distance(sp, query, r0, m_dense) >= claimed_udf - tol;
}

inline double validation_tolerance(double r0, int m_dense = kDenseValidationSamples) {
    return 2.0 * r0 / std::sqrt(double(m_dense));
}

// ---------------------------------------------------------------------------

struct PatchSample {
    std::vector<float> points;     // m x 3, canonical frame
    std::array<float, 3> query{};  // canonical frame
    float udf = 0.0f;              // canonical frame, >= 0
    ShapeFamily family = ShapeFamily::Smooth;
    float scale = 1.0f;            // canonical -> generation frame length factor

    int m() const { return int(points.size() / 3); }
};

// Centroid-centers the patch, then scales points, query and udf jointly so
// the largest absolute coordinate is exactly 0.5. Returns the applied factor
// s; callers tracking a cumulative frame divide their scale by it. For m a
// power of two the operation is exactly idempotent.
template <typename T>
T normalize_pair(std::span<T> points_xyz, T* query_xyz, T& udf) {
    std::size_t n = points_xyz.size() / 3;
    if (n == 0) throw ContractError("normalize_pair: empty patch");
    T cx = T(0), cy = T(0), cz = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        cx += points_xyz[3 * i];
        cy += points_xyz[3 * i + 1];
        cz += points_xyz[3 * i + 2];
    }
    cx /= T(n);
    cy /= T(n);
    cz /= T(n);
    T maxabs = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        points_xyz[3 * i] -= cx;
        points_xyz[3 * i + 1] -= cy;
        points_xyz[3 * i + 2] -= cz;
        maxabs = std::max({maxabs, std::abs(points_xyz[3 * i]), std::abs(points_xyz[3 * i + 1]),
                           std::abs(points_xyz[3 * i + 2])});
    }
    query_xyz[0] -= cx;
    query_xyz[1] -= cy;
    query_xyz[2] -= cz;
    maxabs = std::max({maxabs, std::abs(query_xyz[0]), std::abs(query_xyz[1]), std::abs(query_xyz[2])});
    if (maxabs == T(0))
        throw ContractError("normalize_pair: degenerate patch, all points and query coincide");
    T s = T(0.5) / maxabs;
    for (auto& v : points_xyz) v *= s;
    for (int i = 0; i < 3; ++i) query_xyz[i] *= s;
    udf *= s;
    return s;
}

// Validates and canonicalizes a (patch, query-height) pair. The ground truth
// is the apex distance: t for smooth shapes, 1 - t for sharp shapes peaking
// at z = 1. Returns nullopt when dense validation shows the apex is not the
// nearest surface region.
inline std::optional<PatchSample> assemble_sample(const ShapeParams& sp,
                                                  std::span<const double> patch_xyz, double t,
                                                  double r0) {
    double claimed = sp.family == ShapeFamily::Smooth ? t : 1.0 - t;
    if (claimed < 0.0) return std::nullopt;  // sharp apex below query range (r0 > 1)
    if (!validate_sample(sp, Vec3d(0.0, 0.0, t), claimed, validation_tolerance(r0), r0))
        return std::nullopt;

    PatchSample sample;
    sample.family = sp.family;
    sample.points.assign(patch_xyz.begin(), patch_xyz.end());
    sample.query = {0.0f, 0.0f, float(t)};
    sample.udf = float(claimed);
    float s = normalize_pair<float>(std::span<float>(sample.points), sample.query.data(), sample.udf);
    sample.scale = 1.0f / s;
    return sample;
}

// Generates one sample: patch points and a query q = (0,0,t), t ~ U(0, r0].
inline std::optional<PatchSample> gen_sample(const ShapeParams& sp, int m, double r0, Rng& rng) {
    std::vector<double> pts = sample_patch(sp, m, r0, rng);
    double t = r0 * (1.0 - uniform01(rng));  // (0, r0]
    return assemble_sample(sp, pts, t, r0);
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentPolicy {
    bool rotate = true;
    bool truncate = false;      // smooth patches only; boundary simulation
    bool noise = false;
    float sigma_train = 0.1f;   // noise std, generation-frame units (r0 = 1)
};

// Joint rotation of points and query about the canonical origin; the udf is
// rotation-invariant and left untouched.
inline void rotate_sample(PatchSample& sample, const Mat3<float>& rot) {
    int m = sample.m();
    for (int i = 0; i < m; ++i) {
        Vec3f p(sample.points[3 * i], sample.points[3 * i + 1], sample.points[3 * i + 2]);
        Vec3f r = rot * p;
        sample.points[3 * i] = r.x();
        sample.points[3 * i + 1] = r.y();
        sample.points[3 * i + 2] = r.z();
    }
    Vec3f q(sample.query[0], sample.query[1], sample.query[2]);
    Vec3f r = rot * q;
    sample.query = {r.x(), r.y(), r.z()};
}

// Drops points on one side of a random vertical half-plane through the patch
// interior (keeping at least m/2) and re-pads to m by resampling kept points
// with replacement.
inline void truncate_sample(PatchSample& sample, Rng& rng) {
    int m = sample.m();
    double phi = uniform(rng, 0.0, 2.0 * M_PI);
    double nx = std::cos(phi), ny = std::sin(phi);
    std::vector<float> proj(m);
    for (int i = 0; i < m; ++i)
        proj[i] = float(nx * sample.points[3 * i] + ny * sample.points[3 * i + 1]);
    std::vector<float> sorted = proj;
    std::sort(sorted.begin(), sorted.end());
    int cut_rank = int(uniform01(rng) * (m / 2));  // in [0, m/2)
    float cut = sorted[cut_rank];
    std::vector<int> kept;
    kept.reserve(m);
    for (int i = 0; i < m; ++i)
        if (proj[i] >= cut) kept.push_back(i);
    std::vector<float> pts(std::size_t(m) * 3);
    for (int i = 0; i < m; ++i) {
        int src = i < int(kept.size()) ? kept[i]
                                       : kept[uniform_index(rng, kept.size())];
        pts[3 * i] = sample.points[3 * src];
        pts[3 * i + 1] = sample.points[3 * src + 1];
        pts[3 * i + 2] = sample.points[3 * src + 2];
    }
    sample.points = std::move(pts);
}

// Applies, in order: truncation (smooth only), rotation, re-canonicalization,
// then Gaussian point noise. Noise displaces points only; query and ground
// truth stay fixed to the clean surface.
inline PatchSample augment(const PatchSample& input, const AugmentPolicy& policy, Rng& rng) {
    PatchSample sample = input;
    if (policy.truncate && sample.family == ShapeFamily::Smooth) truncate_sample(sample, rng);
    if (policy.rotate) rotate_sample(sample, random_rotation<float>(rng));
    if (policy.truncate || policy.rotate) {
        float s = normalize_pair<float>(std::span<float>(sample.points), sample.query.data(), sample.udf);
        sample.scale /= s;
    }
    if (policy.noise && policy.sigma_train > 0.0f) {
        // sigma is stated in the generation frame (r0 = 1); scale carries the
        // canonical-frame equivalent.
        float sigma = policy.sigma_train / sample.scale;
        for (auto& v : sample.points) v += float(gaussian(rng)) * sigma;
    }
    return sample;
}

// ---------------------------------------------------------------------------
// Dataset file format "LSFD": 32-byte header (magic, version u16, m u16,
// count u32, family histogram 5 x u32), then fixed-size little-endian records
// of (family u32, scale f32, udf f32, query 3 x f32, points m*3 x f32).

namespace detail {
constexpr char kDatasetMagic[4] = {'L', 'S', 'F', 'D'};
constexpr std::uint16_t kDatasetVersion = 1;
constexpr std::size_t kDatasetHeaderSize = 32;
}  // namespace detail

struct DatasetHeader {
    std::uint16_t version = detail::kDatasetVersion;
    std::uint16_t m = 0;
    std::uint32_t count = 0;
    std::array<std::uint32_t, kFamilyCount> family_histogram{};

    static std::size_t record_size(int m) { return 24 + std::size_t(m) * 12; }
};

inline void write_dataset(const std::string& path, std::span<const PatchSample> samples) {
    if (samples.empty()) throw ContractError("write_dataset: no samples");
    int m = samples[0].m();
    DatasetHeader header;
    header.m = std::uint16_t(m);
    header.count = std::uint32_t(samples.size());
    for (const auto& s : samples) {
        if (s.m() != m) throw ContractError("write_dataset: inconsistent patch size m");
        header.family_histogram[std::size_t(s.family)]++;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot open dataset for writing: " + path);
    std::uint8_t head[detail::kDatasetHeaderSize] = {};
    std::memcpy(head, detail::kDatasetMagic, 4);
    store_le(head + 4, header.version);
    store_le(head + 6, header.m);
    store_le(head + 8, header.count);
    for (int f = 0; f < kFamilyCount; ++f) store_le(head + 12 + 4 * f, header.family_histogram[f]);
    out.write(reinterpret_cast<const char*>(head), detail::kDatasetHeaderSize);
    std::vector<std::uint8_t> rec(DatasetHeader::record_size(m));
    for (const auto& s : samples) {
        store_le(rec.data(), std::uint32_t(s.family));
        store_le(rec.data() + 4, s.scale);
        store_le(rec.data() + 8, s.udf);
        for (int i = 0; i < 3; ++i) store_le(rec.data() + 12 + 4 * i, s.query[i]);
        for (int i = 0; i < m * 3; ++i) store_le(rec.data() + 24 + 4 * i, s.points[i]);
        out.write(reinterpret_cast<const char*>(rec.data()), std::streamsize(rec.size()));
    }
    if (!out) throw ContractError("dataset write failed: " + path);
}

// Streaming reader over the fixed-size records.
class DatasetReader {
public:
    explicit DatasetReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw ContractError("cannot open dataset: " + path);
        std::uint8_t head[detail::kDatasetHeaderSize];
        in_.read(reinterpret_cast<char*>(head), detail::kDatasetHeaderSize);
        if (in_.gcount() != std::streamsize(detail::kDatasetHeaderSize))
            throw FormatError("dataset header truncated", std::uint64_t(in_.gcount()));
        if (std::memcmp(head, detail::kDatasetMagic, 4) != 0)
            throw FormatError("bad dataset magic", 0);
        header_.version = load_le<std::uint16_t>(head + 4);
        if (header_.version != detail::kDatasetVersion)
            throw FormatError("unsupported dataset version " + std::to_string(header_.version), 4);
        header_.m = load_le<std::uint16_t>(head + 6);
        header_.count = load_le<std::uint32_t>(head + 8);
        for (int f = 0; f < kFamilyCount; ++f)
            header_.family_histogram[f] = load_le<std::uint32_t>(head + 12 + 4 * f);
        in_.seekg(0, std::ios::end);
        std::uint64_t size = std::uint64_t(in_.tellg());
        std::uint64_t expect = detail::kDatasetHeaderSize +
                               std::uint64_t(header_.count) * DatasetHeader::record_size(header_.m);
        if (size != expect)
            throw FormatError("dataset truncated: header count " + std::to_string(header_.count) +
                              " needs " + std::to_string(expect) + " bytes, file has " +
                              std::to_string(size),
                              size);
    }

    const DatasetHeader& header() const { return header_; }

    PatchSample read(std::uint32_t index) {
        if (index >= header_.count)
            throw ContractError("dataset record index out of range: " + std::to_string(index));
        std::size_t rec_size = DatasetHeader::record_size(header_.m);
        in_.seekg(std::streamoff(detail::kDatasetHeaderSize + std::uint64_t(index) * rec_size));
        std::vector<std::uint8_t> rec(rec_size);
        in_.read(reinterpret_cast<char*>(rec.data()), std::streamsize(rec_size));
        if (in_.gcount() != std::streamsize(rec_size))
            throw FormatError("dataset record truncated",
                              detail::kDatasetHeaderSize + std::uint64_t(index) * rec_size);
        PatchSample s;
        std::uint32_t fam = load_le<std::uint32_t>(rec.data());
        if (fam >= kFamilyCount)
            throw FormatError("bad family tag " + std::to_string(fam),
                              detail::kDatasetHeaderSize + std::uint64_t(index) * rec_size);
        s.family = ShapeFamily(fam);
        s.scale = load_le<float>(rec.data() + 4);
        s.udf = load_le<float>(rec.data() + 8);
        for (int i = 0; i < 3; ++i) s.query[i] = load_le<float>(rec.data() + 12 + 4 * i);
        s.points.resize(std::size_t(header_.m) * 3);
        for (int i = 0; i < header_.m * 3; ++i) s.points[i] = load_le<float>(rec.data() + 24 + 4 * i);
        return s;
    }

private:
    std::ifstream in_;
    std::string path_;
    DatasetHeader header_;
};

inline std::vector<PatchSample> read_dataset(const std::string& path, DatasetHeader* header_out = nullptr) {
    DatasetReader reader(path);
    if (header_out) *header_out = reader.header();
    std::vector<PatchSample> samples;
    samples.reserve(reader.header().count);
    for (std::uint32_t i = 0; i < reader.header().count; ++i) samples.push_back(reader.read(i));
    return samples;
}

// ---------------------------------------------------------------------------
// Generation driver

struct GenConfig {
    std::uint64_t seed = 1;
    std::uint64_t count = 200000;
    int m = 64;
    double r0 = 1.0;
    double kappa_max = 4.0;
    double h_max = 4.0;
    double k_max = 2.0;
    std::array<double, kFamilyCount> family_mix{0.5, 0.125, 0.125, 0.125, 0.125};
    double sigma_train = 0.1;  // consumed by the trainer; carried in the config

    void validate() const {
        if (count == 0) throw ContractError("gen config: count must be positive");
        if (m < 5) throw ContractError("gen config: m must be >= 5");
        if (!(r0 > 0.0)) throw ContractError("gen config: r0 must be positive");
        if (kappa_max < 0.0) throw ContractError("gen config: kappa_max must be >= 0");
        if (h_max < 0.25) throw ContractError("gen config: h_max must be >= 0.25");
        if (k_max < 0.0) throw ContractError("gen config: k_max must be >= 0");
        double sum = 0.0;
        for (double f : family_mix) {
            if (f < 0.0) throw ContractError("gen config: family_mix entries must be >= 0");
            sum += f;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw ContractError("gen config: family_mix must sum to 1");
        if (sigma_train < 0.0) throw ContractError("gen config: sigma_train must be >= 0");
    }

    static GenConfig from_config(const KeyValueConfig& cfg) {
        GenConfig g;
        if (auto v = cfg.get_u64("seed")) g.seed = *v;
        if (auto v = cfg.get_u64("count")) g.count = *v;
        if (auto v = cfg.get_int("m")) g.m = int(*v);
        if (auto v = cfg.get_double("r0")) g.r0 = *v;
        if (auto v = cfg.get_double("kappa_max")) g.kappa_max = *v;
        if (auto v = cfg.get_double("h_max")) g.h_max = *v;
        if (auto v = cfg.get_double("k_max")) g.k_max = *v;
        if (auto v = cfg.get_double("sigma_train")) g.sigma_train = *v;
        if (auto v = cfg.get_double_list("family_mix")) {
            if (v->size() != kFamilyCount)
                throw ContractError("gen config: family_mix needs 5 entries");
            for (int i = 0; i < kFamilyCount; ++i) g.family_mix[i] = (*v)[i];
        }
        g.validate();
        return g;
    }
};

struct GenStats {
    std::uint64_t accepted = 0;
    std::uint64_t rejected = 0;
    std::array<std::uint64_t, kFamilyCount> rejected_by_family{};
    std::array<std::uint64_t, kFamilyCount> family_histogram{};

    double rejection_rate() const {
        std::uint64_t attempts = accepted + rejected;
        return attempts == 0 ? 0.0 : double(rejected) / double(attempts);
    }
};

inline ShapeParams draw_shape_params(const GenConfig& cfg, ShapeFamily family, Rng& rng) {
    ShapeParams sp;
    sp.family = family;
    if (family == ShapeFamily::Smooth) {
        sp.kappa1 = uniform(rng, -cfg.kappa_max, cfg.kappa_max);
        sp.kappa2 = uniform(rng, -cfg.kappa_max, cfg.kappa_max);
    } else {
        sp.h = cfg.h_max - (cfg.h_max - 0.25) * uniform01(rng);  // (0.25, h_max]
        if (family == ShapeFamily::Crease) sp.k = uniform(rng, -cfg.k_max, cfg.k_max);
    }
    return sp;
}

// Pure function of (seed, config): each sample owns a stream derived from
// (seed, index), so the output is independent of any parallel layout.
inline std::vector<PatchSample> generate_dataset(const GenConfig& cfg, GenStats& stats) {
    cfg.validate();
    stats = GenStats{};
    std::array<double, kFamilyCount> cum{};
    double acc = 0.0;
    for (int f = 0; f < kFamilyCount; ++f) {
        acc += cfg.family_mix[f];
        cum[f] = acc;
    }
    std::vector<PatchSample> samples;
    samples.reserve(cfg.count);
    constexpr int kMaxAttempts = 100000;
    for (std::uint64_t i = 0; i < cfg.count; ++i) {
        Rng rng = make_rng(mix_seed(cfg.seed, 0x5a117, i));
        double u = uniform01(rng);
        int fam = 0;
        while (fam + 1 < kFamilyCount && u >= cum[fam]) ++fam;
        ShapeFamily family = ShapeFamily(fam);
        std::optional<PatchSample> sample;
        int attempts = 0;
        while (!sample) {
            if (++attempts > kMaxAttempts)
                throw ContractError(std::string("generate_dataset: gave up after ") +
                                    std::to_string(kMaxAttempts) + " rejected draws for family " +
                                    family_name(family));
            ShapeParams sp = draw_shape_params(cfg, family, rng);
            sample = gen_sample(sp, cfg.m, cfg.r0, rng);
            if (!sample) {
                stats.rejected++;
                stats.rejected_by_family[fam]++;
            }
        }
        stats.accepted++;
        stats.family_histogram[fam]++;
        samples.push_back(std::move(*sample));
    }
    return samples;
}

}  // namespace losf
