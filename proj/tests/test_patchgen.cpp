#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "losf/patchgen.hpp"

using namespace losf;

namespace {

// Independent brute-force oracle: min distance from q to a *random* dense
// resampling of the shape (different pattern from the library's validator).
double oracle_min_dist(const ShapeParams& sp, const Vec3d& q, double r0, int n, Rng& rng) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        double rho = r0 * std::sqrt(uniform01(rng));
        double theta = uniform(rng, 0.0, 2.0 * M_PI);
        double x = rho * std::cos(theta), y = rho * std::sin(theta);
        double z = eval_shape(sp, x, y);
        best = std::min(best, (Vec3d(x, y, z) - q).squaredNorm());
    }
    return std::sqrt(best);
}

ShapeParams smooth(double k1, double k2) {
    ShapeParams sp;
    sp.family = ShapeFamily::Smooth;
    sp.kappa1 = k1;
    sp.kappa2 = k2;
    return sp;
}

ShapeParams sharp(ShapeFamily f, double h, double k = 0.0) {
    ShapeParams sp;
    sp.family = f;
    sp.h = h;
    sp.k = k;
    return sp;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("eval_shape closed forms", "[patchgen]") {
    CHECK(eval_shape(smooth(0, 0), 0.3, -0.2) == 0.0);
    CHECK(eval_shape(sharp(ShapeFamily::Crease, 1.0, 0.0), 0.2, 0.3) == Catch::Approx(0.7));
    CHECK(eval_shape(sharp(ShapeFamily::Cusp, 2.0), 0.3, 0.4) == Catch::Approx(0.0).margin(1e-15));
    CHECK(eval_shape(smooth(2, -2), 0.1, 0.1) == Catch::Approx(0.0).margin(1e-15));
    CHECK(eval_shape(sharp(ShapeFamily::Corner, 0.5), -0.4, 0.2) == Catch::Approx(1.0 - 0.5 * 0.4));
}

TEST_CASE("crease is invariant along its ridge direction", "[patchgen]") {
    Rng rng = make_rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        double k = uniform(rng, -2.0, 2.0);
        ShapeParams sp = sharp(ShapeFamily::Crease, uniform(rng, 0.25, 4.0), k);
        double norm = std::sqrt(1.0 + k * k);
        double x = uniform(rng, -1.0, 1.0), y = uniform(rng, -1.0, 1.0);
        double s = uniform(rng, -0.5, 0.5);
        double z0 = eval_shape(sp, x, y);
        double z1 = eval_shape(sp, x + s / norm, y + s * k / norm);
        CHECK(z1 == Catch::Approx(z0).margin(1e-12));
    }
}

TEST_CASE("sample_patch stays in the disk and is reproducible", "[patchgen]") {
    ShapeParams sp = smooth(1.0, -2.0);
    Rng rng1 = make_rng(42), rng2 = make_rng(42);
    auto p1 = sample_patch(sp, 64, 0.7, rng1);
    auto p2 = sample_patch(sp, 64, 0.7, rng2);
    CHECK(p1 == p2);  // bitwise determinism
    for (int i = 0; i < 64; ++i) {
        double x = p1[3 * i], y = p1[3 * i + 1];
        CHECK(x * x + y * y <= 0.7 * 0.7 + 1e-12);
        CHECK(p1[3 * i + 2] == eval_shape(sp, x, y));
    }
}

TEST_CASE("plane patches have z = 0", "[patchgen]") {
    Rng rng = make_rng(9);
    auto pts = sample_patch(smooth(0, 0), 64, 1.0, rng);
    for (int i = 0; i < 64; ++i) CHECK(pts[3 * i + 2] == 0.0);
}

TEST_CASE("validate_sample spec cases", "[patchgen]") {
    double tol = validation_tolerance(1.0);  // 2/sqrt(4096) = 0.03125
    CHECK(tol == Catch::Approx(0.03125));

    SECTION("plane at height 0.5 is valid") {
        CHECK(validate_sample(smooth(0, 0), Vec3d(0, 0, 0.5), 0.5, tol));
    }
    SECTION("cusp h=4 at t=0.2: flank is far closer than the apex") {
        // Flank distance (1-t)/sqrt(1+h^2) = 0.8/sqrt(17) ~= 0.194 < 0.8 - tol.
        Rng rng = make_rng(31);
        ShapeParams sp = sharp(ShapeFamily::Cusp, 4.0);
        double oracle = oracle_min_dist(sp, Vec3d(0, 0, 0.2), 1.0, 1 << 16, rng);
        CHECK(oracle == Catch::Approx(0.8 / std::sqrt(17.0)).margin(2e-3));
        CHECK(oracle < 0.8 - tol);
        CHECK_FALSE(validate_sample(sp, Vec3d(0, 0, 0.2), 0.8, tol));
    }
    SECTION("corner h=0.5 at t=0.95: apex distance within tolerance") {
        // Flank distance 0.05/sqrt(1.25) ~= 0.0447 >= 0.05 - tol.
        Rng rng = make_rng(32);
        ShapeParams sp = sharp(ShapeFamily::Corner, 0.5);
        double oracle = oracle_min_dist(sp, Vec3d(0, 0, 0.95), 1.0, 1 << 16, rng);
        CHECK(oracle >= 0.05 - tol);
        CHECK(validate_sample(sp, Vec3d(0, 0, 0.95), 0.05, tol));
    }
    SECTION("high-curvature bowl rejects queries near r0") {
        // kappa=8 bowl: nearest point is on the wall, sqrt(16t-1)/8 ~= 0.458
        // at t = 0.9, far below the claimed 0.9.
        Rng rng = make_rng(33);
        ShapeParams sp = smooth(8, 8);
        double oracle = oracle_min_dist(sp, Vec3d(0, 0, 0.9), 1.0, 1 << 16, rng);
        CHECK(oracle == Catch::Approx(std::sqrt(16.0 * 0.9 - 1.0) / 8.0).margin(2e-3));
        CHECK_FALSE(validate_sample(sp, Vec3d(0, 0, 0.9), 0.9, tol));
    }
}

TEST_CASE("assemble_sample ground truth before canonicalization", "[patchgen]") {
    Rng rng = make_rng(21);
    SECTION("plane, t = 0.4") {
        auto pts = sample_patch(smooth(0, 0), 64, 1.0, rng);
        auto s = assemble_sample(smooth(0, 0), pts, 0.4, 1.0);
        REQUIRE(s.has_value());
        CHECK(double(s->udf) * double(s->scale) == Catch::Approx(0.4).epsilon(1e-5));
    }
    SECTION("crease h=1 k=0, t = 0.9 -> udf 0.1") {
        ShapeParams sp = sharp(ShapeFamily::Crease, 1.0, 0.0);
        auto pts = sample_patch(sp, 64, 1.0, rng);
        auto s = assemble_sample(sp, pts, 0.9, 1.0);
        REQUIRE(s.has_value());
        CHECK(double(s->udf) * double(s->scale) == Catch::Approx(0.1).epsilon(1e-4));
    }
    SECTION("smooth kappa=8 rejected for t near r0") {
        ShapeParams sp = smooth(8, 8);
        auto pts = sample_patch(sp, 64, 1.0, rng);
        CHECK_FALSE(assemble_sample(sp, pts, 0.95, 1.0).has_value());
    }
}

TEST_CASE("plane samples are never rejected", "[patchgen]") {
    Rng rng = make_rng(55);
    for (int trial = 0; trial < 100; ++trial) {
        auto pts = sample_patch(smooth(0, 0), 64, 1.0, rng);
        double t = 1.0 - uniform01(rng);
        CHECK(assemble_sample(smooth(0, 0), pts, t, 1.0).has_value());
    }
}

TEST_CASE("normalize_pair contract", "[patchgen]") {
    SECTION("0.5 scaling of a [-1,1] patch") {
        std::vector<float> pts{1, 0, 0, -1, 0, 0, 0, 0.3f, 0, 0, -0.3f, 0};
        std::array<float, 3> q{0.2f, 0, 0};
        float udf = 0.2f;
        float s = normalize_pair<float>(std::span<float>(pts), q.data(), udf);
        CHECK(s == 0.5f);
        CHECK(udf == 0.1f);
    }
    SECTION("max abs coordinate is exactly 0.5") {
        Rng rng = make_rng(17);
        for (int trial = 0; trial < 30; ++trial) {
            std::vector<float> pts(64 * 3);
            for (auto& v : pts) v = float(uniform(rng, -3.0, 3.0));
            std::array<float, 3> q{float(uniform(rng, -3, 3)), float(uniform(rng, -3, 3)),
                                   float(uniform(rng, -3, 3))};
            float udf = 0.1f;
            normalize_pair<float>(std::span<float>(pts), q.data(), udf);
            float maxabs = 0.0f;
            for (float v : pts) maxabs = std::max(maxabs, std::abs(v));
            for (float v : q) maxabs = std::max(maxabs, std::abs(v));
            CHECK(maxabs == 0.5f);
        }
    }
    SECTION("idempotent for m a power of two") {
        Rng rng = make_rng(18);
        std::vector<float> pts(64 * 3);
        for (auto& v : pts) v = float(uniform(rng, -2.0, 2.0));
        std::array<float, 3> q{0.4f, -1.2f, 0.7f};
        float udf = 0.3f;
        normalize_pair<float>(std::span<float>(pts), q.data(), udf);
        auto pts2 = pts;
        auto q2 = q;
        float udf2 = udf;
        float s = normalize_pair<float>(std::span<float>(pts2), q2.data(), udf2);
        CHECK(s == 1.0f);
        CHECK(pts2 == pts);
        CHECK(q2 == q);
        CHECK(udf2 == udf);
    }
    SECTION("degenerate patch throws") {
        std::vector<float> pts{1, 1, 1, 1, 1, 1};
        std::array<float, 3> q{1, 1, 1};
        float udf = 0.0f;
        CHECK_THROWS_AS(normalize_pair<float>(std::span<float>(pts), q.data(), udf), ContractError);
    }
}

TEST_CASE("emitted samples respect the min-distance bound", "[patchgen]") {
    GenConfig cfg;
    cfg.count = 200;
    cfg.seed = 99;
    GenStats stats;
    auto samples = generate_dataset(cfg, stats);
    REQUIRE(samples.size() == 200);
    for (const auto& s : samples) {
        CHECK(s.udf >= 0.0f);
        double min_d = std::numeric_limits<double>::infinity();
        for (int i = 0; i < s.m(); ++i) {
            Vec3d p(s.points[3 * i], s.points[3 * i + 1], s.points[3 * i + 2]);
            Vec3d q(s.query[0], s.query[1], s.query[2]);
            min_d = std::min(min_d, (p - q).norm());
        }
        double tol_canonical = validation_tolerance(cfg.r0) / double(s.scale);
        CHECK(double(s.udf) <= min_d + tol_canonical);
        float maxabs = 0.0f;
        for (float v : s.points) maxabs = std::max(maxabs, std::abs(v));
        for (float v : s.query) maxabs = std::max(maxabs, std::abs(v));
        CHECK(maxabs <= 0.5f);
    }
}

TEST_CASE("generation is a pure function of seed and config", "[patchgen]") {
    GenConfig cfg;
    cfg.count = 150;
    cfg.seed = 1234;
    GenStats s1, s2;
    auto a = generate_dataset(cfg, s1);
    auto b = generate_dataset(cfg, s2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].points == b[i].points);
        CHECK(a[i].query == b[i].query);
        CHECK(a[i].udf == b[i].udf);
        CHECK(a[i].family == b[i].family);
        CHECK(a[i].scale == b[i].scale);
    }
    CHECK(s1.rejected == s2.rejected);
}

TEST_CASE("plane-only config has zero rejections", "[patchgen]") {
    GenConfig cfg;
    cfg.count = 100;
    cfg.kappa_max = 0.0;
    cfg.family_mix = {1, 0, 0, 0, 0};
    GenStats stats;
    generate_dataset(cfg, stats);
    CHECK(stats.rejected == 0);
}

TEST_CASE("rotation augmentation", "[patchgen]") {
    GenConfig cfg;
    cfg.count = 1;
    cfg.seed = 7;
    GenStats stats;
    auto samples = generate_dataset(cfg, stats);
    PatchSample s = samples[0];

    SECTION("identity rotation leaves the sample bitwise unchanged") {
        PatchSample r = s;
        rotate_sample(r, Mat3<float>::Identity());
        CHECK(r.points == s.points);
        CHECK(r.query == s.query);
        CHECK(r.udf == s.udf);
    }
    SECTION("random rotation preserves udf and pairwise distances") {
        Rng rng = make_rng(64);
        PatchSample r = s;
        rotate_sample(r, random_rotation<float>(rng));
        CHECK(r.udf == s.udf);
        for (int trial = 0; trial < 20; ++trial) {
            int i = int(uniform_index(rng, 64)), j = int(uniform_index(rng, 64));
            auto dist = [](const PatchSample& ps, int a, int b) {
                Vec3f pa(ps.points[3 * a], ps.points[3 * a + 1], ps.points[3 * a + 2]);
                Vec3f pb(ps.points[3 * b], ps.points[3 * b + 1], ps.points[3 * b + 2]);
                return (pa - pb).norm();
            };
            CHECK(dist(r, i, j) == Catch::Approx(dist(s, i, j)).margin(1e-5));
        }
    }
}

TEST_CASE("noise augmentation with sigma 0 is the identity", "[patchgen]") {
    GenConfig cfg;
    cfg.count = 1;
    GenStats stats;
    auto samples = generate_dataset(cfg, stats);
    AugmentPolicy policy;
    policy.rotate = false;
    policy.noise = true;
    policy.sigma_train = 0.0f;
    Rng rng = make_rng(3);
    PatchSample out = augment(samples[0], policy, rng);
    CHECK(out.points == samples[0].points);
    CHECK(out.query == samples[0].query);
    CHECK(out.udf == samples[0].udf);
}

TEST_CASE("truncation keeps at least m/2 source points and re-pads", "[patchgen]") {
    GenConfig cfg;
    cfg.count = 4;
    cfg.family_mix = {1, 0, 0, 0, 0};
    GenStats stats;
    auto samples = generate_dataset(cfg, stats);
    Rng rng = make_rng(12);
    for (const auto& s : samples) {
        PatchSample t = s;
        truncate_sample(t, rng);
        REQUIRE(t.m() == s.m());
        std::set<std::array<float, 3>> original, kept;
        for (int i = 0; i < s.m(); ++i)
            original.insert({s.points[3 * i], s.points[3 * i + 1], s.points[3 * i + 2]});
        for (int i = 0; i < t.m(); ++i) {
            std::array<float, 3> p{t.points[3 * i], t.points[3 * i + 1], t.points[3 * i + 2]};
            CHECK(original.count(p) == 1);
            kept.insert(p);
        }
        CHECK(int(kept.size()) >= s.m() / 2);
    }
}

TEST_CASE("dataset round-trip is bitwise lossless", "[patchgen]") {
    GenConfig cfg;
    cfg.count = 1000;
    cfg.seed = 5;
    GenStats stats;
    auto samples = generate_dataset(cfg, stats);
    std::string path = temp_path("losf_test_dataset.lsfd");
    write_dataset(path, samples);

    DatasetHeader header;
    auto loaded = read_dataset(path, &header);
    REQUIRE(loaded.size() == samples.size());
    CHECK(header.m == 64);
    CHECK(header.count == 1000);
    std::uint32_t hist_total = 0;
    for (auto h : header.family_histogram) hist_total += h;
    CHECK(hist_total == 1000);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(loaded[i].points == samples[i].points);
        CHECK(loaded[i].query == samples[i].query);
        CHECK(loaded[i].udf == samples[i].udf);
        CHECK(loaded[i].family == samples[i].family);
        CHECK(loaded[i].scale == samples[i].scale);
    }

    SECTION("streaming read matches bulk read") {
        DatasetReader reader(path);
        PatchSample s500 = reader.read(500);
        CHECK(s500.points == loaded[500].points);
        CHECK(s500.udf == loaded[500].udf);
    }
    std::filesystem::remove(path);
}

TEST_CASE("dataset format errors carry byte offsets", "[patchgen]") {
    std::string path = temp_path("losf_test_badfile.lsfd");
    SECTION("wrong magic") {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE" << std::string(60, '\0');
        out.close();
        CHECK_THROWS_AS(DatasetReader(path), FormatError);
        try {
            DatasetReader reader(path);
        } catch (const FormatError& e) {
            CHECK(e.offset == 0);
        }
    }
    SECTION("truncated records") {
        GenConfig cfg;
        cfg.count = 10;
        GenStats stats;
        auto samples = generate_dataset(cfg, stats);
        write_dataset(path, samples);
        auto size = std::filesystem::file_size(path);
        std::filesystem::resize_file(path, size - DatasetHeader::record_size(64));
        CHECK_THROWS_WITH(DatasetReader(path), Catch::Matchers::ContainsSubstring("truncated"));
    }
    std::filesystem::remove(path);
}
