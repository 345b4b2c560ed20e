#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "losf/query.hpp"

using namespace losf;

namespace {

// Points uniformly on a sphere surface.
std::vector<Vec3f> sphere_cloud(std::size_t n, float radius, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::vector<Vec3f> pts;
    pts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec3d dir(gaussian(rng), gaussian(rng), gaussian(rng));
        dir.normalize();
        pts.push_back((dir * radius).cast<float>());
    }
    return pts;
}

ModelParams<float> test_params(int m = 64) {
    ModelConfig cfg;
    cfg.m = m;
    ModelParams<float> params(cfg);
    params.init(42);
    return params;
}

}  // namespace

TEST_CASE("extract_patch returns NoPatch below 5 points", "[query]") {
    std::vector<Vec3f> pts{{0, 0, 0}, {0.001f, 0, 0}, {0, 0.001f, 0}, {-0.001f, 0, 0}};
    SpatialIndex index(pts, 0.05f);
    std::vector<std::uint32_t> scratch;
    CHECK_FALSE(extract_patch(index, Vec3f(0, 0, 0.01f), 0.05f, 64, 1, scratch).has_value());
    pts.emplace_back(0, -0.001f, 0);
    SpatialIndex index5(pts, 0.05f);
    CHECK(extract_patch(index5, Vec3f(0, 0, 0.01f), 0.05f, 64, 1, scratch).has_value());
}

TEST_CASE("extract_patch subsampling is deterministic and in-radius", "[query]") {
    auto pts = sphere_cloud(5000, 0.4f, 7);
    float r = 0.05f;
    SpatialIndex index(pts, r);
    std::vector<std::uint32_t> scratch;
    Vec3f q = pts[123] * 1.01f;

    auto a = extract_patch(index, q, r, 64, 555, scratch);
    auto b = extract_patch(index, q, r, 64, 555, scratch);
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK(a->points == b->points);  // same query key -> bitwise identical
    CHECK(a->inv_scale == b->inv_scale);
    REQUIRE(a->points.size() == 64 * 3);

    // All selected points within r of q, measured in the canonical frame.
    float limit = r / a->inv_scale + 1e-5f;
    for (int i = 0; i < 64; ++i) {
        Vec3f p(a->points[3 * i], a->points[3 * i + 1], a->points[3 * i + 2]);
        Vec3f cq(a->query[0], a->query[1], a->query[2]);
        CHECK((p - cq).norm() <= limit);
    }
    CHECK(a->min_dist <= r);
}

TEST_CASE("extract_patch is invariant to cloud row order", "[query]") {
    auto pts = sphere_cloud(3000, 0.4f, 8);
    auto shuffled = pts;
    Rng rng = make_rng(9);
    for (std::size_t i = shuffled.size() - 1; i > 0; --i)
        std::swap(shuffled[i], shuffled[uniform_index(rng, i + 1)]);

    float r = 0.06f;
    SpatialIndex ia(pts, r), ib(shuffled, r);
    std::vector<std::uint32_t> scratch;
    for (int trial = 0; trial < 20; ++trial) {
        Vec3f q = pts[trial * 100] * float(uniform(rng, 0.98, 1.02));
        auto a = extract_patch(ia, q, r, 64, std::uint64_t(trial), scratch);
        auto b = extract_patch(ib, q, r, 64, std::uint64_t(trial), scratch);
        REQUIRE(a.has_value() == b.has_value());
        if (a) {
            CHECK(a->points == b->points);
            CHECK(a->query == b->query);
            CHECK(a->min_dist == b->min_dist);
        }
    }
}

TEST_CASE("predict_udf clamps to the nearest point distance", "[query]") {
    auto params = test_params();
    // Constant large predictor: softplus(5) ~ 5 in canonical units.
    for (const char* name : {"udf.l0.w", "udf.l0.b", "udf.l1.w", "udf.l1.b", "udf.l2.w"}) {
        auto& p = params.at(name);
        std::fill(p.value.begin(), p.value.end(), 0.0f);
    }
    params.at("udf.l2.b").value[0] = 5.0f;

    auto pts = sphere_cloud(4000, 0.4f, 10);
    float r = 0.05f;
    SpatialIndex index(pts, r);
    std::vector<std::uint32_t> scratch;
    Vec3f q = pts[50] * 1.02f;
    auto patch = extract_patch(index, q, r, 64, 3, scratch);
    REQUIRE(patch.has_value());
    CHECK(predict_udf(params, *patch) == patch->min_dist);

    SECTION("scaling the pair by a power of two scales the bound exactly") {
        std::vector<Vec3f> scaled;
        for (const auto& p : pts) scaled.push_back(0.5f * p);
        SpatialIndex half(scaled, 0.5f * r);
        auto patch2 = extract_patch(half, 0.5f * q, 0.5f * r, 64, 3, scratch);
        REQUIRE(patch2.has_value());
        CHECK(patch2->min_dist == 0.5f * patch->min_dist);
    }
}

TEST_CASE("evaluate_grid sentinel, bounds, and determinism", "[query]") {
    auto params = test_params();
    auto raw = sphere_cloud(3000, 0.4f, 11);
    PointCloud cloud = normalize_cloud(raw);
    float r = 0.1f;
    GridStats stats;
    UdfGrid grid = evaluate_grid(params, cloud, 16, r, 1, &stats);

    CHECK(stats.total_vertices == 16 * 16 * 16);
    CHECK(stats.predicted > 0);
    CHECK(stats.empty > 0);
    CHECK(stats.mean_nn_spacing > 0.0);

    // Center of the sphere is farther than r from all points -> sentinel.
    int mid = 8;
    CHECK(grid.at(mid, mid, mid) == grid.sentinel);
    for (float v : grid.values) {
        CHECK(v >= 0.0f);
        CHECK(v <= grid.sentinel);
    }

    SECTION("bitwise deterministic across runs and thread counts") {
        UdfGrid again = evaluate_grid(params, cloud, 16, r, 1);
        CHECK(grid.values == again.values);
        UdfGrid threaded = evaluate_grid(params, cloud, 16, r, 3);
        CHECK(grid.values == threaded.values);
    }

    SECTION("invariant to cloud row order") {
        auto shuffled = raw;
        Rng rng = make_rng(12);
        for (std::size_t i = shuffled.size() - 1; i > 0; --i)
            std::swap(shuffled[i], shuffled[uniform_index(rng, i + 1)]);
        PointCloud cloud2 = normalize_cloud(shuffled);
        UdfGrid grid2 = evaluate_grid(params, cloud2, 16, r, 1);
        CHECK(grid.values == grid2.values);
    }
}

TEST_CASE("vertex coincident with a cloud point predicts below grid spacing", "[query]") {
    auto params = test_params();
    // Put a dense blob of points exactly at a grid vertex of a 9^3 lattice.
    UdfGrid probe;
    probe.resolution = 9;
    probe.spacing = 1.0f / 8.0f;
    probe.origin = -0.5f;
    Vec3f vtx = probe.vertex(6, 4, 4);
    Rng rng = make_rng(13);
    std::vector<Vec3f> raw;
    raw.push_back(vtx);
    for (int i = 0; i < 600; ++i) {
        Vec3f jitter(float(uniform(rng, -0.02, 0.02)), float(uniform(rng, -0.02, 0.02)),
                     float(uniform(rng, -0.02, 0.02)));
        raw.push_back(vtx + jitter);
    }
    // Anchor the bbox so normalization is identity-like around the blob.
    raw.emplace_back(-0.5f, -0.5f, -0.5f);
    raw.emplace_back(0.5f, 0.5f, 0.5f);
    PointCloud cloud = normalize_cloud(raw);
    UdfGrid grid = evaluate_grid(params, cloud, 9, 0.05f, 1);
    CHECK(grid.at(6, 4, 4) < grid.spacing);
}

TEST_CASE("grid dump round-trips", "[query]") {
    UdfGrid grid;
    grid.resolution = 8;
    grid.origin = -0.5f;
    grid.spacing = 1.0f / 7.0f;
    grid.radius = 0.018f;
    grid.sentinel = 0.072f;
    grid.cloud_center = Vec3f(0.1f, -0.2f, 0.3f);
    grid.cloud_scale = 1.25f;
    grid.values.resize(512);
    Rng rng = make_rng(14);
    for (auto& v : grid.values) v = float(uniform01(rng)) * 0.07f;

    std::string path = (std::filesystem::temp_directory_path() / "losf_test.grid").string();
    write_grid(path, grid);
    UdfGrid loaded = read_grid(path);
    CHECK(loaded.resolution == grid.resolution);
    CHECK(loaded.spacing == grid.spacing);
    CHECK(loaded.radius == grid.radius);
    CHECK(loaded.sentinel == grid.sentinel);
    CHECK(loaded.cloud_center == grid.cloud_center);
    CHECK(loaded.cloud_scale == grid.cloud_scale);
    CHECK(loaded.values == grid.values);
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".meta");
}
