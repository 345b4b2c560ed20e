#include <catch2/catch_amalgamated.hpp>

#include "losf/evalkit.hpp"

using namespace losf;

namespace {

TriMesh single_triangle() {
    TriMesh mesh;
    mesh.vertices = {Vec3f(0, 0, 0), Vec3f(1, 0, 0), Vec3f(0, 1, 0)};
    mesh.triangles = {{0, 1, 2}};
    return mesh;
}

std::vector<Vec3f> random_points(std::size_t n, Rng& rng, float span = 0.5f) {
    std::vector<Vec3f> pts;
    pts.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        pts.emplace_back(float(uniform(rng, -span, span)), float(uniform(rng, -span, span)),
                         float(uniform(rng, -span, span)));
    return pts;
}

}  // namespace

TEST_CASE("sample_mesh places points on the surface", "[evalkit]") {
    TriMesh mesh = single_triangle();
    Rng rng = make_rng(1);
    auto pts = sample_mesh(mesh, 2000, rng);
    REQUIRE(pts.size() == 2000);
    for (const auto& p : pts) {
        CHECK(p.z() == 0.0f);
        CHECK(p.x() >= 0.0f);
        CHECK(p.y() >= 0.0f);
        CHECK(p.x() + p.y() <= 1.0f + 1e-6f);
    }
    SECTION("fixed seed reproducibility") {
        Rng r1 = make_rng(7), r2 = make_rng(7);
        auto a = sample_mesh(mesh, 100, r1);
        auto b = sample_mesh(mesh, 100, r2);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
    SECTION("empty mesh is an error") {
        TriMesh empty;
        CHECK_THROWS_AS(sample_mesh(empty, 10, rng), ContractError);
    }
}

TEST_CASE("sample_mesh weights triangles by area (chi-squared)", "[evalkit]") {
    // Two triangles, areas 3 : 1.
    TriMesh mesh;
    mesh.vertices = {Vec3f(0, 0, 0), Vec3f(3, 0, 0), Vec3f(0, 2, 0),   // area 3
                     Vec3f(10, 0, 0), Vec3f(11, 0, 0), Vec3f(10, 2, 0)};  // area 1
    mesh.triangles = {{0, 1, 2}, {3, 4, 5}};
    Rng rng = make_rng(2);
    const std::int64_t n = 100000;
    auto pts = sample_mesh(mesh, n, rng);
    std::int64_t big = 0;
    for (const auto& p : pts)
        if (p.x() < 5.0f) ++big;
    std::int64_t small = n - big;
    double e_big = 0.75 * double(n), e_small = 0.25 * double(n);
    double chi2 = (big - e_big) * (big - e_big) / e_big +
                  (small - e_small) * (small - e_small) / e_small;
    CHECK(chi2 < 10.83);  // chi^2_{1, 0.001}
}

TEST_CASE("chamfer closed forms and brute-force agreement", "[evalkit]") {
    SECTION("identical sets") {
        Rng rng = make_rng(3);
        auto a = random_points(200, rng);
        CHECK(chamfer(a, a) == 0.0);
    }
    SECTION("single points at distance 0.1") {
        std::vector<Vec3f> a{Vec3f(0, 0, 0)}, b{Vec3f(0, 0, 0.1f)};
        CHECK(chamfer(a, b) == Catch::Approx(0.1).epsilon(1e-6));
    }
    SECTION("symmetry") {
        Rng rng = make_rng(4);
        auto a = random_points(100, rng);
        auto b = random_points(100, rng);
        CHECK(chamfer(a, b) == chamfer(b, a));
    }
    SECTION("indexed equals brute force on random instances") {
        Rng rng = make_rng(5);
        for (int trial = 0; trial < 10; ++trial) {
            auto a = random_points(100, rng);
            auto b = random_points(120, rng);
            CHECK(std::abs(chamfer(a, b) - chamfer_brute(a, b)) < 1e-12);
        }
    }
}

TEST_CASE("f1 closed forms", "[evalkit]") {
    Rng rng = make_rng(6);
    auto a = random_points(150, rng);
    CHECK(f1_score(a, a, 0.001) == 1.0);

    std::vector<Vec3f> far_a{Vec3f(0, 0, 0)}, far_b{Vec3f(1, 1, 1)};
    CHECK(f1_score(far_a, far_b, 0.01) == 0.0);

    // precision 1, recall 0.5 -> harmonic mean 2/3
    std::vector<Vec3f> sub{Vec3f(0, 0, 0)};
    std::vector<Vec3f> both{Vec3f(0, 0, 0), Vec3f(5, 5, 5)};
    CHECK(f1_score(sub, both, 0.01) == Catch::Approx(2.0 / 3.0));
}

TEST_CASE("add_noise statistics", "[evalkit]") {
    Rng rng = make_rng(7);
    PointCloud cloud;
    cloud.points = random_points(100000, rng);
    PointCloud noisy = cloud;
    Rng nrng = make_rng(8);

    SECTION("sigma 0 is the identity") {
        add_noise(noisy, 0.0, nrng);
        CHECK(noisy.points == cloud.points);
    }
    SECTION("displacement std matches sigma within 5%") {
        const double sigma = 0.01;
        add_noise(noisy, sigma, nrng);
        double sum = 0.0, sum2 = 0.0;
        std::int64_t n = 0;
        for (std::size_t i = 0; i < cloud.points.size(); ++i)
            for (int a = 0; a < 3; ++a) {
                double d = double(noisy.points[i][a]) - double(cloud.points[i][a]);
                sum += d;
                sum2 += d * d;
                ++n;
            }
        double mean = sum / double(n);
        double std_dev = std::sqrt(sum2 / double(n) - mean * mean);
        CHECK(std_dev == Catch::Approx(sigma).epsilon(0.05));
        CHECK(std::abs(mean) < 5.0 * sigma / std::sqrt(double(n)));
    }
}

TEST_CASE("add_outliers replaces exactly floor(f*N) points", "[evalkit]") {
    Rng rng = make_rng(9);
    PointCloud cloud;
    cloud.points = random_points(10000, rng, 0.4f);
    PointCloud corrupted = cloud;
    Rng orng = make_rng(10);

    SECTION("fraction 0 is the identity") {
        add_outliers(corrupted, 0.0, orng);
        CHECK(corrupted.points == cloud.points);
    }
    SECTION("fraction 0.1 on N=10^4") {
        add_outliers(corrupted, 0.1, orng);
        REQUIRE(corrupted.points.size() == cloud.points.size());
        std::vector<float> moved_x;
        std::int64_t moved = 0;
        for (std::size_t i = 0; i < cloud.points.size(); ++i) {
            if (corrupted.points[i] != cloud.points[i]) {
                ++moved;
                moved_x.push_back(corrupted.points[i].x());
            }
        }
        CHECK(moved == 1000);

        // Replaced coordinates are uniform in [-0.5, 0.5]: KS test per axis.
        std::sort(moved_x.begin(), moved_x.end());
        double d_stat = 0.0;
        for (std::size_t i = 0; i < moved_x.size(); ++i) {
            double cdf = double(moved_x[i]) + 0.5;
            d_stat = std::max(d_stat, std::abs(cdf - double(i + 1) / double(moved_x.size())));
            d_stat = std::max(d_stat, std::abs(cdf - double(i) / double(moved_x.size())));
        }
        CHECK(d_stat < 1.95 / std::sqrt(1000.0));  // alpha ~ 0.001
    }
    SECTION("fraction >= 1 is rejected") {
        CHECK_THROWS_AS(add_outliers(corrupted, 1.0, orng), ContractError);
    }
}

TEST_CASE("brute_udf point-triangle cases", "[evalkit]") {
    TriMesh tri = single_triangle();
    SECTION("on-face and above-face queries") {
        CHECK(brute_udf(tri, Vec3d(0.2, 0.2, 0.0)) == 0.0);
        CHECK(brute_udf(tri, Vec3d(0.25, 0.25, 0.2)) == Catch::Approx(0.2));
        CHECK(brute_udf(tri, Vec3d(0.25, 0.25, -0.2)) == Catch::Approx(0.2));
    }
    SECTION("edge and vertex regions") {
        CHECK(brute_udf(tri, Vec3d(-1.0, -1.0, 0.0)) == Catch::Approx(std::sqrt(2.0)));
        CHECK(brute_udf(tri, Vec3d(0.5, -0.3, 0.0)) == Catch::Approx(0.3));
        CHECK(brute_udf(tri, Vec3d(2.0, 0.0, 0.0)) == Catch::Approx(1.0));
    }
    SECTION("never exceeds the distance to any vertex") {
        Rng rng = make_rng(11);
        TriMesh mesh;
        mesh.vertices = {Vec3f(0, 0, 0), Vec3f(1, 0, 0), Vec3f(0, 1, 0), Vec3f(0.3f, 0.2f, 0.9f)};
        mesh.triangles = {{0, 1, 2}, {0, 1, 3}, {1, 2, 3}, {0, 2, 3}};
        for (int trial = 0; trial < 200; ++trial) {
            Vec3d q(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2));
            double d = brute_udf(mesh, q);
            for (const auto& v : mesh.vertices) CHECK(d <= (q - v.cast<double>()).norm() + 1e-12);
        }
    }
    SECTION("dense deterministic lattice bounds the oracle") {
        // Barycentric lattice with covering radius < h: oracle <= sampled min
        // and the gap is below 2h.
        TriMesh mesh;
        mesh.vertices = {Vec3f(0, 0, 0), Vec3f(1, 0, 0), Vec3f(0, 1, 0), Vec3f(0.5f, 0.5f, 0.8f)};
        mesh.triangles = {{0, 1, 2}, {0, 1, 3}};
        const int K = 60;  // lattice subdivisions per edge
        std::vector<Vec3d> lattice;
        for (const auto& t : mesh.triangles) {
            Vec3d a = mesh.vertices[t[0]].cast<double>();
            Vec3d b = mesh.vertices[t[1]].cast<double>();
            Vec3d c = mesh.vertices[t[2]].cast<double>();
            for (int i = 0; i <= K; ++i)
                for (int j = 0; j <= K - i; ++j)
                    lattice.push_back(a + (double(i) / K) * (b - a) + (double(j) / K) * (c - a));
        }
        double h = 2.0 / K;  // lattice spacing bound for these edge lengths
        Rng rng = make_rng(12);
        for (int trial = 0; trial < 1000; ++trial) {
            Vec3d q(uniform(rng, -1, 2), uniform(rng, -1, 2), uniform(rng, -1, 2));
            double oracle = brute_udf(mesh, q);
            double sampled = std::numeric_limits<double>::infinity();
            for (const auto& p : lattice) sampled = std::min(sampled, (q - p).norm());
            CHECK(oracle <= sampled + 1e-12);
            CHECK(sampled - oracle < 2.0 * h);
        }
    }
}

TEST_CASE("metric report formats", "[evalkit]") {
    Rng rng = make_rng(13);
    auto a = random_points(500, rng);
    MetricReport report = compute_metrics(a, a);
    CHECK(report.cd_x100 == 0.0);
    CHECK(report.f1_005 == 1.0);
    CHECK(report.f1_01 == 1.0);
    CHECK(report.n_samples == 500);
    std::ostringstream csv, text;
    report.to_csv(csv);
    report.to_text(text);
    CHECK(csv.str() == "0,1,1,500\n");
    CHECK(text.str().find("CD x100") != std::string::npos);
}
