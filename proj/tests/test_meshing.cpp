#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>

#include "losf/meshing.hpp"

using namespace losf;

namespace {

UdfGrid analytic_grid(int R, const std::function<float(const Vec3f&)>& field, float sentinel_like) {
    UdfGrid grid;
    grid.resolution = R;
    grid.origin = -0.5f;
    grid.spacing = 1.0f / float(R - 1);
    grid.radius = sentinel_like / 4.0f;
    grid.sentinel = sentinel_like;
    grid.values.resize(std::size_t(R) * R * R);
    for (int z = 0; z < R; ++z)
        for (int y = 0; y < R; ++y)
            for (int x = 0; x < R; ++x) grid.at(x, y, z) = field(grid.vertex(x, y, z));
    return grid;
}

UdfGrid sphere_grid(int R, float radius, float sentinel_like = 1.0f) {
    return analytic_grid(
        R, [radius](const Vec3f& p) { return std::abs(p.norm() - radius); }, sentinel_like);
}

// Edge-use counts: a closed iso-surface must use every edge exactly twice.
std::map<std::pair<std::uint32_t, std::uint32_t>, int> edge_uses(const TriMesh& mesh) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> uses;
    for (const auto& t : mesh.triangles)
        for (int e = 0; e < 3; ++e) {
            std::uint32_t a = t[e], b = t[(e + 1) % 3];
            uses[{std::min(a, b), std::max(a, b)}]++;
        }
    return uses;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("marching cubes recovers an analytic sphere", "[meshing]") {
    const int R = 64;
    const float radius = 0.3f, iso = 0.01f;
    UdfGrid grid = sphere_grid(R, radius);
    TriMesh mesh = marching_cubes(grid, iso);
    REQUIRE_FALSE(mesh.empty());

    float bound = iso + 1.5f * grid.spacing;
    for (const auto& v : mesh.vertices) CHECK(std::abs(v.norm() - radius) < bound);

    // Both sheets (inner and outer layer of the UDF shell) must appear.
    int inner = 0, outer = 0;
    for (const auto& v : mesh.vertices) (v.norm() < radius ? inner : outer)++;
    CHECK(inner > 0);
    CHECK(outer > 0);

    SECTION("closed surface is edge-manifold: every edge used exactly twice") {
        for (const auto& [edge, count] : edge_uses(mesh)) CHECK(count == 2);
    }
}

TEST_CASE("uniform sentinel grid produces an empty mesh", "[meshing]") {
    UdfGrid grid = analytic_grid(16, [](const Vec3f&) { return 0.072f; }, 0.072f);
    TriMesh mesh = marching_cubes(grid, 0.005f);
    CHECK(mesh.empty());
}

TEST_CASE("iso at or above the sentinel is rejected", "[meshing]") {
    UdfGrid grid = sphere_grid(16, 0.3f, 0.072f);
    CHECK_THROWS_AS(marching_cubes(grid, 0.072f), ContractError);
    CHECK_THROWS_AS(marching_cubes(grid, 0.1f), ContractError);
    CHECK_THROWS_AS(marching_cubes(grid, 0.0f), ContractError);
}

TEST_CASE("plane UDF gives two parallel sheets", "[meshing]") {
    const int R = 33;
    UdfGrid grid = analytic_grid(R, [](const Vec3f& p) { return std::abs(p.z()); }, 1.0f);
    TriMesh mesh = marching_cubes(grid, 0.02f);
    REQUIRE_FALSE(mesh.empty());
    int above = 0, below = 0;
    for (const auto& v : mesh.vertices) {
        CHECK(std::abs(std::abs(v.z()) - 0.02f) < 1e-6f);
        (v.z() > 0 ? above : below)++;
    }
    CHECK(above > 0);
    CHECK(below > 0);
}

TEST_CASE("linear field vertices are exact up to round-off", "[meshing]") {
    const int R = 17;
    UdfGrid grid = analytic_grid(R, [](const Vec3f& p) { return p.x() + 0.6f; }, 10.0f);
    TriMesh mesh = marching_cubes(grid, 0.35f);
    REQUIRE_FALSE(mesh.empty());
    for (const auto& v : mesh.vertices) CHECK(v.x() == Catch::Approx(-0.25).margin(1e-6));
}

TEST_CASE("shared cube edges weld to identical vertices", "[meshing]") {
    UdfGrid grid = sphere_grid(24, 0.3f);
    TriMesh mesh = marching_cubes(grid, 0.02f);
    // Weld-by-key means no two vertices should be bitwise identical.
    std::set<std::array<float, 3>> unique_pos;
    for (const auto& v : mesh.vertices) unique_pos.insert({v.x(), v.y(), v.z()});
    CHECK(unique_pos.size() == mesh.vertices.size());
    // And no triangle repeats or degenerates.
    for (const auto& t : mesh.triangles) {
        CHECK(t[0] != t[1]);
        CHECK(t[1] != t[2]);
        CHECK(t[0] != t[2]);
    }
}

TEST_CASE("project_vertices contracts the shell toward the zero set", "[meshing]") {
    UdfGrid grid = sphere_grid(48, 0.3f);
    TriMesh mesh = marching_cubes(grid, 0.02f);
    REQUIRE_FALSE(mesh.empty());

    auto mean_radial_err = [&](const TriMesh& m) {
        double sum = 0.0;
        for (const auto& v : m.vertices) sum += std::abs(double(v.norm()) - 0.3);
        return sum / double(m.vertices.size());
    };
    auto mean_u = [&](const TriMesh& m) {
        double sum = 0.0;
        for (const auto& v : m.vertices) sum += grid_value_trilinear(grid, v);
        return sum / double(m.vertices.size());
    };

    SECTION("zero iterations is the identity") {
        TriMesh same = project_vertices(mesh, grid, 0);
        CHECK(same.vertices == mesh.vertices);
    }
    SECTION("five iterations shrink the radial error and never raise mean U") {
        double err_before = mean_radial_err(mesh);
        TriMesh cur = mesh;
        double u_prev = mean_u(cur);
        for (int i = 0; i < 5; ++i) {
            cur = project_vertices(cur, grid, 1);
            double u_now = mean_u(cur);
            CHECK(u_now <= u_prev + 1e-9);
            u_prev = u_now;
        }
        CHECK(mean_radial_err(cur) < err_before);
    }
    SECTION("vertices on the zero set stay put") {
        UdfGrid planar = analytic_grid(17, [](const Vec3f& p) { return std::abs(p.x()); }, 1.0f);
        TriMesh m;
        m.vertices.push_back(Vec3f(0.0f, 0.1f, 0.1f));  // exact grid-plane zero
        m.triangles.push_back({0, 0, 0});
        TriMesh out = project_vertices(m, planar, 3);
        CHECK(out.vertices[0] == m.vertices[0]);
    }
}

TEST_CASE("obj io", "[meshing]") {
    TriMesh mesh;
    mesh.vertices = {Vec3f(0, 0, 0), Vec3f(1, 0, 0), Vec3f(0, 1, 0.25f)};
    mesh.triangles = {{0, 1, 2}};
    std::string path = temp_path("losf_test.obj");
    write_obj(path, mesh);

    SECTION("face indices are 1-based in the file") {
        std::ifstream in(path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        CHECK(text.find("f 1 2 3") != std::string::npos);
    }
    SECTION("round-trip to 6 significant digits") {
        TriMesh loaded = read_obj(path);
        REQUIRE(loaded.vertices.size() == 3);
        REQUIRE(loaded.triangles.size() == 1);
        for (int i = 0; i < 3; ++i)
            CHECK((loaded.vertices[i] - mesh.vertices[i]).norm() < 1e-6f);
        CHECK(loaded.triangles[0] == mesh.triangles[0]);
    }
    SECTION("slashed face tokens parse") {
        std::ofstream out(path);
        out << "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2/2 3//3\n";
        out.close();
        TriMesh loaded = read_obj(path);
        CHECK(loaded.triangles.size() == 1);
    }
    std::filesystem::remove(path);
}

TEST_CASE("ply mesh io round-trips bitwise", "[meshing]") {
    TriMesh mesh;
    Rng rng = make_rng(15);
    for (int i = 0; i < 50; ++i)
        mesh.vertices.emplace_back(float(uniform(rng, -1, 1)), float(uniform(rng, -1, 1)),
                                   float(uniform(rng, -1, 1)));
    for (int i = 0; i + 2 < 50; i += 3)
        mesh.triangles.push_back({std::uint32_t(i), std::uint32_t(i + 1), std::uint32_t(i + 2)});
    std::string path = temp_path("losf_test_mesh.ply");
    write_ply_mesh(path, mesh);
    TriMesh loaded = read_ply_mesh(path);
    REQUIRE(loaded.vertices.size() == mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
        CHECK(loaded.vertices[i] == mesh.vertices[i]);
    CHECK(loaded.triangles == mesh.triangles);
    std::filesystem::remove(path);
}

TEST_CASE("empty mesh writes valid zero-element files", "[meshing]") {
    TriMesh mesh;
    std::string obj = temp_path("losf_empty.obj");
    std::string ply = temp_path("losf_empty.ply");
    write_obj(obj, mesh);
    write_ply_mesh(ply, mesh);
    CHECK(read_obj(obj).vertices.empty());
    CHECK(read_ply_mesh(ply).vertices.empty());
    CHECK(read_ply_mesh(ply).triangles.empty());
    std::filesystem::remove(obj);
    std::filesystem::remove(ply);
}
