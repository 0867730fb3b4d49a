#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "mpsf/mesh.hpp"

using namespace mpsf;

namespace {

double mesh_area(const TriMesh& m) {
  double area = 0;
  for (const auto& t : m.triangles)
    area += 0.5 * norm(cross(m.vertices[t[1]] - m.vertices[t[0]],
                             m.vertices[t[2]] - m.vertices[t[0]]));
  return area;
}

// every undirected edge must be shared by exactly two triangles
bool closed_two_manifold(const TriMesh& m) {
  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& t : m.triangles) {
    for (int e = 0; e < 3; ++e) {
      int a = t[e], b = t[(e + 1) % 3];
      edge_count[{std::min(a, b), std::max(a, b)}]++;
    }
  }
  for (const auto& [edge, count] : edge_count)
    if (count != 2) return false;
  return true;
}

}  // namespace

TEST_CASE("evaluate_grid basics") {
  auto sphere = [](const Vec3& p) { return norm(p) - 0.5; };
  SUBCASE("resolution 2 gives the 8 box corners") {
    SdfGrid g = evaluate_grid(sphere, {-1, -1, -1}, {1, 1, 1}, 2);
    CHECK(g.values.size() == 8);
    CHECK(g.at(0, 0, 0) == doctest::Approx(std::sqrt(3.0) - 0.5));
  }
  SUBCASE("center voxel of an odd grid reads -r") {
    SdfGrid g = evaluate_grid(sphere, {-1, -1, -1}, {1, 1, 1}, 9);
    CHECK(g.at(4, 4, 4) == doctest::Approx(-0.5));
  }
  SUBCASE("two evaluations are identical") {
    SdfGrid a = evaluate_grid(sphere, {-1, -1, -1}, {1, 1, 1}, 17);
    SdfGrid b = evaluate_grid(sphere, {-1, -1, -1}, {1, 1, 1}, 17);
    CHECK(a.values == b.values);
  }
  SUBCASE("multi-threaded evaluation matches single-threaded") {
    SdfGrid a = evaluate_grid(sphere, {-1, -1, -1}, {1, 1, 1}, 33, 1);
    SdfGrid b = evaluate_grid(sphere, {-1, -1, -1}, {1, 1, 1}, 33, 4);
    CHECK(a.values == b.values);
  }
}

TEST_CASE("marching cubes on the analytic sphere") {
  auto sphere = [](const Vec3& p) { return norm(p) - 0.5; };
  SdfGrid grid = evaluate_grid(sphere, {-1, -1, -1}, {1, 1, 1}, 128);
  TriMesh mesh = marching_cubes(grid, 0.0);
  REQUIRE(!mesh.vertices.empty());

  SUBCASE("vertex radii within 2 voxels of r") {
    double voxel = 2.0 / 127.0;
    for (const auto& v : mesh.vertices) CHECK(std::fabs(norm(v) - 0.5) <= 2 * voxel);
  }
  SUBCASE("surface area within 3% of 4 pi r^2") {
    double expected = 4.0 * M_PI * 0.25;
    CHECK(mesh_area(mesh) == doctest::Approx(expected).epsilon(0.03));
  }
  SUBCASE("closed 2-manifold: every edge shared by exactly 2 triangles") {
    CHECK(closed_two_manifold(mesh));
  }
}

TEST_CASE("marching cubes corner cases") {
  SUBCASE("all-positive grid produces an empty mesh") {
    auto f = [](const Vec3&) { return 1.0; };
    SdfGrid grid = evaluate_grid(f, {-1, -1, -1}, {1, 1, 1}, 16);
    TriMesh mesh = marching_cubes(grid, 0.0);
    CHECK(mesh.vertices.empty());
    CHECK(mesh.triangles.empty());
  }
  SUBCASE("axis-aligned plane f=z yields vertices with |z| <= 1e-6") {
    auto f = [](const Vec3& p) { return p.z; };
    SdfGrid grid = evaluate_grid(f, {-1, -1, -1}, {1, 1, 1}, 32);
    TriMesh mesh = marching_cubes(grid, 0.0);
    REQUIRE(!mesh.vertices.empty());
    for (const auto& v : mesh.vertices) CHECK(std::fabs(v.z) <= 1e-6);
  }
  SUBCASE("vertices interpolate the trilinear field to |f| <= 1e-6") {
    auto f = [](const Vec3& p) { return norm(p) - 0.45; };
    SdfGrid grid = evaluate_grid(f, {-1, -1, -1}, {1, 1, 1}, 24);
    TriMesh mesh = marching_cubes(grid, 0.0);
    // trilinear interpolation of grid values at each vertex
    auto trilinear = [&](const Vec3& p) {
      double fx = (p.x - grid.bmin.x) / (grid.bmax.x - grid.bmin.x) * (grid.nx - 1);
      double fy = (p.y - grid.bmin.y) / (grid.bmax.y - grid.bmin.y) * (grid.ny - 1);
      double fz = (p.z - grid.bmin.z) / (grid.bmax.z - grid.bmin.z) * (grid.nz - 1);
      int x = std::min(grid.nx - 2, std::max(0, static_cast<int>(fx)));
      int y = std::min(grid.ny - 2, std::max(0, static_cast<int>(fy)));
      int z = std::min(grid.nz - 2, std::max(0, static_cast<int>(fz)));
      double ax = fx - x, ay = fy - y, az = fz - z;
      double acc = 0;
      for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            acc += grid.at(x + dx, y + dy, z + dz) * (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay) *
                   (dz ? az : 1 - az);
      return acc;
    };
    for (const auto& v : mesh.vertices) CHECK(std::fabs(trilinear(v)) <= 1e-6);
  }
}

TEST_CASE("mesh file round trips") {
  auto sphere = [](const Vec3& p) { return norm(p) - 0.5; };
  SdfGrid grid = evaluate_grid(sphere, {-1, -1, -1}, {1, 1, 1}, 12);
  TriMesh mesh = marching_cubes(grid, 0.0);
  REQUIRE(!mesh.vertices.empty());

  SUBCASE("OBJ") {
    write_mesh(mesh, "/tmp/mpsf_test.obj", MeshFormat::OBJ);
    TriMesh back = read_mesh("/tmp/mpsf_test.obj");
    REQUIRE(back.vertices.size() == mesh.vertices.size());
    REQUIRE(back.triangles.size() == mesh.triangles.size());
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
      CHECK(to_f32(back.vertices[i].x) == to_f32(mesh.vertices[i].x));
      CHECK(to_f32(back.vertices[i].y) == to_f32(mesh.vertices[i].y));
      CHECK(to_f32(back.vertices[i].z) == to_f32(mesh.vertices[i].z));
    }
    CHECK(back.triangles == mesh.triangles);
    std::remove("/tmp/mpsf_test.obj");
  }
  SUBCASE("binary PLY") {
    write_mesh(mesh, "/tmp/mpsf_test.ply", MeshFormat::PLY);
    TriMesh back = read_mesh("/tmp/mpsf_test.ply");
    REQUIRE(back.vertices.size() == mesh.vertices.size());
    for (size_t i = 0; i < mesh.vertices.size(); ++i)
      CHECK(back.vertices[i].x == doctest::Approx(mesh.vertices[i].x).epsilon(1e-7));
    CHECK(back.triangles == mesh.triangles);
    std::remove("/tmp/mpsf_test.ply");
  }
  SUBCASE("empty mesh writes and reads back as a valid file") {
    TriMesh empty;
    write_mesh(empty, "/tmp/mpsf_empty.ply", MeshFormat::PLY);
    TriMesh back = read_mesh("/tmp/mpsf_empty.ply");
    CHECK(back.vertices.empty());
    CHECK(back.triangles.empty());
    write_mesh(empty, "/tmp/mpsf_empty.obj", MeshFormat::OBJ);
    CHECK(read_mesh("/tmp/mpsf_empty.obj").vertices.empty());
    std::remove("/tmp/mpsf_empty.ply");
    std::remove("/tmp/mpsf_empty.obj");
  }
  SUBCASE("single triangle OBJ layout") {
    TriMesh tri;
    tri.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    tri.triangles = {{0, 1, 2}};
    write_mesh(tri, "/tmp/mpsf_tri.obj", MeshFormat::OBJ);
    std::ifstream in("/tmp/mpsf_tri.obj");
    std::string line;
    int v_lines = 0, f_lines = 0;
    while (std::getline(in, line)) {
      if (line.rfind("v ", 0) == 0) ++v_lines;
      if (line.rfind("f ", 0) == 0) ++f_lines;
    }
    CHECK(v_lines == 3);
    CHECK(f_lines == 1);
    std::remove("/tmp/mpsf_tri.obj");
  }
}

TEST_CASE("no degenerate triangles are emitted") {
  auto f = [](const Vec3& p) { return p.z; };  // grid values hit the iso level exactly
  SdfGrid grid = evaluate_grid(f, {-1, -1, -1}, {1, 1, 1}, 9);
  TriMesh mesh = marching_cubes(grid, 0.0);
  for (const auto& t : mesh.triangles) {
    Vec3 n = cross(mesh.vertices[t[1]] - mesh.vertices[t[0]],
                   mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    CHECK(0.5 * norm(n) > 1e-12);
  }
}
