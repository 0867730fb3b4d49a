#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <limits>

#include "mpsf/eval.hpp"

using namespace mpsf;

namespace {

PointSample cloud_of(std::vector<Vec3> pts) {
  PointSample s;
  s.points = std::move(pts);
  return s;
}

double brute_force_nn(const Vec3& q, const std::vector<Vec3>& pts) {
  double best = std::numeric_limits<double>::max();
  for (const auto& p : pts) {
    Vec3 d = p - q;
    best = std::fmin(best, dot(d, d));
  }
  return std::sqrt(best);
}

std::vector<Vec3> random_cloud(Pcg32& rng, size_t n, double scale = 1.0) {
  std::vector<Vec3> pts(n);
  for (auto& p : pts)
    p = {scale * rng.uniform(-1, 1), scale * rng.uniform(-1, 1), scale * rng.uniform(-1, 1)};
  return pts;
}

}  // namespace

TEST_CASE("kd-tree nearest neighbor is exact against brute force") {
  Pcg32 rng(3);
  auto pts = random_cloud(rng, 2000);
  KdTree tree(pts);
  SUBCASE("10^4 random queries match brute force to 1e-12") {
    for (int i = 0; i < 10000; ++i) {
      Vec3 q = {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
      double kd = nearest_neighbor(q, tree);
      double bf = brute_force_nn(q, pts);
      CHECK(std::fabs(kd - bf) <= 1e-12);
    }
  }
  SUBCASE("query inside the set returns 0") { CHECK(nearest_neighbor(pts[7], tree) == 0.0); }
  SUBCASE("single-point target returns the plain distance") {
    KdTree single(std::vector<Vec3>{{1, 2, 3}});
    CHECK(single.nearest_distance({1, 2, 7}) == doctest::Approx(4.0));
  }
  SUBCASE("empty target is rejected") {
    CHECK_THROWS_AS(KdTree(std::vector<Vec3>{}), std::invalid_argument);
  }
}

TEST_CASE("fscore hand-computable examples") {
  SUBCASE("identical clouds score (100, 100, 100)") {
    Pcg32 rng(5);
    auto pts = random_cloud(rng, 100);
    auto f = fscore(cloud_of(pts), cloud_of(pts), 0.05);
    CHECK(f.precision == 100.0);
    CHECK(f.recall == 100.0);
    CHECK(f.fscore == 100.0);
  }
  SUBCASE("all points beyond T score (0, 0, 0) under the 0/0 convention") {
    auto f = fscore(cloud_of({{0, 0, 0}}), cloud_of({{0.1, 0, 0}}), 0.05);
    CHECK(f.precision == 0.0);
    CHECK(f.recall == 0.0);
    CHECK(f.fscore == 0.0);
  }
  SUBCASE("points within the strict threshold count") {
    auto f = fscore(cloud_of({{0, 0, 0}, {0.04, 0, 0}}), cloud_of({{0, 0, 0}}), 0.05);
    CHECK(f.precision == 100.0);
    CHECK(f.recall == 100.0);
    CHECK(f.fscore == 100.0);
  }
  SUBCASE("distance exactly T does not count (strict inequality)") {
    auto f = fscore(cloud_of({{0.05, 0, 0}}), cloud_of({{0, 0, 0}}), 0.05);
    CHECK(f.precision == 0.0);
  }
  SUBCASE("empty inputs are errors") {
    CHECK_THROWS_AS((void)fscore(cloud_of({}), cloud_of({{0, 0, 0}}), 0.05),
                    std::invalid_argument);
  }
}

TEST_CASE("chamfer hand-computable examples") {
  SUBCASE("identical clouds give zeros") {
    Pcg32 rng(7);
    auto pts = random_cloud(rng, 64);
    auto c = chamfer_l1(cloud_of(pts), cloud_of(pts));
    CHECK(c.accuracy == 0.0);
    CHECK(c.completeness == 0.0);
    CHECK(c.chamfer == 0.0);
  }
  SUBCASE("single pair at distance 0.1") {
    auto c = chamfer_l1(cloud_of({{0, 0, 0}}), cloud_of({{0.1, 0, 0}}));
    CHECK(c.accuracy == doctest::Approx(0.1));
    CHECK(c.completeness == doctest::Approx(0.1));
    CHECK(c.chamfer == doctest::Approx(0.1));
  }
  SUBCASE("asymmetric pair: a=0.1, c=0.2, chamfer=0.15") {
    auto c = chamfer_l1(cloud_of({{0, 0, 0}}), cloud_of({{0.1, 0, 0}, {0.3, 0, 0}}));
    CHECK(c.accuracy == doctest::Approx(0.1));
    CHECK(c.completeness == doctest::Approx(0.2));
    CHECK(c.chamfer == doctest::Approx(0.15));
  }
}

TEST_CASE("metric properties") {
  Pcg32 rng(11);
  auto a = cloud_of(random_cloud(rng, 300));
  auto b = cloud_of(random_cloud(rng, 250));

  SUBCASE("chamfer swaps accuracy and completeness under argument swap") {
    auto ab = chamfer_l1(a, b);
    auto ba = chamfer_l1(b, a);
    CHECK(ab.accuracy == doctest::Approx(ba.completeness).epsilon(1e-14));
    CHECK(ab.completeness == doctest::Approx(ba.accuracy).epsilon(1e-14));
    CHECK(ab.chamfer == doctest::Approx(ba.chamfer).epsilon(1e-14));
  }
  SUBCASE("fscore is monotone non-increasing as T decreases") {
    double prev = -1;
    for (double t : {0.5, 0.3, 0.2, 0.1, 0.05, 0.01}) {
      double f = fscore(a, b, t).fscore;
      if (prev >= 0) CHECK(f <= prev + 1e-12);
      prev = f;
    }
  }
  SUBCASE("uniform scaling scales distances exactly and preserves fscore at sT") {
    double s = 2.75;
    PointSample as, bs;
    for (auto& p : a.points) as.points.push_back(p * s);
    for (auto& p : b.points) bs.points.push_back(p * s);
    auto c1 = chamfer_l1(a, b);
    auto c2 = chamfer_l1(as, bs);
    CHECK(c2.chamfer == doctest::Approx(s * c1.chamfer).epsilon(1e-12));
    CHECK(c2.accuracy == doctest::Approx(s * c1.accuracy).epsilon(1e-12));
    auto f1 = fscore(a, b, 0.1);
    auto f2 = fscore(as, bs, 0.1 * s);
    CHECK(f1.fscore == doctest::Approx(f2.fscore).epsilon(1e-12));
  }
}

TEST_CASE("fscore and chamfer match brute-force implementations on random pairs") {
  Pcg32 rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    auto pa = random_cloud(rng, 500);
    auto pb = random_cloud(rng, 500);
    double T = 0.25;
    size_t hits_p = 0, hits_r = 0;
    double acc = 0, comp = 0;
    for (const auto& q : pa) {
      double d = brute_force_nn(q, pb);
      acc += d;
      if (d < T) ++hits_p;
    }
    for (const auto& q : pb) {
      double d = brute_force_nn(q, pa);
      comp += d;
      if (d < T) ++hits_r;
    }
    double p = 100.0 * hits_p / pa.size(), r = 100.0 * hits_r / pb.size();
    double f_expected = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;

    auto f = fscore(cloud_of(pa), cloud_of(pb), T);
    auto c = chamfer_l1(cloud_of(pa), cloud_of(pb));
    CHECK(f.precision == doctest::Approx(p).epsilon(1e-12));
    CHECK(f.recall == doctest::Approx(r).epsilon(1e-12));
    CHECK(f.fscore == doctest::Approx(f_expected).epsilon(1e-12));
    CHECK(c.accuracy == doctest::Approx(acc / pa.size()).epsilon(1e-12));
    CHECK(c.completeness == doctest::Approx(comp / pb.size()).epsilon(1e-12));
  }
}

TEST_CASE("surface sampling draws area-weighted points on the mesh") {
  TriMesh mesh;
  mesh.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 2, 0}, {5, 5, 5}, {5.1, 5, 5}, {5, 5.1, 5}};
  mesh.triangles = {{0, 1, 2}, {3, 4, 5}};  // areas 2.0 and 0.005
  Pcg32 rng(17);
  auto s = sample_surface(mesh, 2000, rng);
  REQUIRE(s.points.size() == 2000);
  size_t on_big = 0;
  for (const auto& p : s.points)
    if (p.x < 3) ++on_big;
  CHECK(on_big > 1950);  // big triangle carries ~99.75% of the area
  CHECK(s.provenance == PointSample::Provenance::SurfaceUniform);
}
