#include <doctest.h>

#include <cmath>
#include <set>

#include "mpsf/regularize.hpp"
#include "mpsf/render.hpp"

using namespace mpsf;

TEST_CASE("srgb_to_lab reference points") {
  SUBCASE("white maps to L=100 on the neutral axis") {
    auto lab = srgb_to_lab({1, 1, 1});
    CHECK(lab[0] == doctest::Approx(100.0).epsilon(1e-6));
    CHECK(std::fabs(lab[1]) < 0.01);
    CHECK(std::fabs(lab[2]) < 0.01);
  }
  SUBCASE("black maps to the origin") {
    auto lab = srgb_to_lab({0, 0, 0});
    CHECK(std::fabs(lab[0]) < 1e-9);
    CHECK(std::fabs(lab[1]) < 1e-9);
    CHECK(std::fabs(lab[2]) < 1e-9);
  }
  SUBCASE("mid gray stays on the neutral axis") {
    auto lab = srgb_to_lab({0.5, 0.5, 0.5});
    CHECK(std::fabs(lab[1]) < 0.01);
    CHECK(std::fabs(lab[2]) < 0.01);
    CHECK(lab[0] > 0);
    CHECK(lab[0] < 100);
  }
  SUBCASE("out-of-range inputs are clamped first") {
    auto hi = srgb_to_lab({1.4, 1.4, 1.4});
    auto white = srgb_to_lab({1, 1, 1});
    CHECK(hi[0] == doctest::Approx(white[0]));
  }
}

TEST_CASE("bilateral weight values") {
  BilateralParams params;  // sigma_c = 3, sigma_d = 0.03
  PatchPixel a{{10, 0, 0}, {0, 0, 0}, true};
  SUBCASE("identical pixels have weight 1") {
    CHECK(bilateral_weight(a, a, params) == doctest::Approx(1.0));
  }
  SUBCASE("one color sigma gives exp(-1/2)") {
    PatchPixel b{{13, 0, 0}, {0, 0, 0}, true};
    CHECK(bilateral_weight(a, b, params) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  }
  SUBCASE("three spatial sigmas give exp(-4.5)") {
    PatchPixel b{{10, 0, 0}, {0.09, 0, 0}, true};
    CHECK(bilateral_weight(a, b, params) == doctest::Approx(std::exp(-4.5)).epsilon(1e-12));
  }
  SUBCASE("invalid pixels kill the weight") {
    PatchPixel b{{10, 0, 0}, {0, 0, 0}, false};
    CHECK(bilateral_weight(a, b, params) == 0.0);
    CHECK(bilateral_weight(b, a, params) == 0.0);
  }
  SUBCASE("symmetric in its arguments") {
    PatchPixel b{{12.5, 1.0, -2.0}, {0.01, -0.02, 0.005}, true};
    CHECK(bilateral_weight(a, b, params) == bilateral_weight(b, a, params));
  }
  SUBCASE("edge preservation: >= 5 sigma_c color distance caps the weight at exp(-12.5)") {
    PatchPixel b{{10 + 5 * params.sigma_c, 0, 0}, {0, 0, 0}, true};  // same position
    CHECK(bilateral_weight(a, b, params) <= std::exp(-12.5) + 1e-18);
  }
}

TEST_CASE("patch generation") {
  SUBCASE("k=3, delta=2 offsets span {-2,0,2}^2") {
    Pcg32 rng(3);
    auto patches = patch_rays(64, 64, 1, 3, 2, rng);
    REQUIRE(patches.size() == 1);
    const auto& p = patches[0];
    REQUIRE(p.pixels.size() == 9);
    auto [cx, cy] = p.pixels[p.center_index];
    std::set<std::pair<int, int>> offsets;
    for (auto [x, y] : p.pixels) offsets.insert({x - cx, y - cy});
    for (int dx : {-2, 0, 2})
      for (int dy : {-2, 0, 2}) CHECK(offsets.count({dx, dy}) == 1);
  }
  SUBCASE("ray count is n_patches * k^2") {
    Pcg32 rng(5);
    auto patches = patch_rays(64, 64, 10, 3, 2, rng);
    size_t total = 0;
    for (const auto& p : patches) total += p.pixels.size();
    CHECK(total == 90);
  }
  SUBCASE("fixed seed reproduces identical centers") {
    Pcg32 a(7), b(7);
    auto pa = patch_rays(64, 64, 5, 3, 2, a);
    auto pb = patch_rays(64, 64, 5, 3, 2, b);
    for (size_t i = 0; i < pa.size(); ++i)
      CHECK(pa[i].pixels[pa[i].center_index] == pb[i].pixels[pb[i].center_index]);
  }
  SUBCASE("patches stay inside the image") {
    Pcg32 rng(9);
    auto patches = patch_rays(10, 10, 200, 3, 2, rng);
    for (const auto& p : patches)
      for (auto [x, y] : p.pixels) {
        CHECK(x >= 0);
        CHECK(y >= 0);
        CHECK(x < 10);
        CHECK(y < 10);
      }
  }
  SUBCASE("image smaller than the dilated patch throws") {
    Pcg32 rng(11);
    CHECK_THROWS_AS((void)patch_rays(4, 4, 1, 3, 2, rng), std::invalid_argument);
    CHECK_THROWS_AS((void)patch_rays(64, 64, 1, 4, 2, rng), std::invalid_argument);
  }
}

TEST_CASE("normal consistency inner sum") {
  SUBCASE("identical normals give exactly zero") {
    std::vector<std::array<double, 3>> normals(9, {0, 0, 1});
    std::vector<double> wb(9, 0.8);
    CHECK(normal_consistency_patch<double>(normals, 4, wb) == 0.0);
  }
  SUBCASE("zero bilateral weights annihilate the sum") {
    std::vector<std::array<double, 3>> normals = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    std::vector<double> wb(3, 0.0);
    CHECK(normal_consistency_patch<double>(normals, 1, wb) == 0.0);
  }
  SUBCASE("hand-computed two-neighbor case") {
    std::vector<std::array<double, 3>> normals = {{1, 0, 0}, {0, 0, 1}, {0, 0, 1}};
    std::vector<double> wb = {0.5, 1.0, 0.25};
    // center = 2: neighbor 0 differs by sqrt(2), neighbor 1 identical
    double expected = std::sqrt(2.0) * 0.5;
    CHECK(normal_consistency_patch<double>(normals, 2, wb) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("invariant under a global rotation of all normals") {
    std::vector<std::array<double, 3>> normals = {
        {1, 0, 0}, {0.8, 0.6, 0}, {0.6, -0.8, 0}, {0, 0, 1}};
    std::vector<double> wb = {0.3, 0.9, 0.4, 0.7};
    double before = normal_consistency_patch<double>(normals, 0, wb);
    // rotate by 90 degrees around z
    std::vector<std::array<double, 3>> rotated;
    for (auto& n : normals) rotated.push_back({-n[1], n[0], n[2]});
    double after = normal_consistency_patch<double>(rotated, 0, wb);
    CHECK(after == doctest::Approx(before).epsilon(1e-12));
  }
}

TEST_CASE("exact plane field renders consistent normals, loss below 1e-3") {
  // solid half-space above z=1, f = 1 - z: rays entering from below cross
  // + -> - and the weight-normalized rendered normal is (0,0,-1) everywhere,
  // so the patch loss vanishes
  std::vector<double> t = {0.5, 0.9, 1.3, 1.7};
  auto plane_ray_normal = [&](const Vec3& o, const Vec3& dir) {
    std::vector<double> f(t.size());
    for (size_t i = 0; i < t.size(); ++i) f[i] = 1.0 - (o + dir * t[i]).z;
    auto sw = section_weights<double>(f, t, 500.0);
    std::vector<std::array<double, 3>> grads(t.size() - 1, {0, 0, -1});
    auto n = render_normal<double>(sw.weight, grads);
    double mass = sw.weight_sum;
    REQUIRE(mass > 1e-4);
    return std::array<double, 3>{n[0] / mass, n[1] / mass, n[2] / mass};
  };
  std::vector<std::array<double, 3>> normals;
  std::vector<double> wb;
  for (int i = 0; i < 9; ++i) {
    Vec3 o = {0.01 * i, -0.01 * i, 0};
    Vec3 dir = normalized(Vec3{0.02 * i, 0.01, 1.0});
    normals.push_back(plane_ray_normal(o, dir));
    wb.push_back(1.0);
  }
  double loss = normal_consistency_patch<double>(normals, 4, wb) / 9.0;
  CHECK(loss <= 1e-3);
}
