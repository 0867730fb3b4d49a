#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mpsf/scenesim.hpp"

using namespace mpsf;

namespace {

// dense surface sampling of one primitive for the brute-force distance oracle
std::vector<Vec3> sample_primitive_surface(const Primitive& prim, int n_per_axis) {
  std::vector<Vec3> pts;
  if (prim.kind == Primitive::Kind::Sphere) {
    for (int i = 0; i < n_per_axis; ++i)
      for (int j = 0; j < n_per_axis; ++j) {
        double theta = M_PI * (i + 0.5) / n_per_axis;
        double phi = 2 * M_PI * j / n_per_axis;
        pts.push_back(prim.center + Vec3{std::sin(theta) * std::cos(phi),
                                         std::sin(theta) * std::sin(phi), std::cos(theta)} *
                                        prim.half.x);
      }
  } else {
    // box or room shell: sample all six faces
    for (int f = 0; f < 6; ++f) {
      int axis = f / 2;
      double sign = f % 2 ? 1.0 : -1.0;
      for (int i = 0; i < n_per_axis; ++i)
        for (int j = 0; j < n_per_axis; ++j) {
          double u = -1.0 + 2.0 * i / (n_per_axis - 1);
          double v = -1.0 + 2.0 * j / (n_per_axis - 1);
          Vec3 p = prim.center;
          p[axis] += sign * prim.half[axis];
          p[(axis + 1) % 3] += u * prim.half[(axis + 1) % 3];
          p[(axis + 2) % 3] += v * prim.half[(axis + 2) % 3];
          pts.push_back(p);
        }
    }
  }
  return pts;
}

}  // namespace

TEST_CASE("primitive SDFs agree with brute-force surface distance") {
  Pcg32 rng(3);
  std::vector<Primitive> prims = {
      {Primitive::Kind::Sphere, {0.1, -0.2, 0.3}, {0.4, 0, 0}},
      {Primitive::Kind::Box, {-0.2, 0.1, 0.0}, {0.3, 0.25, 0.2}},
      {Primitive::Kind::RoomShell, {0, 0, 0}, {1, 1, 1}},
  };
  for (const auto& prim : prims) {
    auto surface = sample_primitive_surface(prim, 60);
    double spacing = prim.kind == Primitive::Kind::Sphere ? 2 * M_PI * prim.half.x / 60 : 2.0 / 59;
    for (int probe = 0; probe < 1000; ++probe) {
      Vec3 p = {rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
      double brute = 1e30;
      for (const auto& s : surface) brute = std::fmin(brute, norm(p - s));
      CHECK(std::fabs(std::fabs(prim.sdf(p)) - brute) <= 2 * spacing);
    }
  }
}

TEST_CASE("sphere tracing reproduces closed-form sphere intersection") {
  AnalyticScene scene;
  scene.prims.push_back({Primitive::Kind::Sphere, {0, 0, 0}, {0.5, 0, 0}});
  Vec3 o = {0, 0, -2};
  auto hit = sphere_trace(scene, o, {0, 0, 1});
  REQUIRE(hit.hit);
  CHECK(hit.t == doctest::Approx(1.5).epsilon(1e-4));
}

TEST_CASE("ground-truth render") {
  AnalyticScene scene;
  scene.prims.push_back({Primitive::Kind::Sphere, {0, 0, 0}, {0.5, 0, 0}});
  Camera cam;
  cam.world_from_camera = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, -2, 0, 0, 0, 1};
  cam.fx = cam.fy = 40.0;
  cam.cx = cam.cy = 16.0;

  Image rgb;
  FloatMap depth;
  render_groundtruth(scene, cam, 32, 32, rgb, depth);

  SUBCASE("center pixel depth equals distance minus radius") {
    CHECK(depth.at(16, 16) == doctest::Approx(1.5).epsilon(1e-3));
  }
  SUBCASE("missing pixels have depth 0 and the background color") {
    CHECK(depth.at(0, 0) == 0.0f);
    auto c = rgb.at(0, 0);
    CHECK(c[0] == doctest::Approx(0.05));
  }
  SUBCASE("two renders are identical") {
    Image rgb2;
    FloatMap depth2;
    render_groundtruth(scene, cam, 32, 32, rgb2, depth2);
    CHECK(rgb.rgb == rgb2.rgb);
    CHECK(depth.data == depth2.data);
  }
  SUBCASE("re-tracing a valid pixel reproduces its depth") {
    for (int y = 8; y < 24; y += 4)
      for (int x = 8; x < 24; x += 4) {
        if (depth.at(x, y) == 0) continue;
        auto re = sphere_trace(scene, cam.position(), cam.ray_dir(x + 0.5, y + 0.5));
        REQUIRE(re.hit);
        CHECK(std::fabs(re.t - depth.at(x, y)) < 1e-4);
      }
  }
}

TEST_CASE("prior corruption") {
  FloatMap exact(16, 16);
  for (auto& v : exact.data) v = 2.0f;
  exact.at(3, 3) = 0.0f;  // one invalid input pixel

  SUBCASE("zero noise passes depth through with confidence 1") {
    CorruptionSpec spec;
    spec.depth_sigma = 0.0;
    spec.invalid_fraction = 0.0;
    Pcg32 rng(5);
    FloatMap depth, conf;
    corrupt_priors(exact, spec, rng, depth, conf);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        if (x == 3 && y == 3) {
          CHECK(depth.at(x, y) == 0.0f);
          CHECK(conf.at(x, y) == 0.0f);
        } else {
          CHECK(depth.at(x, y) == 2.0f);
          CHECK(conf.at(x, y) == 1.0f);
        }
      }
  }
  SUBCASE("confidence reflects the injected error and correlates negatively") {
    CorruptionSpec spec;
    spec.depth_sigma = 0.05;
    spec.invalid_fraction = 0.0;
    Pcg32 rng(7);
    FloatMap depth, conf;
    corrupt_priors(exact, spec, rng, depth, conf);
    double sum_e = 0, sum_c = 0, sum_ec = 0, sum_e2 = 0, sum_c2 = 0;
    int n = 0;
    for (size_t i = 0; i < depth.data.size(); ++i) {
      if (exact.data[i] == 0) continue;
      double err = std::fabs(depth.data[i] - exact.data[i]);
      double mu = conf.data[i];
      CHECK(mu == doctest::Approx(std::clamp(1.0 - err / (3 * 0.05), 0.0, 1.0)).epsilon(1e-5));
      sum_e += err;
      sum_c += mu;
      sum_ec += err * mu;
      sum_e2 += err * err;
      sum_c2 += mu * mu;
      ++n;
    }
    double cov = sum_ec / n - (sum_e / n) * (sum_c / n);
    double var_e = sum_e2 / n - (sum_e / n) * (sum_e / n);
    double var_c = sum_c2 / n - (sum_c / n) * (sum_c / n);
    CHECK(cov / std::sqrt(var_e * var_c) < -0.9);
  }
  SUBCASE("requested fraction of pixels is invalidated") {
    CorruptionSpec spec;
    spec.depth_sigma = 0.02;
    spec.invalid_fraction = 0.25;
    Pcg32 rng(9);
    FloatMap depth, conf;
    corrupt_priors(exact, spec, rng, depth, conf);
    int invalid = 0, valid_input = 0;
    for (size_t i = 0; i < depth.data.size(); ++i) {
      if (exact.data[i] == 0) continue;
      ++valid_input;
      if (depth.data[i] == 0) ++invalid;
    }
    double frac = double(invalid) / valid_input;
    CHECK(frac > 0.1);
    CHECK(frac < 0.4);
  }
}

TEST_CASE("keypoint sampling: on-surface, occlusion-tested, sorted visibility") {
  SceneSimConfig cfg;
  cfg.n_cameras = 8;
  cfg.image_size = 48;
  cfg.n_keypoints = 150;
  cfg.corruption.keypoint_noise = 0.0;
  cfg.seed = 21;
  GeneratedScene scene = generate_scene(cfg);

  SUBCASE("noise-free keypoints sit on the zero level set") {
    for (const auto& p : scene.keypoints.points) CHECK(std::fabs(scene.scene.sdf(p)) < 1e-4);
  }
  SUBCASE("visibility lists are sorted and duplicate-free") {
    for (const auto& vis : scene.keypoints.visibility) {
      for (size_t i = 1; i < vis.size(); ++i) CHECK(vis[i] > vis[i - 1]);
    }
  }
  SUBCASE("listed cameras really see the point (re-traced occlusion check)") {
    for (size_t i = 0; i < scene.keypoints.size(); i += 7) {
      const Vec3& p = scene.keypoints.points[i];
      for (int cam_id : scene.keypoints.visibility[i]) {
        const Camera& cam = scene.cameras[cam_id];
        Vec3 o = cam.position();
        auto hit = sphere_trace(scene.scene, o, normalized(p - o));
        REQUIRE(hit.hit);
        CHECK(std::fabs(hit.t - norm(p - o)) < 0.02);
      }
    }
  }
  SUBCASE("a point behind the box is not listed by a camera it cannot see it from") {
    // probe the box's far side against each camera: if a keypoint is on the
    // box face opposite a camera, the camera must be absent from the list
    int checked = 0;
    for (size_t i = 0; i < scene.keypoints.size(); ++i) {
      const Vec3& p = scene.keypoints.points[i];
      for (size_t cam_id = 0; cam_id < scene.cameras.size(); ++cam_id) {
        const Camera& cam = scene.cameras[cam_id];
        auto proj = cam.project(p);
        if (!proj.in_front || proj.px < 0 || proj.px >= 48 || proj.py < 0 || proj.py >= 48)
          continue;
        Vec3 o = cam.position();
        auto hit = sphere_trace(scene.scene, o, normalized(p - o));
        bool occluded = hit.hit && hit.t < norm(p - o) - 0.02;
        if (!occluded) continue;
        ++checked;
        bool listed = false;
        for (int v : scene.keypoints.visibility[i]) listed = listed || v == int(cam_id);
        CHECK_FALSE(listed);
      }
    }
    CHECK(checked > 0);  // the scene really has occlusion cases
  }
}

TEST_CASE("exposure corruption") {
  std::vector<Image> images;
  for (int k = 0; k < 4; ++k) {
    Image img(8, 8);
    for (int i = 0; i < 8 * 8 * 3; ++i) img.rgb[i] = 0.3 + 0.05 * (i % 7);
    images.push_back(img);
  }
  CorruptionSpec spec;

  SUBCASE("zero ranges leave images unchanged with identity transforms") {
    CorruptionSpec none;
    none.exposure_diag = none.exposure_offdiag = none.exposure_trans = 0.0;
    auto copies = images;
    Pcg32 rng(31);
    auto truth = corrupt_exposure(copies, none, 0, rng);
    for (int k = 0; k < 4; ++k) {
      CHECK(copies[k].rgb == images[k].rgb);
      for (int i = 0; i < 9; ++i)
        CHECK(truth[k].R[i] == (i % 4 == 0 ? 1.0 : 0.0));
    }
  }
  SUBCASE("anchor image is untouched, others move") {
    auto copies = images;
    Pcg32 rng(33);
    auto truth = corrupt_exposure(copies, spec, 1, rng);
    CHECK(copies[1].rgb == images[1].rgb);
    CHECK(truth[1].t[0] == 0.0);
    bool moved = false;
    for (int k = 0; k < 4; ++k)
      if (k != 1 && copies[k].rgb != images[k].rgb) moved = true;
    CHECK(moved);
  }
  SUBCASE("fixed seed reproduces the corruption") {
    auto c1 = images, c2 = images;
    Pcg32 r1(35), r2(35);
    auto t1 = corrupt_exposure(c1, spec, 0, r1);
    auto t2 = corrupt_exposure(c2, spec, 0, r2);
    for (int k = 0; k < 4; ++k) {
      CHECK(c1[k].rgb == c2[k].rgb);
      CHECK(t1[k].R == t2[k].R);
    }
  }
}

TEST_CASE("generated scene is consistent and loadable after writing") {
  SceneSimConfig cfg;
  cfg.n_cameras = 6;
  cfg.image_size = 40;
  cfg.n_keypoints = 80;
  cfg.gt_mesh_resolution = 48;
  cfg.seed = 41;
  GeneratedScene scene = generate_scene(cfg);

  CHECK(scene.images.size() == 6);
  CHECK(scene.maps.depth.size() == 6);
  CHECK(!scene.gt_mesh.vertices.empty());

  std::string dir = "/tmp/mpsf_scene_test";
  std::filesystem::remove_all(dir);
  write_scene(scene, dir);
  SceneData data = load_scene(dir);
  CHECK(data.cameras.size() == 6);
  CHECK(data.images.size() == 6);
  CHECK(data.width == 40);
  CHECK(data.keypoints.size() == scene.keypoints.size());
  CHECK(data.exposure_gt.size() == scene.exposure_gt.size());
  CHECK(data.seed == 41);
  std::filesystem::remove_all(dir);
}
