#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mpsf/geometry.hpp"
#include "mpsf/image.hpp"
#include "mpsf/mesh.hpp"
#include "mpsf/priors.hpp"
#include "mpsf/rng.hpp"

namespace mpsf {

// Analytic SDF primitives composed by union (min). RoomShell is the
// complement of a box: solid everywhere outside the box interior, so its
// inner faces are the walls, floor and ceiling of the room.
struct Primitive {
  enum class Kind { Sphere, Box, RoomShell };
  Kind kind = Kind::Sphere;
  Vec3 center;
  Vec3 half;  // box half extents; for spheres half.x is the radius

  double sdf(const Vec3& p) const;
};

struct AnalyticScene {
  std::vector<Primitive> prims;
  Vec3 light_dir{0.35, -0.3, -0.88};  // direction light travels (unit)
  double ambient = 0.35;
  double diffuse = 0.45;

  double sdf(const Vec3& p) const;
  // Normalized central-difference gradient (h = 1e-5); used for shading.
  Vec3 gradient(const Vec3& p) const;
  int nearest_primitive(const Vec3& p) const;
  std::array<double, 3> albedo(const Vec3& p) const;

  // 2x2x2 room shell with a sphere and a box inside; procedural checker
  // albedo everywhere except one untextured wall (+X).
  static AnalyticScene box_room();
};

struct TraceResult {
  bool hit = false;
  double t = 0;
  Vec3 point;
};

// Steps by the SDF value until |f| < eps or the ray leaves t_max.
TraceResult sphere_trace(const AnalyticScene& scene, const Vec3& origin, const Vec3& dir,
                         double t_max = 8.0, double eps = 1e-5);

// Reference render: Lambertian shading from the analytic normal, exact hit
// distance as depth (0 marks a miss).
void render_groundtruth(const AnalyticScene& scene, const Camera& camera, int width, int height,
                        Image& rgb_out, FloatMap& depth_out);

struct CorruptionSpec {
  double depth_sigma = 0.02;       // scene units
  double invalid_fraction = 0.08;  // pixels zeroed out
  double exposure_diag = 0.2;      // per-channel gain range
  double exposure_offdiag = 0.05;  // channel-mixing range
  double exposure_trans = 0.1;     // offset range
  double keypoint_noise = 0.005;   // positional sigma
};

// Noisy depth plus a confidence that statistically reflects the injected
// error: mu = clamp(1 - |err| / (3 sigma), 0, 1).
void corrupt_priors(const FloatMap& exact_depth, const CorruptionSpec& spec, Pcg32& rng,
                    FloatMap& depth_out, FloatMap& confidence_out);

// Surface points traced from random view rays, perturbed by Gaussian noise,
// with occlusion-tested visibility over all cameras.
KeypointCloud sample_keypoints(const AnalyticScene& scene, const std::vector<Camera>& cameras,
                               int width, int height, int n, double noise, Pcg32& rng);

struct AffineColor {
  std::array<double, 9> R{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 3> t{0, 0, 0};
};

// Random affine corruption per non-anchor image (clamped to [0,1]); returns
// the true transforms for gauge-recovery evaluation.
std::vector<AffineColor> corrupt_exposure(std::vector<Image>& images, const CorruptionSpec& spec,
                                          int anchor, Pcg32& rng);

struct SceneSimConfig {
  int n_cameras = 32;
  int image_size = 96;
  double ring_radius = 0.62;
  double z_jitter = 0.25;
  double lookat_jitter = 0.15;
  double fov_degrees = 75.0;
  int n_keypoints = 1200;
  CorruptionSpec corruption;
  uint64_t seed = 7;
  int gt_mesh_resolution = 192;
  double gt_mesh_bound = 1.12;
};

struct GeneratedScene {
  AnalyticScene scene;
  std::vector<Camera> cameras;
  std::vector<Image> images;        // after exposure corruption
  std::vector<Image> clean_images;  // before corruption
  DepthMapSet maps;
  std::vector<FloatMap> exact_depth;
  KeypointCloud keypoints;
  std::vector<AffineColor> exposure_gt;
  TriMesh gt_mesh;
  int corruption_anchor = 0;
  int width = 0, height = 0;
  uint64_t seed = 0;
};

GeneratedScene generate_scene(const SceneSimConfig& cfg);

// Writes the full scene directory (images/, depth/, conf/, cameras.txt,
// keypoints.txt, exposure_gt.txt, gt_mesh.ply, manifest.txt).
void write_scene(const GeneratedScene& scene, const std::string& dir);

// Scene directory as consumed by training.
struct SceneData {
  std::vector<Camera> cameras;
  std::vector<Image> images;
  DepthMapSet maps;
  KeypointCloud keypoints;  // as stored; filtering happens at training setup
  std::vector<AffineColor> exposure_gt;  // empty if absent
  uint64_t seed = 0;
  int width = 0, height = 0;
};

SceneData load_scene(const std::string& dir);

}  // namespace mpsf
