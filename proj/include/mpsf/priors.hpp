#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mpsf/geometry.hpp"
#include "mpsf/rng.hpp"
#include "mpsf/sample.hpp"

namespace mpsf {

// Pinhole camera with a world-from-camera rigid transform (row-major 4x4).
// Continuous pixel coordinates put integer pixel (x, y)'s center at
// (x + 0.5, y + 0.5).
struct Camera {
  std::array<double, 16> world_from_camera{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  double fx = 1, fy = 1, cx = 0, cy = 0;

  Vec3 position() const {
    return {world_from_camera[3], world_from_camera[7], world_from_camera[11]};
  }

  Vec3 rotate_to_world(const Vec3& v) const {
    const auto& m = world_from_camera;
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[4] * v.x + m[5] * v.y + m[6] * v.z,
            m[8] * v.x + m[9] * v.y + m[10] * v.z};
  }

  Vec3 rotate_to_camera(const Vec3& v) const {
    const auto& m = world_from_camera;
    return {m[0] * v.x + m[4] * v.y + m[8] * v.z, m[1] * v.x + m[5] * v.y + m[9] * v.z,
            m[2] * v.x + m[6] * v.y + m[10] * v.z};
  }

  // Unit world-space direction through continuous pixel coordinates.
  Vec3 ray_dir(double px, double py) const {
    Vec3 cam = {(px - cx) / fx, (py - cy) / fy, 1.0};
    return normalized(rotate_to_world(cam));
  }

  struct Projection {
    double px = 0, py = 0;
    double depth = 0;  // distance along the unit pixel ray, = |P - origin|
    bool in_front = false;
  };

  Projection project(const Vec3& p) const {
    Vec3 cam = rotate_to_camera(p - position());
    Projection out;
    if (cam.z <= 1e-9) return out;
    out.px = cx + fx * cam.x / cam.z;
    out.py = cy + fy * cam.y / cam.z;
    out.depth = norm(p - position());
    out.in_front = true;
    return out;
  }
};

// Sparse triangulated points with per-camera visibility and a projection
// cache (pixel coordinates and depth along each observing camera's ray).
struct KeypointCloud {
  struct Observation {
    int camera = -1;
    double px = 0, py = 0;
    double depth = 0;
  };

  std::vector<Vec3> points;
  std::vector<std::vector<int>> visibility;            // sorted, unique camera ids
  std::vector<std::vector<Observation>> observations;  // projection cache, parallel to points

  size_t size() const { return points.size(); }

  // Fills the projection cache; points projecting outside [0,W)x[0,H) or
  // behind a listed camera are dropped from that camera's observation list.
  void build_projection_cache(const std::vector<Camera>& cameras, int width, int height);
};

KeypointCloud filter_keypoints(const KeypointCloud& cloud, int min_cameras);

struct KeypointRay {
  Ray ray;
  double target_depth = 0;
  int point_index = -1;
};

// Rays through the cached keypoint pixels of one camera, at most max_rays of
// them (uniform subsample without replacement).
std::vector<KeypointRay> keypoint_ray_batch(const KeypointCloud& cloud,
                                            const std::vector<Camera>& cameras, int camera_id,
                                            int max_rays, double scene_radius, Pcg32& rng);

// Scalar map with MVS conventions: depth 0 marks an invalid pixel.
struct FloatMap {
  int width = 0, height = 0;
  std::vector<float> data;

  FloatMap() = default;
  FloatMap(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h, 0.f) {}
  float at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
  float& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
};

struct DepthMapSet {
  std::vector<FloatMap> depth;
  std::vector<FloatMap> confidence;

  // Validates the ingestion invariants: matching dimensions, depth >= 0,
  // confidence within [0,1]. Throws on violation.
  void validate() const;
};

DepthPrior lookup_prior(const DepthMapSet& set, int image_id, int x, int y);

// --- on-disk formats ---

// Binary scalar map: magic "MPDM", u32 width, u32 height, then H*W
// little-endian f32 row-major, top row first.
void write_float_map(const FloatMap& map, const std::string& path);
FloatMap read_float_map(const std::string& path);

// Text keypoints, one per line: x y z n_views id_1 ... id_n
void write_keypoints(const KeypointCloud& cloud, const std::string& path);
KeypointCloud read_keypoints(const std::string& path);

// Text cameras, one per line: 16 floats (world-from-camera, row-major) then
// fx fy cx cy.
void write_cameras(const std::vector<Camera>& cams, const std::string& path);
std::vector<Camera> read_cameras(const std::string& path);

}  // namespace mpsf
