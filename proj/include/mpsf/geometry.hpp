#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>

namespace mpsf {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) {
  double n = norm(v);
  return n > 0 ? v / n : Vec3{0, 0, 0};
}
inline Vec3 cwise_min(const Vec3& a, const Vec3& b) {
  return {std::fmin(a.x, b.x), std::fmin(a.y, b.y), std::fmin(a.z, b.z)};
}
inline Vec3 cwise_max(const Vec3& a, const Vec3& b) {
  return {std::fmax(a.x, b.x), std::fmax(a.y, b.y), std::fmax(a.z, b.z)};
}

// Camera ray with ROI bounds along it. Direction is unit length; the bounds
// come from intersecting the ray with the scene bounding sphere.
struct Ray {
  Vec3 origin;
  Vec3 dir;          // unit norm (within 1e-6)
  double t_near = 0.0;
  double t_far = 0.0;

  Vec3 at(double t) const { return origin + dir * t; }
};

// Intersection of a ray (unit direction) with the sphere centered at the
// origin. Returns [t0, t1] with t0 <= t1, or nothing if the ray misses.
inline std::optional<std::array<double, 2>> ray_sphere_span(const Vec3& o, const Vec3& v,
                                                            double radius) {
  double b = dot(o, v);
  double c = dot(o, o) - radius * radius;
  double disc = b * b - c;
  if (disc < 0) return std::nullopt;
  double s = std::sqrt(disc);
  return std::array<double, 2>{-b - s, -b + s};
}

// Builds the ray through a scene bounded by a sphere of the given radius.
// t_near is clamped away from zero so samples never sit on the pinhole.
inline std::optional<Ray> make_bounded_ray(const Vec3& origin, const Vec3& dir, double scene_radius,
                                           double min_near = 1e-3) {
  auto span = ray_sphere_span(origin, dir, scene_radius);
  if (!span) return std::nullopt;
  double t0 = std::max((*span)[0], min_near);
  double t1 = (*span)[1];
  if (t1 - t0 < 1e-6) return std::nullopt;
  return Ray{origin, dir, t0, t1};
}

}  // namespace mpsf
