#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "mpsf/geometry.hpp"

namespace mpsf {

// Dense SDF samples on a corner lattice over an axis-aligned box.
// values are x-fastest: index = (z * ny + y) * nx + x.
struct SdfGrid {
  int nx = 0, ny = 0, nz = 0;
  Vec3 bmin, bmax;
  std::vector<float> values;

  float at(int x, int y, int z) const {
    return values[(static_cast<size_t>(z) * ny + y) * nx + x];
  }
  Vec3 corner(int x, int y, int z) const {
    return {bmin.x + (bmax.x - bmin.x) * x / (nx - 1), bmin.y + (bmax.y - bmin.y) * y / (ny - 1),
            bmin.z + (bmax.z - bmin.z) * z / (nz - 1)};
  }
  Vec3 spacing() const {
    return {(bmax.x - bmin.x) / (nx - 1), (bmax.y - bmin.y) / (ny - 1),
            (bmax.z - bmin.z) / (nz - 1)};
  }
};

// Evaluates `sdf` on the corner lattice, z-slab by z-slab (parallel across
// slabs when threads > 1).
SdfGrid evaluate_grid(const std::function<double(const Vec3&)>& sdf, const Vec3& bmin,
                      const Vec3& bmax, int resolution, int threads = 1);

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
};

// Classic 256-case marching cubes with linear edge interpolation and shared
// vertices (edge-keyed dedup), emitted in deterministic cell-major order.
// Zero-area triangles are dropped.
TriMesh marching_cubes(const SdfGrid& grid, double iso = 0.0);

enum class MeshFormat { OBJ, PLY };

// OBJ: ASCII v/f lines, 1-based indices. PLY: binary little-endian.
// Either round-trips geometry at f32 precision.
void write_mesh(const TriMesh& mesh, const std::string& path, MeshFormat format);
TriMesh read_mesh(const std::string& path);

// Float32 quantization applied by both writers; useful for round-trip tests.
inline float to_f32(double v) { return static_cast<float>(v); }

}  // namespace mpsf
