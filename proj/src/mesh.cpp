#include "mpsf/mesh.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "mpsf/threading.hpp"

#include "mc_tables.inc"

namespace mpsf {

SdfGrid evaluate_grid(const std::function<double(const Vec3&)>& sdf, const Vec3& bmin,
                      const Vec3& bmax, int resolution, int threads) {
  if (resolution < 2) throw std::invalid_argument("evaluate_grid: resolution must be >= 2");
  SdfGrid grid;
  grid.nx = grid.ny = grid.nz = resolution;
  grid.bmin = bmin;
  grid.bmax = bmax;
  grid.values.resize(static_cast<size_t>(resolution) * resolution * resolution);
  parallel_for(resolution, threads, [&](size_t zb, size_t ze, int) {
    for (size_t z = zb; z < ze; ++z) {
      size_t base = z * resolution * resolution;
      for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x)
          grid.values[base + static_cast<size_t>(y) * resolution + x] =
              static_cast<float>(sdf(grid.corner(x, y, static_cast<int>(z))));
    }
  });
  return grid;
}

namespace {

// Bourke cell layout: corner k offset and the (origin corner, axis) pair
// identifying each of the 12 edges globally for vertex sharing.
const int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                           {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
const int kEdgeCorner[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
const int kEdgeAxis[12] = {0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2};

uint64_t edge_key(const SdfGrid& g, int cx, int cy, int cz, int edge) {
  const int* c = kCorner[kEdgeCorner[edge][0]];
  int ox = cx + c[0], oy = cy + c[1], oz = cz + c[2];
  // for y-axis edges the canonical origin is the lower-y endpoint
  int axis = kEdgeAxis[edge];
  if (axis == 1 && kCorner[kEdgeCorner[edge][1]][1] < kCorner[kEdgeCorner[edge][0]][1])
    oy = cy + kCorner[kEdgeCorner[edge][1]][1];
  if (axis == 0 && kCorner[kEdgeCorner[edge][1]][0] < kCorner[kEdgeCorner[edge][0]][0])
    ox = cx + kCorner[kEdgeCorner[edge][1]][0];
  uint64_t idx = (static_cast<uint64_t>(oz) * g.ny + oy) * g.nx + ox;
  return idx * 3 + axis;
}

}  // namespace

TriMesh marching_cubes(const SdfGrid& grid, double iso) {
  TriMesh mesh;
  std::unordered_map<uint64_t, int> edge_vertices;
  edge_vertices.reserve(1 << 16);

  double vals[8];
  Vec3 corners[8];
  int edge_vertex_idx[12];

  for (int cz = 0; cz + 1 < grid.nz; ++cz) {
    for (int cy = 0; cy + 1 < grid.ny; ++cy) {
      for (int cx = 0; cx + 1 < grid.nx; ++cx) {
        int cube_index = 0;
        for (int k = 0; k < 8; ++k) {
          int x = cx + kCorner[k][0], y = cy + kCorner[k][1], z = cz + kCorner[k][2];
          vals[k] = grid.at(x, y, z);
          corners[k] = grid.corner(x, y, z);
          if (vals[k] < iso) cube_index |= 1 << k;
        }
        int edges = kEdgeTable[cube_index];
        if (edges == 0) continue;

        for (int e = 0; e < 12; ++e) {
          if (!(edges & (1 << e))) continue;
          uint64_t key = edge_key(grid, cx, cy, cz, e);
          auto it = edge_vertices.find(key);
          if (it != edge_vertices.end()) {
            edge_vertex_idx[e] = it->second;
            continue;
          }
          int a = kEdgeCorner[e][0], b = kEdgeCorner[e][1];
          double denom = vals[b] - vals[a];
          double t = std::fabs(denom) < 1e-300 ? 0.5 : (iso - vals[a]) / denom;
          t = std::fmin(1.0, std::fmax(0.0, t));
          Vec3 v = corners[a] + (corners[b] - corners[a]) * t;
          int idx = static_cast<int>(mesh.vertices.size());
          mesh.vertices.push_back(v);
          edge_vertices.emplace(key, idx);
          edge_vertex_idx[e] = idx;
        }

        const int* tri = kTriTable[cube_index];
        for (int i = 0; tri[i] != -1; i += 3) {
          int i0 = edge_vertex_idx[tri[i]];
          int i1 = edge_vertex_idx[tri[i + 1]];
          int i2 = edge_vertex_idx[tri[i + 2]];
          if (i0 == i1 || i1 == i2 || i0 == i2) continue;
          Vec3 n = cross(mesh.vertices[i1] - mesh.vertices[i0], mesh.vertices[i2] - mesh.vertices[i0]);
          if (0.5 * norm(n) < 1e-12) continue;
          mesh.triangles.push_back({i0, i1, i2});
        }
      }
    }
  }
  return mesh;
}

static_assert(std::endian::native == std::endian::little, "PLY writer assumes little-endian host");

namespace {

void write_obj(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open mesh for writing: " + path);
  out.precision(9);
  for (const auto& v : mesh.vertices)
    out << "v " << to_f32(v.x) << " " << to_f32(v.y) << " " << to_f32(v.z) << "\n";
  for (const auto& t : mesh.triangles)
    out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  if (!out) throw std::runtime_error("mesh write failed: " + path);
}

void write_ply(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open mesh for writing: " + path);
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << mesh.vertices.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "element face " << mesh.triangles.size() << "\n";
  out << "property list uchar int vertex_indices\nend_header\n";
  for (const auto& v : mesh.vertices) {
    float f[3] = {to_f32(v.x), to_f32(v.y), to_f32(v.z)};
    out.write(reinterpret_cast<const char*>(f), sizeof(f));
  }
  for (const auto& t : mesh.triangles) {
    uint8_t n = 3;
    out.write(reinterpret_cast<const char*>(&n), 1);
    int32_t idx[3] = {t[0], t[1], t[2]};
    out.write(reinterpret_cast<const char*>(idx), sizeof(idx));
  }
  if (!out) throw std::runtime_error("mesh write failed: " + path);
}

TriMesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mesh: " + path);
  TriMesh mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("v ", 0) == 0) {
      std::istringstream ss(line.substr(2));
      Vec3 v;
      if (!(ss >> v.x >> v.y >> v.z))
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed vertex");
      mesh.vertices.push_back(v);
    } else if (line.rfind("f ", 0) == 0) {
      std::istringstream ss(line.substr(2));
      std::vector<int> idx;
      std::string token;
      while (ss >> token) {
        // tolerate v/vt/vn references; only the vertex index matters here
        idx.push_back(std::stoi(token.substr(0, token.find('/'))) - 1);
      }
      if (idx.size() < 3)
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": face needs 3 indices");
      for (size_t k = 2; k < idx.size(); ++k)
        mesh.triangles.push_back({idx[0], idx[static_cast<int>(k) - 1], idx[static_cast<int>(k)]});
    }
  }
  return mesh;
}

TriMesh read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open mesh: " + path);
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw std::runtime_error(path + ": not a PLY file");
  size_t n_vertices = 0, n_faces = 0;
  bool binary_le = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "format") {
      std::string fmt;
      ss >> fmt;
      binary_le = (fmt == "binary_little_endian");
    } else if (word == "element") {
      std::string what;
      size_t count;
      ss >> what >> count;
      if (what == "vertex") n_vertices = count;
      if (what == "face") n_faces = count;
    } else if (word == "end_header") {
      break;
    }
  }
  if (!binary_le) throw std::runtime_error(path + ": only binary little-endian PLY is supported");
  TriMesh mesh;
  mesh.vertices.resize(n_vertices);
  for (auto& v : mesh.vertices) {
    float f[3];
    in.read(reinterpret_cast<char*>(f), sizeof(f));
    v = {f[0], f[1], f[2]};
  }
  mesh.triangles.reserve(n_faces);
  for (size_t i = 0; i < n_faces; ++i) {
    uint8_t n = 0;
    in.read(reinterpret_cast<char*>(&n), 1);
    std::vector<int32_t> idx(n);
    in.read(reinterpret_cast<char*>(idx.data()), n * sizeof(int32_t));
    for (size_t k = 2; k < idx.size(); ++k)
      mesh.triangles.push_back({idx[0], idx[k - 1], idx[k]});
  }
  if (!in) throw std::runtime_error(path + ": truncated PLY data");
  return mesh;
}

}  // namespace

void write_mesh(const TriMesh& mesh, const std::string& path, MeshFormat format) {
  if (format == MeshFormat::OBJ)
    write_obj(mesh, path);
  else
    write_ply(mesh, path);
}

TriMesh read_mesh(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".obj") return read_obj(path);
  return read_ply(path);
}

}  // namespace mpsf
