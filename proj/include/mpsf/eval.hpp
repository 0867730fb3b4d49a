#pragma once

#include <string>
#include <vector>

#include "mpsf/geometry.hpp"
#include "mpsf/mesh.hpp"
#include "mpsf/rng.hpp"

namespace mpsf {

// Point set entering the metrics, tagged with how it was obtained.
struct PointSample {
  enum class Provenance { MeshVertices, SurfaceUniform };
  std::vector<Vec3> points;
  Provenance provenance = Provenance::MeshVertices;
};

PointSample mesh_vertices(const TriMesh& mesh);
// Area-weighted uniform sampling of the surface.
PointSample sample_surface(const TriMesh& mesh, size_t n_points, Pcg32& rng);

// Exact nearest-neighbor queries through a median-split kd-tree.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);
  double nearest_distance(const Vec3& query) const;
  size_t size() const { return points_.size(); }

 private:
  struct Node {
    int axis = -1;       // -1 marks a leaf
    double split = 0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf point range
  };
  int build(int begin, int end);
  void search(int node, const Vec3& q, double& best_sq) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

double nearest_neighbor(const Vec3& query, const KdTree& target);

struct FscoreResult {
  double precision = 0, recall = 0, fscore = 0;  // all x100
};

// Precision/recall at strict threshold distance T, F reported x100.
// F is defined as 0 when p + r = 0.
FscoreResult fscore(const PointSample& pred, const PointSample& gt, double threshold = 0.05);

struct ChamferResult {
  double accuracy = 0, completeness = 0, chamfer = 0;
};

// accuracy = mean pred->gt nearest distance, completeness = gt->pred,
// chamfer = (a + c) / 2.
ChamferResult chamfer_l1(const PointSample& pred, const PointSample& gt);

}  // namespace mpsf
