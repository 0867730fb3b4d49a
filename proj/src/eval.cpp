#include "mpsf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mpsf {

PointSample mesh_vertices(const TriMesh& mesh) {
  PointSample s;
  s.points = mesh.vertices;
  s.provenance = PointSample::Provenance::MeshVertices;
  return s;
}

PointSample sample_surface(const TriMesh& mesh, size_t n_points, Pcg32& rng) {
  PointSample s;
  s.provenance = PointSample::Provenance::SurfaceUniform;
  if (mesh.triangles.empty()) return s;
  std::vector<double> cum_area(mesh.triangles.size());
  double total = 0;
  for (size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    total += 0.5 * norm(cross(mesh.vertices[t[1]] - mesh.vertices[t[0]],
                              mesh.vertices[t[2]] - mesh.vertices[t[0]]));
    cum_area[i] = total;
  }
  if (total <= 0) return s;
  s.points.reserve(n_points);
  for (size_t i = 0; i < n_points; ++i) {
    double u = rng.uniform() * total;
    size_t tri = std::lower_bound(cum_area.begin(), cum_area.end(), u) - cum_area.begin();
    tri = std::min(tri, mesh.triangles.size() - 1);
    const auto& t = mesh.triangles[tri];
    double a = rng.uniform(), b = rng.uniform();
    if (a + b > 1) {
      a = 1 - a;
      b = 1 - b;
    }
    s.points.push_back(mesh.vertices[t[0]] + (mesh.vertices[t[1]] - mesh.vertices[t[0]]) * a +
                       (mesh.vertices[t[2]] - mesh.vertices[t[0]]) * b);
  }
  return s;
}

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.empty()) throw std::invalid_argument("KdTree: empty point set");
  nodes_.reserve(2 * points_.size() / 8 + 8);
  root_ = build(0, static_cast<int>(points_.size()));
}

int KdTree::build(int begin, int end) {
  constexpr int kLeafSize = 8;
  Node node;
  if (end - begin <= kLeafSize) {
    node.begin = begin;
    node.end = end;
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }
  Vec3 lo = points_[begin], hi = points_[begin];
  for (int i = begin + 1; i < end; ++i) {
    lo = cwise_min(lo, points_[i]);
    hi = cwise_max(hi, points_[i]);
  }
  Vec3 extent = hi - lo;
  int axis = 0;
  if (extent.y > extent.x) axis = 1;
  if (extent.z > extent[axis]) axis = 2;
  int mid = (begin + end) / 2;
  std::nth_element(points_.begin() + begin, points_.begin() + mid, points_.begin() + end,
                   [axis](const Vec3& a, const Vec3& b) { return a[axis] < b[axis]; });
  node.axis = axis;
  node.split = points_[mid][axis];
  int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  int left = build(begin, mid);
  int right = build(mid, end);
  nodes_[self].left = left;
  nodes_[self].right = right;
  return self;
}

void KdTree::search(int node_idx, const Vec3& q, double& best_sq) const {
  const Node& node = nodes_[node_idx];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      Vec3 d = points_[i] - q;
      double sq = dot(d, d);
      if (sq < best_sq) best_sq = sq;
    }
    return;
  }
  double delta = q[node.axis] - node.split;
  int near = delta < 0 ? node.left : node.right;
  int far = delta < 0 ? node.right : node.left;
  search(near, q, best_sq);
  if (delta * delta < best_sq) search(far, q, best_sq);
}

double KdTree::nearest_distance(const Vec3& query) const {
  double best_sq = std::numeric_limits<double>::max();
  search(root_, query, best_sq);
  return std::sqrt(best_sq);
}

double nearest_neighbor(const Vec3& query, const KdTree& target) {
  return target.nearest_distance(query);
}

FscoreResult fscore(const PointSample& pred, const PointSample& gt, double threshold) {
  if (pred.points.empty() || gt.points.empty())
    throw std::invalid_argument("fscore: point samples must be non-empty");
  KdTree gt_tree(gt.points);
  KdTree pred_tree(pred.points);
  size_t hits = 0;
  for (const auto& p : pred.points)
    if (gt_tree.nearest_distance(p) < threshold) ++hits;
  double precision = 100.0 * hits / pred.points.size();
  hits = 0;
  for (const auto& p : gt.points)
    if (pred_tree.nearest_distance(p) < threshold) ++hits;
  double recall = 100.0 * hits / gt.points.size();
  double f = (precision + recall) > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  return {precision, recall, f};
}

ChamferResult chamfer_l1(const PointSample& pred, const PointSample& gt) {
  if (pred.points.empty() || gt.points.empty())
    throw std::invalid_argument("chamfer_l1: point samples must be non-empty");
  KdTree gt_tree(gt.points);
  KdTree pred_tree(pred.points);
  double acc = 0;
  for (const auto& p : pred.points) acc += gt_tree.nearest_distance(p);
  acc /= static_cast<double>(pred.points.size());
  double comp = 0;
  for (const auto& p : gt.points) comp += pred_tree.nearest_distance(p);
  comp /= static_cast<double>(gt.points.size());
  return {acc, comp, 0.5 * (acc + comp)};
}

}  // namespace mpsf
