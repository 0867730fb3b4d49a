#include "mpsf/priors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mpsf {

void KeypointCloud::build_projection_cache(const std::vector<Camera>& cameras, int width,
                                           int height) {
  observations.assign(points.size(), {});
  for (size_t i = 0; i < points.size(); ++i) {
    for (int cam_id : visibility[i]) {
      if (cam_id < 0 || cam_id >= static_cast<int>(cameras.size())) continue;
      auto proj = cameras[cam_id].project(points[i]);
      if (!proj.in_front) continue;
      if (proj.px < 0 || proj.px >= width || proj.py < 0 || proj.py >= height) continue;
      observations[i].push_back({cam_id, proj.px, proj.py, proj.depth});
    }
  }
}

KeypointCloud filter_keypoints(const KeypointCloud& cloud, int min_cameras) {
  KeypointCloud out;
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    if (static_cast<int>(cloud.visibility[i].size()) < min_cameras) continue;
    out.points.push_back(cloud.points[i]);
    out.visibility.push_back(cloud.visibility[i]);
    if (i < cloud.observations.size()) out.observations.push_back(cloud.observations[i]);
  }
  if (out.observations.size() != out.points.size()) out.observations.clear();
  return out;
}

std::vector<KeypointRay> keypoint_ray_batch(const KeypointCloud& cloud,
                                            const std::vector<Camera>& cameras, int camera_id,
                                            int max_rays, double scene_radius, Pcg32& rng) {
  if (camera_id < 0 || camera_id >= static_cast<int>(cameras.size()))
    throw std::out_of_range("keypoint_ray_batch: camera not registered");
  if (cloud.observations.size() != cloud.points.size())
    throw std::logic_error("keypoint_ray_batch: projection cache not built");

  struct Candidate {
    int point;
    const KeypointCloud::Observation* obs;
  };
  std::vector<Candidate> candidates;
  for (size_t i = 0; i < cloud.points.size(); ++i)
    for (const auto& obs : cloud.observations[i])
      if (obs.camera == camera_id) candidates.push_back({static_cast<int>(i), &obs});

  // uniform subsample without replacement (partial Fisher-Yates)
  size_t take = std::min<size_t>(max_rays, candidates.size());
  for (size_t j = 0; j < take; ++j) {
    size_t pick = j + rng.next_below(static_cast<uint32_t>(candidates.size() - j));
    std::swap(candidates[j], candidates[pick]);
  }

  const Camera& cam = cameras[camera_id];
  std::vector<KeypointRay> batch;
  batch.reserve(take);
  for (size_t j = 0; j < take; ++j) {
    const auto& c = candidates[j];
    Vec3 dir = cam.ray_dir(c.obs->px, c.obs->py);
    auto ray = make_bounded_ray(cam.position(), dir, scene_radius);
    if (!ray) continue;
    batch.push_back({*ray, c.obs->depth, c.point});
  }
  return batch;
}

void DepthMapSet::validate() const {
  if (depth.size() != confidence.size())
    throw std::runtime_error("prior maps: depth/confidence count mismatch");
  for (size_t k = 0; k < depth.size(); ++k) {
    if (depth[k].width != confidence[k].width || depth[k].height != confidence[k].height)
      throw std::runtime_error("prior maps: dimension mismatch at image " + std::to_string(k));
    for (float d : depth[k].data)
      if (!(d >= 0.f) || !std::isfinite(d))
        throw std::runtime_error("prior maps: negative or non-finite depth in image " +
                                 std::to_string(k));
    for (float c : confidence[k].data)
      if (!(c >= 0.f && c <= 1.f))
        throw std::runtime_error("prior maps: confidence outside [0,1] in image " +
                                 std::to_string(k));
  }
}

DepthPrior lookup_prior(const DepthMapSet& set, int image_id, int x, int y) {
  if (image_id < 0 || image_id >= static_cast<int>(set.depth.size()))
    throw std::out_of_range("lookup_prior: unknown image id");
  const FloatMap& d = set.depth[image_id];
  if (x < 0 || x >= d.width || y < 0 || y >= d.height)
    throw std::out_of_range("lookup_prior: pixel out of bounds");
  DepthPrior prior;
  prior.d = d.at(x, y);
  prior.mu = set.confidence[image_id].at(x, y);
  prior.valid = prior.d > 0.0;
  return prior;
}

static_assert(std::endian::native == std::endian::little, "map format assumes little-endian host");

void write_float_map(const FloatMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open map for writing: " + path);
  out.write("MPDM", 4);
  uint32_t w = map.width, h = map.height;
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(map.data.data()),
            static_cast<std::streamsize>(map.data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("map write failed: " + path);
}

FloatMap read_float_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open map: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MPDM", 4) != 0)
    throw std::runtime_error(path + ": bad magic, not an MPDM map");
  uint32_t w = 0, h = 0;
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  if (!in || w == 0 || h == 0 || w > 65536 || h > 65536)
    throw std::runtime_error(path + ": corrupt map header");
  FloatMap map(static_cast<int>(w), static_cast<int>(h));
  in.read(reinterpret_cast<char*>(map.data.data()),
          static_cast<std::streamsize>(map.data.size() * sizeof(float)));
  if (!in) throw std::runtime_error(path + ": truncated map data");
  return map;
}

void write_keypoints(const KeypointCloud& cloud, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open keypoints for writing: " + path);
  out.precision(17);
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3& p = cloud.points[i];
    out << p.x << " " << p.y << " " << p.z << " " << cloud.visibility[i].size();
    for (int id : cloud.visibility[i]) out << " " << id;
    out << "\n";
  }
  if (!out) throw std::runtime_error("keypoint write failed: " + path);
}

KeypointCloud read_keypoints(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open keypoints: " + path);
  KeypointCloud cloud;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Vec3 p;
    size_t n_views = 0;
    if (!(ss >> p.x >> p.y >> p.z >> n_views))
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed keypoint line");
    std::vector<int> views(n_views);
    for (size_t v = 0; v < n_views; ++v)
      if (!(ss >> views[v]))
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": truncated visibility list");
    std::sort(views.begin(), views.end());
    views.erase(std::unique(views.begin(), views.end()), views.end());
    cloud.points.push_back(p);
    cloud.visibility.push_back(std::move(views));
  }
  return cloud;
}

void write_cameras(const std::vector<Camera>& cams, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open cameras for writing: " + path);
  out.precision(17);
  for (const auto& c : cams) {
    for (double v : c.world_from_camera) out << v << " ";
    out << c.fx << " " << c.fy << " " << c.cx << " " << c.cy << "\n";
  }
  if (!out) throw std::runtime_error("camera write failed: " + path);
}

std::vector<Camera> read_cameras(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open cameras: " + path);
  std::vector<Camera> cams;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Camera c;
    bool ok = true;
    for (double& v : c.world_from_camera) ok = ok && bool(ss >> v);
    ok = ok && bool(ss >> c.fx >> c.fy >> c.cx >> c.cy);
    if (!ok)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed camera line");
    cams.push_back(c);
  }
  return cams;
}

}  // namespace mpsf
