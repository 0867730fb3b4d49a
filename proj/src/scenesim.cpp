#include "mpsf/scenesim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mpsf {

namespace {

double box_sdf(const Vec3& p, const Vec3& center, const Vec3& half) {
  Vec3 q = {std::fabs(p.x - center.x) - half.x, std::fabs(p.y - center.y) - half.y,
            std::fabs(p.z - center.z) - half.z};
  Vec3 qpos = {std::fmax(q.x, 0.0), std::fmax(q.y, 0.0), std::fmax(q.z, 0.0)};
  double outside = norm(qpos);
  double inside = std::fmin(std::fmax(q.x, std::fmax(q.y, q.z)), 0.0);
  return outside + inside;
}

}  // namespace

double Primitive::sdf(const Vec3& p) const {
  switch (kind) {
    case Kind::Sphere:
      return norm(p - center) - half.x;
    case Kind::Box:
      return box_sdf(p, center, half);
    case Kind::RoomShell:
      return -box_sdf(p, center, half);
  }
  return 0.0;
}

double AnalyticScene::sdf(const Vec3& p) const {
  double d = std::numeric_limits<double>::max();
  for (const auto& prim : prims) d = std::fmin(d, prim.sdf(p));
  return d;
}

int AnalyticScene::nearest_primitive(const Vec3& p) const {
  int best = 0;
  double d = std::numeric_limits<double>::max();
  for (size_t i = 0; i < prims.size(); ++i) {
    double pd = prims[i].sdf(p);
    if (pd < d) {
      d = pd;
      best = static_cast<int>(i);
    }
  }
  return best;
}

Vec3 AnalyticScene::gradient(const Vec3& p) const {
  const double h = 1e-5;
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 lo = p, hi = p;
    lo[a] -= h;
    hi[a] += h;
    g[a] = (sdf(hi) - sdf(lo)) / (2 * h);
  }
  return normalized(g);
}

std::array<double, 3> AnalyticScene::albedo(const Vec3& p) const {
  int prim = nearest_primitive(p);
  // one untextured wall (+X) exercises the normal regularizer
  if (prims[prim].kind == Primitive::Kind::RoomShell && p.x > 0.98)
    return {0.62, 0.58, 0.50};
  static const std::array<double, 3> palette[3][2] = {
      {{0.72, 0.45, 0.42}, {0.42, 0.55, 0.72}},  // room shell
      {{0.45, 0.72, 0.47}, {0.72, 0.70, 0.44}},  // sphere
      {{0.72, 0.64, 0.43}, {0.46, 0.44, 0.70}},  // box
  };
  int kind_idx = prims[prim].kind == Primitive::Kind::RoomShell ? 0
                 : prims[prim].kind == Primitive::Kind::Sphere  ? 1
                                                                : 2;
  const double freq = 3.0;
  long parity = static_cast<long>(std::floor(freq * (p.x + 10.0))) +
                static_cast<long>(std::floor(freq * (p.y + 10.0))) +
                static_cast<long>(std::floor(freq * (p.z + 10.0)));
  return palette[kind_idx][parity & 1];
}

AnalyticScene AnalyticScene::box_room() {
  AnalyticScene s;
  s.prims.push_back({Primitive::Kind::RoomShell, {0, 0, 0}, {1, 1, 1}});
  s.prims.push_back({Primitive::Kind::Sphere, {-0.38, -0.28, -0.62}, {0.28, 0, 0}});
  s.prims.push_back({Primitive::Kind::Box, {0.42, 0.34, -0.72}, {0.24, 0.18, 0.28}});
  s.light_dir = normalized(Vec3{0.35, -0.3, -0.88});
  return s;
}

TraceResult sphere_trace(const AnalyticScene& scene, const Vec3& origin, const Vec3& dir,
                         double t_max, double eps) {
  double t = 1e-4;
  for (int step = 0; step < 2048 && t < t_max; ++step) {
    Vec3 p = origin + dir * t;
    double f = scene.sdf(p);
    if (f < eps) return {true, t, p};
    t += f;
  }
  return {false, 0.0, {}};
}

void render_groundtruth(const AnalyticScene& scene, const Camera& camera, int width, int height,
                        Image& rgb_out, FloatMap& depth_out) {
  rgb_out = Image(width, height);
  depth_out = FloatMap(width, height);
  Vec3 o = camera.position();
  const std::array<double, 3> background = {0.05, 0.05, 0.08};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      Vec3 dir = camera.ray_dir(x + 0.5, y + 0.5);
      TraceResult hit = sphere_trace(scene, o, dir);
      if (!hit.hit) {
        rgb_out.set(x, y, background);
        continue;
      }
      Vec3 n = scene.gradient(hit.point);
      double lambert = std::fmax(0.0, dot(n, -scene.light_dir));
      auto alb = scene.albedo(hit.point);
      double shade = scene.ambient + scene.diffuse * lambert;
      rgb_out.set(x, y, {alb[0] * shade, alb[1] * shade, alb[2] * shade});
      depth_out.at(x, y) = static_cast<float>(hit.t);
    }
  }
}

void corrupt_priors(const FloatMap& exact_depth, const CorruptionSpec& spec, Pcg32& rng,
                    FloatMap& depth_out, FloatMap& confidence_out) {
  depth_out = FloatMap(exact_depth.width, exact_depth.height);
  confidence_out = FloatMap(exact_depth.width, exact_depth.height);
  for (size_t i = 0; i < exact_depth.data.size(); ++i) {
    float d = exact_depth.data[i];
    if (d <= 0.f) continue;
    if (spec.invalid_fraction > 0 && rng.uniform() < spec.invalid_fraction) continue;
    if (spec.depth_sigma <= 0) {
      depth_out.data[i] = d;
      confidence_out.data[i] = 1.f;
      continue;
    }
    double err = spec.depth_sigma * rng.normal();
    double noisy = std::fmax(1e-4, double(d) + err);
    double mu = std::clamp(1.0 - std::fabs(err) / (3.0 * spec.depth_sigma), 0.0, 1.0);
    depth_out.data[i] = static_cast<float>(noisy);
    confidence_out.data[i] = static_cast<float>(mu);
  }
}

KeypointCloud sample_keypoints(const AnalyticScene& scene, const std::vector<Camera>& cameras,
                               int width, int height, int n, double noise, Pcg32& rng) {
  KeypointCloud cloud;
  double tol = 0.015 + 3.0 * noise;
  int attempts = 0;
  int max_attempts = 60 * n + 1000;
  while (static_cast<int>(cloud.points.size()) < n && attempts++ < max_attempts) {
    int cam_id = static_cast<int>(rng.next_below(static_cast<uint32_t>(cameras.size())));
    double px = rng.uniform() * width;
    double py = rng.uniform() * height;
    const Camera& cam = cameras[cam_id];
    TraceResult hit = sphere_trace(scene, cam.position(), cam.ray_dir(px, py));
    if (!hit.hit) continue;
    Vec3 p = hit.point;
    if (noise > 0) p += Vec3{noise * rng.normal(), noise * rng.normal(), noise * rng.normal()};

    std::vector<int> vis;
    for (size_t k = 0; k < cameras.size(); ++k) {
      auto proj = cameras[k].project(p);
      if (!proj.in_front) continue;
      if (proj.px < 0 || proj.px >= width || proj.py < 0 || proj.py >= height) continue;
      Vec3 o = cameras[k].position();
      double dist = norm(p - o);
      TraceResult occ = sphere_trace(scene, o, normalized(p - o));
      if (!occ.hit) continue;
      if (std::fabs(occ.t - dist) <= tol) vis.push_back(static_cast<int>(k));
    }
    if (vis.empty()) continue;
    cloud.points.push_back(p);
    cloud.visibility.push_back(std::move(vis));
  }
  return cloud;
}

std::vector<AffineColor> corrupt_exposure(std::vector<Image>& images, const CorruptionSpec& spec,
                                          int anchor, Pcg32& rng) {
  if (anchor < 0 || anchor >= static_cast<int>(images.size()))
    throw std::invalid_argument("corrupt_exposure: anchor index out of range");
  std::vector<AffineColor> truth(images.size());
  for (size_t k = 0; k < images.size(); ++k) {
    if (static_cast<int>(k) == anchor) continue;
    AffineColor a;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        double range = (r == c) ? spec.exposure_diag : spec.exposure_offdiag;
        double delta = range > 0 ? rng.uniform(-range, range) : 0.0;
        a.R[r * 3 + c] = (r == c ? 1.0 : 0.0) + delta;
      }
      a.t[r] = spec.exposure_trans > 0 ? rng.uniform(-spec.exposure_trans, spec.exposure_trans) : 0.0;
    }
    truth[k] = a;
    Image& img = images[k];
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        auto c = img.at(x, y);
        std::array<double, 3> out;
        for (int r = 0; r < 3; ++r)
          out[r] = std::clamp(
              a.R[r * 3] * c[0] + a.R[r * 3 + 1] * c[1] + a.R[r * 3 + 2] * c[2] + a.t[r], 0.0, 1.0);
        img.set(x, y, out);
      }
  }
  return truth;
}

namespace {

std::vector<Camera> ring_cameras(const AnalyticScene& scene, const SceneSimConfig& cfg,
                                 Pcg32& rng) {
  std::vector<Camera> cams;
  double focal = 0.5 * cfg.image_size / std::tan(0.5 * cfg.fov_degrees * M_PI / 180.0);
  for (int k = 0; k < cfg.n_cameras; ++k) {
    double theta = 2.0 * M_PI * k / cfg.n_cameras;
    Vec3 pos = {cfg.ring_radius * std::cos(theta), cfg.ring_radius * std::sin(theta),
                cfg.z_jitter * rng.uniform(-1.0, 1.0)};
    // keep a clearance margin from all geometry
    for (int tries = 0; tries < 16 && scene.sdf(pos) < 0.08; ++tries) pos.z += 0.05;
    Vec3 target = {cfg.lookat_jitter * rng.uniform(-1.0, 1.0),
                   cfg.lookat_jitter * rng.uniform(-1.0, 1.0),
                   -0.15 + cfg.lookat_jitter * rng.uniform(-1.0, 1.0)};
    Vec3 forward = normalized(target - pos);
    Vec3 up = {0, 0, 1};
    Vec3 xcam = cross(forward, up);
    if (norm(xcam) < 1e-6) xcam = {1, 0, 0};
    xcam = normalized(xcam);
    Vec3 ycam = cross(forward, xcam);

    Camera cam;
    cam.world_from_camera = {xcam.x, ycam.x, forward.x, pos.x, xcam.y, ycam.y,
                             forward.y, pos.y,  xcam.z, ycam.z, forward.z, pos.z,
                             0,      0,      0,         1};
    cam.fx = cam.fy = focal;
    cam.cx = cfg.image_size / 2.0;
    cam.cy = cfg.image_size / 2.0;
    cams.push_back(cam);
  }
  return cams;
}

}  // namespace

GeneratedScene generate_scene(const SceneSimConfig& cfg) {
  GeneratedScene out;
  out.scene = AnalyticScene::box_room();
  out.width = out.height = cfg.image_size;
  out.corruption_anchor = 0;
  out.seed = cfg.seed;

  Pcg32 cam_rng(mix_seed(cfg.seed, 1));
  out.cameras = ring_cameras(out.scene, cfg, cam_rng);

  out.clean_images.resize(cfg.n_cameras);
  out.exact_depth.resize(cfg.n_cameras);
  for (int k = 0; k < cfg.n_cameras; ++k)
    render_groundtruth(out.scene, out.cameras[k], cfg.image_size, cfg.image_size,
                       out.clean_images[k], out.exact_depth[k]);

  out.maps.depth.resize(cfg.n_cameras);
  out.maps.confidence.resize(cfg.n_cameras);
  for (int k = 0; k < cfg.n_cameras; ++k) {
    Pcg32 rng(mix_seed(cfg.seed, 100 + k));
    corrupt_priors(out.exact_depth[k], cfg.corruption, rng, out.maps.depth[k],
                   out.maps.confidence[k]);
  }

  Pcg32 kp_rng(mix_seed(cfg.seed, 2));
  out.keypoints = sample_keypoints(out.scene, out.cameras, cfg.image_size, cfg.image_size,
                                   cfg.n_keypoints, cfg.corruption.keypoint_noise, kp_rng);

  out.images = out.clean_images;
  Pcg32 exp_rng(mix_seed(cfg.seed, 3));
  out.exposure_gt = corrupt_exposure(out.images, cfg.corruption, out.corruption_anchor, exp_rng);

  double b = cfg.gt_mesh_bound;
  SdfGrid grid = evaluate_grid([&](const Vec3& p) { return out.scene.sdf(p); },
                               Vec3{-b, -b, -b}, Vec3{b, b, b}, cfg.gt_mesh_resolution);
  out.gt_mesh = marching_cubes(grid, 0.0);
  return out;
}

void write_scene(const GeneratedScene& scene, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir + "/images", ec);
  fs::create_directories(dir + "/depth", ec);
  fs::create_directories(dir + "/conf", ec);
  if (ec) throw std::runtime_error("cannot create scene directory: " + dir);

  auto num = [](int k) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%03d", k);
    return std::string(buf);
  };

  write_cameras(scene.cameras, dir + "/cameras.txt");
  write_keypoints(scene.keypoints, dir + "/keypoints.txt");
  {
    std::ofstream out(dir + "/exposure_gt.txt");
    if (!out) throw std::runtime_error("cannot write exposure_gt.txt in " + dir);
    out.precision(17);
    for (const auto& a : scene.exposure_gt) {
      for (double v : a.R) out << v << " ";
      for (double v : a.t) out << v << " ";
      out << "\n";
    }
  }
  write_mesh(scene.gt_mesh, dir + "/gt_mesh.ply", MeshFormat::PLY);

  std::ostringstream lines;
  lines << "seed " << scene.seed << "\n";
  lines << "cameras cameras.txt\n";
  lines << "keypoints keypoints.txt\n";
  lines << "exposure_gt exposure_gt.txt\n";
  lines << "gt_mesh gt_mesh.ply\n";
  for (size_t k = 0; k < scene.images.size(); ++k) {
    std::string id = num(static_cast<int>(k));
    write_ppm(scene.images[k], dir + "/images/img_" + id + ".ppm");
    write_float_map(scene.maps.depth[k], dir + "/depth/depth_" + id + ".mpdm");
    write_float_map(scene.maps.confidence[k], dir + "/conf/conf_" + id + ".mpdm");
    lines << "image " << k << " images/img_" << id << ".ppm\n";
    lines << "depth " << k << " depth/depth_" << id << ".mpdm\n";
    lines << "confidence " << k << " conf/conf_" << id << ".mpdm\n";
  }
  std::ofstream manifest(dir + "/manifest.txt");
  manifest << lines.str();
  if (!manifest) throw std::runtime_error("manifest write failed in " + dir);
}

SceneData load_scene(const std::string& dir) {
  std::ifstream manifest(dir + "/manifest.txt");
  if (!manifest) throw std::runtime_error("not a scene directory (no manifest.txt): " + dir);

  SceneData data;
  std::string line;
  std::vector<std::pair<int, std::string>> image_files, depth_files, conf_files;
  std::string cameras_file, keypoints_file, exposure_file;
  int line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string kind;
    ss >> kind;
    if (kind == "seed") {
      ss >> data.seed;
    } else if (kind == "cameras") {
      ss >> cameras_file;
    } else if (kind == "keypoints") {
      ss >> keypoints_file;
    } else if (kind == "exposure_gt") {
      ss >> exposure_file;
    } else if (kind == "gt_mesh") {
      // evaluation-only asset; nothing to load here
    } else if (kind == "image" || kind == "depth" || kind == "confidence") {
      int idx;
      std::string path;
      if (!(ss >> idx >> path))
        throw std::runtime_error(dir + "/manifest.txt:" + std::to_string(line_no) +
                                 ": malformed asset line");
      if (kind == "image") image_files.emplace_back(idx, path);
      if (kind == "depth") depth_files.emplace_back(idx, path);
      if (kind == "confidence") conf_files.emplace_back(idx, path);
    } else {
      throw std::runtime_error(dir + "/manifest.txt:" + std::to_string(line_no) +
                               ": unknown entry '" + kind + "'");
    }
  }
  if (cameras_file.empty() || keypoints_file.empty())
    throw std::runtime_error(dir + ": manifest missing cameras or keypoints entry");

  data.cameras = read_cameras(dir + "/" + cameras_file);
  data.keypoints = read_keypoints(dir + "/" + keypoints_file);

  auto sort_by_index = [](std::vector<std::pair<int, std::string>>& v) {
    std::sort(v.begin(), v.end());
  };
  sort_by_index(image_files);
  sort_by_index(depth_files);
  sort_by_index(conf_files);
  for (const auto& [idx, path] : image_files) data.images.push_back(read_ppm(dir + "/" + path));
  for (const auto& [idx, path] : depth_files)
    data.maps.depth.push_back(read_float_map(dir + "/" + path));
  for (const auto& [idx, path] : conf_files)
    data.maps.confidence.push_back(read_float_map(dir + "/" + path));

  if (data.images.size() != data.cameras.size() || data.maps.depth.size() != data.cameras.size() ||
      data.maps.confidence.size() != data.cameras.size())
    throw std::runtime_error(dir + ": asset counts disagree with camera count");
  data.maps.validate();
  if (!data.images.empty()) {
    data.width = data.images[0].width;
    data.height = data.images[0].height;
    for (size_t k = 0; k < data.images.size(); ++k)
      if (data.images[k].width != data.width || data.images[k].height != data.height ||
          data.maps.depth[k].width != data.width || data.maps.depth[k].height != data.height)
        throw std::runtime_error(dir + ": image/map dimensions disagree at index " +
                                 std::to_string(k));
  }

  if (!exposure_file.empty()) {
    std::ifstream in(dir + "/" + exposure_file);
    if (in) {
      std::string eline;
      while (std::getline(in, eline)) {
        if (eline.empty()) continue;
        std::istringstream ss(eline);
        AffineColor a;
        for (double& v : a.R) ss >> v;
        for (double& v : a.t) ss >> v;
        data.exposure_gt.push_back(a);
      }
    }
  }
  return data;
}

}  // namespace mpsf
