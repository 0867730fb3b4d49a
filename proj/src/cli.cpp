#include "mpsf/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mpsf/eval.hpp"
#include "mpsf/mesh.hpp"
#include "mpsf/scenesim.hpp"
#include "mpsf/train.hpp"

namespace mpsf {

namespace fs = std::filesystem;

void cmd_synth(const RunConfig& config, const std::string& out_dir) {
  SceneSimConfig cfg;
  cfg.n_cameras = config.get_int("scenesim.n_cameras");
  cfg.image_size = config.get_int("scenesim.image_size");
  cfg.ring_radius = config.get_double("scenesim.ring_radius");
  cfg.z_jitter = config.get_double("scenesim.z_jitter");
  cfg.lookat_jitter = config.get_double("scenesim.lookat_jitter");
  cfg.fov_degrees = config.get_double("scenesim.fov_degrees");
  cfg.n_keypoints = config.get_int("scenesim.n_keypoints");
  cfg.corruption.keypoint_noise = config.get_double("scenesim.keypoint_noise");
  cfg.corruption.depth_sigma = config.get_double("scenesim.depth_sigma");
  cfg.corruption.invalid_fraction = config.get_double("scenesim.invalid_fraction");
  cfg.corruption.exposure_diag = config.get_double("scenesim.exposure_diag");
  cfg.corruption.exposure_offdiag = config.get_double("scenesim.exposure_offdiag");
  cfg.corruption.exposure_trans = config.get_double("scenesim.exposure_trans");
  cfg.seed = config.get_u64("scenesim.seed");
  cfg.gt_mesh_resolution = config.get_int("scenesim.gt_mesh_resolution");
  cfg.gt_mesh_bound = config.get_double("scenesim.gt_mesh_bound");

  GeneratedScene scene = generate_scene(cfg);
  write_scene(scene, out_dir);
  std::cout << "scene written to " << out_dir << " (" << scene.cameras.size() << " cameras, "
            << scene.keypoints.size() << " keypoints)\n";
}

namespace {

FieldConfig field_config_from(const RunConfig& config) {
  FieldConfig f;
  f.sdf_hidden_layers = config.get_int("field.sdf_hidden_layers");
  f.sdf_hidden_width = config.get_int("field.sdf_hidden_width");
  f.feature_width = config.get_int("field.feature_width");
  f.radiance_hidden_layers = config.get_int("field.radiance_hidden_layers");
  f.radiance_hidden_width = config.get_int("field.radiance_hidden_width");
  f.pos_frequencies = config.get_int("field.pos_frequencies");
  f.dir_frequencies = config.get_int("field.dir_frequencies");
  f.softplus_beta = config.get_double("field.softplus_beta");
  f.init_radius = config.get_double("field.init_radius");
  f.init_sharpness = config.get_double("field.init_sharpness");
  return f;
}

// Recovers the network architecture from checkpoint tensor shapes so mesh
// extraction does not require the training config.
FieldConfig field_config_from_checkpoint(const std::vector<TensorRecord>& records,
                                         FieldConfig base) {
  int sdf_layers = 0;
  while (find_tensor(records, "sdf/" + std::to_string(sdf_layers) + "/weight")) ++sdf_layers;
  int rad_layers = 0;
  while (find_tensor(records, "radiance/" + std::to_string(rad_layers) + "/weight")) ++rad_layers;
  if (sdf_layers < 2 || rad_layers < 2)
    throw std::runtime_error("checkpoint does not contain the field networks");

  const TensorRecord* sdf_first = find_tensor(records, "sdf/0/weight");
  const TensorRecord* sdf_last =
      find_tensor(records, "sdf/" + std::to_string(sdf_layers - 1) + "/weight");
  const TensorRecord* rad_first = find_tensor(records, "radiance/0/weight");

  base.sdf_hidden_layers = sdf_layers - 1;
  base.sdf_hidden_width = static_cast<int>(sdf_first->dims[0]);
  base.feature_width = static_cast<int>(sdf_last->dims[0]) - 1;
  base.radiance_hidden_layers = rad_layers - 1;
  base.radiance_hidden_width = static_cast<int>(rad_first->dims[0]);
  int sdf_in = static_cast<int>(sdf_first->dims[1]);
  base.pos_frequencies = (sdf_in / 3 - 1) / 2;
  int rad_in = static_cast<int>(rad_first->dims[1]);
  int dir_len = rad_in - 6 - base.feature_width;
  base.dir_frequencies = (dir_len / 3 - 1) / 2;
  return base;
}

}  // namespace

void cmd_train(const RunConfig& config, const std::string& scene_dir, const std::string& out_dir,
               const TrainOptions& options) {
  SceneData scene = load_scene(scene_dir);

  TrainConfig tcfg = TrainConfig::from_run_config(config);
  for (const auto& a : options.ablate) {
    if (a == "pointcloud")
      tcfg.ablate_pointcloud = true;
    else if (a == "depthmap")
      tcfg.ablate_depthmap = true;
    else if (a == "exposure")
      tcfg.ablate_exposure = true;
    else if (a == "normal")
      tcfg.ablate_normal = true;
    else
      throw std::invalid_argument("unknown ablation '" + a +
                                  "' (expected pointcloud|depthmap|exposure|normal)");
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory: " + out_dir);

  Trainer<float> trainer(field_config_from(config), tcfg, scene);
  if (!options.resume_checkpoint.empty()) trainer.load_checkpoint(options.resume_checkpoint);

  std::ofstream log(out_dir + "/train_log.tsv",
                    options.resume_checkpoint.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("cannot open training log in " + out_dir);
  log.precision(10);

  while (trainer.iteration() < tcfg.iterations) {
    StepMetrics m = trainer.step();
    bool log_now = m.iteration % tcfg.log_every == 0 || m.iteration + 1 == tcfg.iterations;
    if (log_now) {
      log << m.iteration << "\t" << m.parts.rgb << "\t" << m.parts.eikonal << "\t"
          << m.parts.pointcloud << "\t" << m.parts.normal << "\t" << m.total << "\t" << m.lambda2
          << "\t" << m.lr << "\n";
      log.flush();
    }
    if (m.iteration % (tcfg.log_every * 10) == 0)
      std::cout << "iter " << m.iteration << " total " << m.total << (m.skipped_nan ? " [skip]" : "")
                << std::endl;
    if (tcfg.checkpoint_every > 0 && m.iteration > 0 && m.iteration % tcfg.checkpoint_every == 0) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "/checkpoint_%06d.mpsf", m.iteration);
      trainer.save_checkpoint(out_dir + buf);
    }
  }
  trainer.save_checkpoint(out_dir + "/checkpoint.mpsf");
  std::cout << "final checkpoint: " << out_dir << "/checkpoint.mpsf\n";
}

void cmd_mesh(const RunConfig& config, const std::string& checkpoint_path,
              const std::string& out_path, const std::string& format) {
  auto records = read_checkpoint(checkpoint_path);
  FieldConfig fcfg = field_config_from_checkpoint(records, field_config_from(config));
  Field<float> field(fcfg);
  field.from_tensors(records);

  int resolution = config.get_int("mesh.resolution");
  double bound = config.get_double("mesh.bound");
  int threads = resolve_threads(config.get_int("train.threads"));
  SdfGrid grid = evaluate_grid([&](const Vec3& p) { return double(field.sdf(p)); },
                               Vec3{-bound, -bound, -bound}, Vec3{bound, bound, bound}, resolution,
                               threads);
  TriMesh mesh = marching_cubes(grid, 0.0);
  if (mesh.vertices.empty())
    std::cerr << "warning: level set is empty, writing an empty mesh\n";

  MeshFormat fmt;
  if (format == "obj")
    fmt = MeshFormat::OBJ;
  else if (format == "ply")
    fmt = MeshFormat::PLY;
  else
    throw std::invalid_argument("unknown mesh format '" + format + "' (expected obj|ply)");
  write_mesh(mesh, out_path, fmt);
  std::cout << mesh.vertices.size() << " vertices, " << mesh.triangles.size() << " triangles -> "
            << out_path << "\n";
}

std::vector<double> cmd_eval(const RunConfig& config, const std::string& pred_mesh,
                             const std::string& gt_mesh, const EvalOptions& options) {
  TriMesh pred = read_mesh(pred_mesh);
  TriMesh gt = read_mesh(gt_mesh);
  if (pred.vertices.empty()) throw std::runtime_error("predicted mesh is empty: " + pred_mesh);
  if (gt.vertices.empty()) throw std::runtime_error("ground-truth mesh is empty: " + gt_mesh);

  PointSample pred_pts = mesh_vertices(pred);
  PointSample gt_pts = mesh_vertices(gt);
  double threshold = config.get_double("eval.threshold");
  auto f = fscore(pred_pts, gt_pts, threshold);
  auto c = chamfer_l1(pred_pts, gt_pts);

  if (!options.histogram_path.empty()) {
    int bins = config.get_int("eval.histogram_bins");
    KdTree gt_tree(gt_pts.points);
    KdTree pred_tree(pred_pts.points);
    std::vector<double> d_pred, d_gt;
    for (const auto& p : pred_pts.points) d_pred.push_back(gt_tree.nearest_distance(p));
    for (const auto& p : gt_pts.points) d_gt.push_back(pred_tree.nearest_distance(p));
    double dmax = 0;
    for (double d : d_pred) dmax = std::max(dmax, d);
    for (double d : d_gt) dmax = std::max(dmax, d);
    dmax = std::max(dmax, 1e-9);
    std::vector<size_t> h_pred(bins, 0), h_gt(bins, 0);
    for (double d : d_pred) h_pred[std::min(bins - 1, static_cast<int>(d / dmax * bins))]++;
    for (double d : d_gt) h_gt[std::min(bins - 1, static_cast<int>(d / dmax * bins))]++;
    std::ofstream hist(options.histogram_path);
    if (!hist) throw std::runtime_error("cannot open histogram file: " + options.histogram_path);
    hist << "# bin_lo bin_hi pred_to_gt gt_to_pred\n";
    for (int b = 0; b < bins; ++b)
      hist << b * dmax / bins << " " << (b + 1) * dmax / bins << " " << h_pred[b] << " " << h_gt[b]
           << "\n";
  }

  std::vector<double> out = {c.accuracy, c.completeness, c.chamfer, f.precision, f.recall, f.fscore};
  std::cout.precision(10);
  std::cout << out[0] << "\t" << out[1] << "\t" << out[2] << "\t" << out[3] << "\t" << out[4]
            << "\t" << out[5] << "\n";
  return out;
}

void cmd_plot(const std::string& log_path, const std::string& out_dir) {
  std::ifstream in(log_path);
  if (!in) throw std::runtime_error("cannot open training log: " + log_path);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory: " + out_dir);

  const char* series[5] = {"loss_rgb", "loss_eikonal", "loss_pointcloud", "loss_normal", "total"};
  std::vector<std::ofstream> outs;
  for (const char* s : series) {
    outs.emplace_back(out_dir + "/" + s + ".csv");
    if (!outs.back()) throw std::runtime_error(std::string("cannot open CSV for ") + s);
    outs.back() << "iteration," << s << "\n";
  }

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    long iter;
    double vals[7];
    if (!(ss >> iter >> vals[0] >> vals[1] >> vals[2] >> vals[3] >> vals[4] >> vals[5] >>
          vals[6])) {
      std::cerr << "warning: skipping malformed log line " << line_no << "\n";
      continue;
    }
    for (int s = 0; s < 5; ++s) outs[s] << iter << "," << vals[s] << "\n";
  }
}

}  // namespace mpsf
