#include "mpsf/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mpsf {

const std::vector<ConfigKey>& RunConfig::registry() {
  static const std::vector<ConfigKey> keys = {
      // scene / ray bounds
      {"scene.bound_radius", "2.5", "bounding sphere radius used for ray ROI intersection"},

      // field
      {"field.sdf_hidden_layers", "4", "hidden layers of the SDF network"},
      {"field.sdf_hidden_width", "64", "width of SDF hidden layers"},
      {"field.feature_width", "64", "SDF feature vector width fed to the radiance network"},
      {"field.radiance_hidden_layers", "3", "hidden layers of the radiance network"},
      {"field.radiance_hidden_width", "64", "width of radiance hidden layers"},
      {"field.pos_frequencies", "10", "positional encoding frequencies for 3D points"},
      {"field.dir_frequencies", "4", "positional encoding frequencies for view directions"},
      {"field.softplus_beta", "100", "softplus sharpness of hidden activations"},
      {"field.init_radius", "0.5", "radius of the initialization sphere"},
      {"field.init_sharpness", "30", "initial opacity sigmoid sharpness s"},

      // sampling
      {"sample.n_coarse", "64", "coarse-to-fine sample budget per ray"},
      {"sample.n_rounds", "4", "coarse-to-fine rounds (first is uniform)"},
      {"sample.n_resample", "32", "points re-sampled from the guided PDF (half guided, half linear)"},
      {"sample.base_sharpness", "32", "sampling sharpness of the first importance round (doubles per round)"},
      {"sample.sigma_min", "1e-3", "lower clamp of the prior Gaussian sigma"},
      {"sample.pdf_floor", "1e-4", "floor on h(x) as a fraction of its maximum, applied before the prior product"},

      // priors
      {"priors.min_cameras", "5", "discard keypoints seen by fewer cameras"},
      {"priors.max_pc_rays", "64", "max keypoint rays per batch"},

      // regularizer
      {"regularize.n_patches", "4", "patches per iteration"},
      {"regularize.patch_size", "3", "patch side length k (odd)"},
      {"regularize.dilation", "2", "pixel dilation between patch samples"},
      {"regularize.sigma_c", "3", "bilateral color sigma (Lab units)"},
      {"regularize.sigma_d", "0.03", "bilateral spatial sigma (scene units)"},

      // training
      {"train.iterations", "10000", "total optimization iterations"},
      {"train.warmup_iterations", "500", "linear learning-rate warmup span"},
      {"train.rays_per_batch", "256", "main photometric rays per iteration"},
      {"train.lr", "5e-4", "peak Adam learning rate for the field"},
      {"train.exposure_lr_mult", "0.1", "learning-rate multiplier for exposure parameters"},
      {"train.beta1", "0.9", "Adam beta1"},
      {"train.beta2", "0.999", "Adam beta2"},
      {"train.adam_eps", "1e-8", "Adam epsilon"},
      {"train.lambda1", "0.1", "eikonal loss weight"},
      {"train.lambda2_start", "0.5", "initial point-cloud loss weight (decays exponentially)"},
      {"train.lambda2_tau", "0", "decay constant of lambda2; 0 = auto so lambda2(end) = 1% of start"},
      {"train.lambda3", "0.1", "normal consistency loss weight"},
      {"train.seed", "42", "master random seed"},
      {"train.log_every", "50", "iterations between training-log lines"},
      {"train.checkpoint_every", "2000", "iterations between periodic checkpoints"},
      {"train.max_nan_skips", "10", "consecutive NaN-gradient steps tolerated before aborting"},
      {"train.threads", "0", "worker threads (0 = hardware default)"},

      // mesh extraction
      {"mesh.resolution", "128", "marching cubes grid resolution per axis"},
      {"mesh.bound", "1.15", "half extent of the extraction box"},

      // evaluation
      {"eval.threshold", "0.05", "F-score distance threshold T"},
      {"eval.histogram_bins", "64", "bins of the optional distance histogram"},

      // synthetic scene generation
      {"scenesim.n_cameras", "32", "cameras on the interior ring"},
      {"scenesim.image_size", "96", "square image resolution"},
      {"scenesim.ring_radius", "0.62", "camera ring radius"},
      {"scenesim.z_jitter", "0.25", "vertical camera jitter"},
      {"scenesim.lookat_jitter", "0.15", "look-at target jitter"},
      {"scenesim.fov_degrees", "75", "horizontal field of view"},
      {"scenesim.n_keypoints", "1200", "sparse keypoints to triangulate"},
      {"scenesim.keypoint_noise", "0.005", "keypoint positional noise sigma"},
      {"scenesim.depth_sigma", "0.02", "depth map noise sigma"},
      {"scenesim.invalid_fraction", "0.08", "fraction of depth pixels invalidated"},
      {"scenesim.exposure_diag", "0.2", "exposure corruption: diagonal gain range"},
      {"scenesim.exposure_offdiag", "0.05", "exposure corruption: channel mixing range"},
      {"scenesim.exposure_trans", "0.1", "exposure corruption: offset range"},
      {"scenesim.seed", "7", "scene generation seed"},
      {"scenesim.gt_mesh_resolution", "192", "ground-truth mesh grid resolution"},
      {"scenesim.gt_mesh_bound", "1.12", "ground-truth mesh extraction half extent"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : registry()) values_[k.key] = k.default_value;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected key=value");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      set(key, value);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::runtime_error("config key " + key + ": not a number: " + v);
  }
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::runtime_error("config key " + key + ": not an integer: " + v);
  }
}

uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::runtime_error("config key " + key + ": not an integer: " + v);
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw std::runtime_error("config key " + key + ": not a boolean: " + v);
}

std::vector<ConfigKey> RunConfig::keys_with_prefixes(const std::vector<std::string>& prefixes) {
  std::vector<ConfigKey> out;
  for (const auto& k : registry())
    for (const auto& p : prefixes)
      if (k.key.rfind(p, 0) == 0) {
        out.push_back(k);
        break;
      }
  return out;
}

}  // namespace mpsf
