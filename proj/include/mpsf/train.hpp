#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpsf/checkpoint.hpp"
#include "mpsf/config.hpp"
#include "mpsf/exposure.hpp"
#include "mpsf/field.hpp"
#include "mpsf/priors.hpp"
#include "mpsf/regularize.hpp"
#include "mpsf/render.hpp"
#include "mpsf/sample.hpp"
#include "mpsf/scenesim.hpp"
#include "mpsf/threading.hpp"

namespace mpsf {

// Raised when optimization hits a non-finite state it cannot recover from.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LossParts {
  double rgb = 0, eikonal = 0, pointcloud = 0, normal = 0;
};

struct LossWeights {
  double lambda1 = 0.1;        // eikonal
  double lambda2_start = 0.5;  // pointcloud, scheduled
  double lambda2_tau = 0;      // 0 = auto from total iterations
  double lambda3 = 0.1;        // normal consistency

  double lambda2_at(int iteration) const {
    return lambda2_start * std::exp(-static_cast<double>(iteration) / lambda2_tau);
  }
};

// --- standalone (plain double) loss formulas; the trainer evaluates the
// same expressions on the tape ---

// mean over rays of the summed per-channel absolute color error
inline double loss_rgb(std::span<const std::array<double, 3>> predicted,
                       std::span<const std::array<double, 3>> target) {
  if (predicted.size() != target.size()) throw std::invalid_argument("loss_rgb: size mismatch");
  if (predicted.empty()) return 0.0;
  double acc = 0;
  for (size_t r = 0; r < predicted.size(); ++r)
    for (int c = 0; c < 3; ++c) acc += std::fabs(predicted[r][c] - target[r][c]);
  return acc / static_cast<double>(predicted.size());
}

// mean over sampled points of (||grad f|| - 1)^2
inline double loss_eikonal(std::span<const Vec3> gradients) {
  if (gradients.empty()) return 0.0;
  double acc = 0;
  for (const auto& g : gradients) {
    double d = norm(g) - 1.0;
    acc += d * d;
  }
  return acc / static_cast<double>(gradients.size());
}

// mean squared depth error over the keypoint batch (uniform weights)
inline double loss_pointcloud(std::span<const double> rendered, std::span<const double> target) {
  if (rendered.size() != target.size())
    throw std::invalid_argument("loss_pointcloud: size mismatch");
  if (rendered.empty()) return 0.0;
  double acc = 0;
  for (size_t i = 0; i < rendered.size(); ++i) {
    double d = rendered[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(rendered.size());
}

inline double total_loss(const LossParts& parts, const LossWeights& weights, int iteration) {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite loss part: ") + name);
    return v;
  };
  return check(parts.rgb, "rgb") + weights.lambda1 * check(parts.eikonal, "eikonal") +
         weights.lambda2_at(iteration) * check(parts.pointcloud, "pointcloud") +
         weights.lambda3 * check(parts.normal, "normal");
}

struct TrainConfig {
  int iterations = 10000;
  int warmup_iterations = 500;
  int rays_per_batch = 256;
  double lr = 5e-4;
  double exposure_lr_mult = 0.1;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  LossWeights weights;
  uint64_t seed = 42;
  int log_every = 50;
  int checkpoint_every = 2000;
  int max_nan_skips = 10;
  int threads = 1;

  int n_coarse = 64, n_rounds = 4, n_resample = 32;
  double base_sharpness = 32.0, sigma_min = 1e-3, pdf_floor = 1e-4;
  int min_cameras = 5, max_pc_rays = 64;
  int n_patches = 4, patch_size = 3, dilation = 2;
  BilateralParams bilateral;
  double scene_radius = 2.5;

  bool ablate_pointcloud = false;
  bool ablate_depthmap = false;
  bool ablate_exposure = false;
  bool ablate_normal = false;

  static TrainConfig from_run_config(const RunConfig& rc) {
    TrainConfig c;
    c.iterations = rc.get_int("train.iterations");
    c.warmup_iterations = rc.get_int("train.warmup_iterations");
    c.rays_per_batch = rc.get_int("train.rays_per_batch");
    c.lr = rc.get_double("train.lr");
    c.exposure_lr_mult = rc.get_double("train.exposure_lr_mult");
    c.beta1 = rc.get_double("train.beta1");
    c.beta2 = rc.get_double("train.beta2");
    c.adam_eps = rc.get_double("train.adam_eps");
    c.weights.lambda1 = rc.get_double("train.lambda1");
    c.weights.lambda2_start = rc.get_double("train.lambda2_start");
    c.weights.lambda2_tau = rc.get_double("train.lambda2_tau");
    c.weights.lambda3 = rc.get_double("train.lambda3");
    c.seed = rc.get_u64("train.seed");
    c.log_every = rc.get_int("train.log_every");
    c.checkpoint_every = rc.get_int("train.checkpoint_every");
    c.max_nan_skips = rc.get_int("train.max_nan_skips");
    c.threads = resolve_threads(rc.get_int("train.threads"));
    c.n_coarse = rc.get_int("sample.n_coarse");
    c.n_rounds = rc.get_int("sample.n_rounds");
    c.n_resample = rc.get_int("sample.n_resample");
    c.base_sharpness = rc.get_double("sample.base_sharpness");
    c.sigma_min = rc.get_double("sample.sigma_min");
    c.pdf_floor = rc.get_double("sample.pdf_floor");
    c.min_cameras = rc.get_int("priors.min_cameras");
    c.max_pc_rays = rc.get_int("priors.max_pc_rays");
    c.n_patches = rc.get_int("regularize.n_patches");
    c.patch_size = rc.get_int("regularize.patch_size");
    c.dilation = rc.get_int("regularize.dilation");
    c.bilateral.sigma_c = rc.get_double("regularize.sigma_c");
    c.bilateral.sigma_d = rc.get_double("regularize.sigma_d");
    c.scene_radius = rc.get_double("scene.bound_radius");
    if (c.warmup_iterations > c.iterations) c.warmup_iterations = c.iterations;
    if (c.weights.lambda2_tau <= 0)
      c.weights.lambda2_tau = c.iterations / std::log(100.0);
    return c;
  }
};

struct StepMetrics {
  int iteration = 0;
  LossParts parts;
  double total = 0;
  double lambda2 = 0;
  double lr = 0;
  bool skipped_nan = false;
};

// One frozen ray of a batch: everything non-differentiable is pinned at
// assembly so analytic gradients and finite differences see the same
// computation.
struct FrozenRay {
  Ray ray;
  std::vector<double> t;  // strictly ascending quadrature distances
  std::array<double, 3> gt_color{};
  double target_depth = -1;  // >= 0 only on keypoint rays
  bool depth_normal_valid = true;
};

struct FrozenPatch {
  std::vector<int> rays;  // indices into FrozenBatch::rays
  int center = 0;
  std::vector<double> bilateral;  // frozen affinities (0 for invalid pixels)
};

struct FrozenBatch {
  std::vector<FrozenRay> rays;
  std::vector<FrozenPatch> patches;
  int n_main = 0;
  int n_keypoint = 0;
  int n_patch_rays = 0;
  int image = -1;
  size_t total_points = 0;
};

// Scale of each loss term inside the backward objective. Training uses
// (1, lambda1, lambda2(i), lambda3); gradient checks isolate single terms.
struct LossScales {
  double rgb = 1, eikonal = 0.1, pointcloud = 0.5, normal = 0.1;
};

template <typename T>
struct ParamGrads {
  MlpGrads<T> sdf, radiance;
  T sharpness = T(0);
  std::vector<std::array<T, 9>> exposure_R;
  std::vector<std::array<T, 3>> exposure_t;

  void zero() {
    sdf.zero();
    radiance.zero();
    sharpness = T(0);
    for (auto& r : exposure_R) r.fill(T(0));
    for (auto& t : exposure_t) t.fill(T(0));
  }
  void add(const ParamGrads& o) {
    sdf.add_scaled(o.sdf, T(1));
    radiance.add_scaled(o.radiance, T(1));
    sharpness += o.sharpness;
    for (size_t k = 0; k < exposure_R.size(); ++k) {
      for (int i = 0; i < 9; ++i) exposure_R[k][i] += o.exposure_R[k][i];
      for (int i = 0; i < 3; ++i) exposure_t[k][i] += o.exposure_t[k][i];
    }
  }
};

template <typename T>
class Trainer {
 public:
  Trainer(const FieldConfig& field_cfg, const TrainConfig& cfg, const SceneData& scene)
      : cfg_(cfg), scene_(scene), field_(field_cfg) {
    if (scene.images.empty()) throw std::runtime_error("trainer: scene has no images");
    field_.sphere_init(cfg.seed);
    exposure_ = ExposureSet<T>::identity(static_cast<int>(scene.images.size()));
    exposure_.anchor = select_anchor(scene.images);
    exposure_.freeze_anchor();
    keypoints_ = filter_keypoints(scene.keypoints, cfg.min_cameras);
    keypoints_.build_projection_cache(scene.cameras, scene.width, scene.height);
    init_adam_state();
  }

  Field<T>& field() { return field_; }
  const Field<T>& field() const { return field_; }
  ExposureSet<T>& exposure() { return exposure_; }
  const TrainConfig& config() const { return cfg_; }
  int iteration() const { return iteration_; }
  const KeypointCloud& filtered_keypoints() const { return keypoints_; }

  double lr_at(int iter) const {
    if (iter < cfg_.warmup_iterations)
      return cfg_.lr * (iter + 1) / static_cast<double>(cfg_.warmup_iterations);
    double span = std::max(1, cfg_.iterations - cfg_.warmup_iterations);
    double progress = std::min(1.0, (iter - cfg_.warmup_iterations) / span);
    return cfg_.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * progress)));
  }

  StepMetrics step() {
    int iter = iteration_;
    FrozenBatch batch = assemble_batch(iter);
    double lambda2 = cfg_.weights.lambda2_at(iter);
    LossScales scales{1.0, cfg_.weights.lambda1, lambda2, cfg_.weights.lambda3};

    ParamGrads<T> grads = make_grads();
    LossParts parts = compute(batch, scales, &grads);

    StepMetrics m;
    m.iteration = iter;
    m.parts = parts;
    m.lambda2 = lambda2;
    m.lr = lr_at(iter);

    bool parts_finite = std::isfinite(parts.rgb) && std::isfinite(parts.eikonal) &&
                        std::isfinite(parts.pointcloud) && std::isfinite(parts.normal);
    if (!parts_finite || !grads_finite(grads)) {
      if (++nan_streak_ > cfg_.max_nan_skips)
        throw NumericError("aborting: " + std::to_string(nan_streak_) +
                           " consecutive non-finite steps (loss or gradient)");
      m.skipped_nan = true;
      m.total = std::numeric_limits<double>::quiet_NaN();
      ++iteration_;
      return m;
    }
    m.total = total_loss(parts, effective_weights(iter), iter);
    nan_streak_ = 0;
    adam_step(grads, m.lr);
    exposure_.reassert_anchor();
    ++iteration_;
    return m;
  }

  // Assembles a batch exactly as training would at `iteration`, without
  // advancing state. Used by tests and the finite-difference checks.
  FrozenBatch assemble_batch(int iteration) {
    field_.sync_transposed();
    Pcg32 rng(mix_seed(cfg_.seed, static_cast<uint64_t>(iteration)), 17);
    FrozenBatch batch;
    batch.image = static_cast<int>(rng.next_below(static_cast<uint32_t>(scene_.images.size())));
    const Camera& cam = scene_.cameras[batch.image];

    uint64_t ray_seed = mix_seed(cfg_.seed, static_cast<uint64_t>(iteration) * 2654435761ULL + 1);
    auto ray_rng = [&](size_t ordinal) { return Pcg32(mix_seed(ray_seed, ordinal), 23); };

    // main photometric rays
    for (int r = 0; r < cfg_.rays_per_batch; ++r) {
      int x = static_cast<int>(rng.next_below(scene_.width));
      int y = static_cast<int>(rng.next_below(scene_.height));
      auto ray = make_bounded_ray(cam.position(), cam.ray_dir(x + 0.5, y + 0.5), cfg_.scene_radius);
      if (!ray) continue;
      FrozenRay fr;
      fr.ray = *ray;
      fr.gt_color = scene_.images[batch.image].at(x, y);
      Pcg32 rr = ray_rng(batch.rays.size());
      sample_ray(fr, batch.image, x, y, rr);
      batch.rays.push_back(std::move(fr));
    }
    batch.n_main = static_cast<int>(batch.rays.size());

    // keypoint depth rays
    if (!cfg_.ablate_pointcloud && keypoints_.size() > 0) {
      auto kp_rays = keypoint_ray_batch(keypoints_, scene_.cameras, batch.image, cfg_.max_pc_rays,
                                        cfg_.scene_radius, rng);
      for (const auto& kr : kp_rays) {
        FrozenRay fr;
        fr.ray = kr.ray;
        fr.target_depth = kr.target_depth;
        auto proj = cam.project(keypoints_.points[kr.point_index]);
        int px = std::clamp(static_cast<int>(proj.px), 0, scene_.width - 1);
        int py = std::clamp(static_cast<int>(proj.py), 0, scene_.height - 1);
        Pcg32 rr = ray_rng(batch.rays.size());
        sample_ray(fr, batch.image, px, py, rr);
        batch.rays.push_back(std::move(fr));
      }
    }
    batch.n_keypoint = static_cast<int>(batch.rays.size()) - batch.n_main;

    // normal-regularization patches
    if (!cfg_.ablate_normal && cfg_.n_patches > 0) {
      auto specs =
          patch_rays(scene_.width, scene_.height, cfg_.n_patches, cfg_.patch_size, cfg_.dilation, rng);
      for (const auto& spec : specs) {
        FrozenPatch patch;
        patch.center = spec.center_index;
        std::vector<PatchPixel> pixels;
        for (const auto& [px, py] : spec.pixels) {
          auto ray =
              make_bounded_ray(cam.position(), cam.ray_dir(px + 0.5, py + 0.5), cfg_.scene_radius);
          FrozenRay fr;
          fr.ray = *ray;
          Pcg32 rr = ray_rng(batch.rays.size());
          sample_ray(fr, batch.image, px, py, rr);

          // no-grad pre-pass: surface point + validity for the bilateral
          // weights, which are frozen for the step
          PatchPixel pix;
          auto probe = probe_ray(fr);
          pix.valid = probe.valid;
          pix.point = fr.ray.at(probe.depth);
          auto img_color = scene_.images[batch.image].at(px, py);
          auto corrected = cfg_.ablate_exposure
                               ? img_color
                               : exposure_double().apply_inverse(batch.image, img_color);
          pix.lab = srgb_to_lab(corrected);
          pixels.push_back(pix);
          fr.depth_normal_valid = probe.valid;

          patch.rays.push_back(static_cast<int>(batch.rays.size()));
          batch.rays.push_back(std::move(fr));
        }
        patch.bilateral.resize(pixels.size());
        for (size_t j = 0; j < pixels.size(); ++j)
          patch.bilateral[j] =
              bilateral_weight(pixels[patch.center], pixels[j], cfg_.bilateral);
        batch.patches.push_back(std::move(patch));
        batch.n_patch_rays += static_cast<int>(pixels.size());
      }
    }

    for (const auto& r : batch.rays) batch.total_points += r.t.size();
    return batch;
  }

  // Loss parts of a frozen batch; when `sink` is non-null, parameter
  // gradients of (scales . parts) accumulate into it. This is the single
  // code path shared by training steps and the finite-difference oracle.
  LossParts compute(const FrozenBatch& batch, const LossScales& scales, ParamGrads<T>* sink) {
    field_.sync_transposed();
    size_t n_units = batch.n_main + batch.n_keypoint + batch.patches.size();
    int threads = std::max(1, cfg_.threads);
    size_t n_workers = std::min<size_t>(threads, std::max<size_t>(1, n_units));

    std::vector<WorkerCtx> ctx(n_workers);
    for (auto& c : ctx)
      if (sink) c.grads = make_grads();

    parallel_for(n_units, static_cast<int>(n_workers), [&](size_t b, size_t e, int w) {
      WorkerCtx& c = ctx[w];
      for (size_t u = b; u < e; ++u) {
        if (u < static_cast<size_t>(batch.n_main + batch.n_keypoint))
          process_ray(batch, batch.rays[u], scales, c, sink != nullptr);
        else
          process_patch(batch, batch.patches[u - batch.n_main - batch.n_keypoint], scales, c,
                        sink != nullptr);
      }
    });

    LossParts parts;
    for (auto& c : ctx) {
      parts.rgb += c.parts.rgb;
      parts.eikonal += c.parts.eikonal;
      parts.pointcloud += c.parts.pointcloud;
      parts.normal += c.parts.normal;
      if (sink) sink->add(c.grads);
    }
    return parts;
  }

  ParamGrads<T> make_grads() const {
    ParamGrads<T> g;
    g.sdf = field_.sdf_net().make_grads();
    g.radiance = field_.radiance_net().make_grads();
    g.exposure_R.resize(exposure_.size());
    g.exposure_t.resize(exposure_.size());
    g.zero();
    return g;
  }

  // Enumerates (parameter, gradient) tensor pairs in a fixed order.
  template <typename Fn>
  void for_each_tensor(ParamGrads<T>* g, Fn&& fn) {
    auto net = [&](const char* prefix, Mlp<T>& m, MlpGrads<T>* mg) {
      auto& layers = m.layers();
      for (size_t l = 0; l < layers.size(); ++l) {
        std::string base = std::string(prefix) + "/" + std::to_string(l);
        fn(base + "/weight", layers[l].W.data(), mg ? mg->W[l].data() : nullptr,
           layers[l].W.size(), 1.0, false);
        fn(base + "/bias", layers[l].b.data(), mg ? mg->b[l].data() : nullptr, layers[l].b.size(),
           1.0, false);
      }
    };
    net("sdf", field_.sdf_net(), g ? &g->sdf : nullptr);
    net("radiance", field_.radiance_net(), g ? &g->radiance : nullptr);
    fn("sharpness_raw", &field_.sharpness_raw(), g ? &g->sharpness : nullptr, size_t(1), 1.0,
       false);
    for (int k = 0; k < exposure_.size(); ++k) {
      bool frozen = cfg_.ablate_exposure || k == exposure_.anchor;
      fn("exposure/R/" + std::to_string(k), exposure_.R[k].data(),
         g ? g->exposure_R[k].data() : nullptr, size_t(9), cfg_.exposure_lr_mult, frozen);
      fn("exposure/t/" + std::to_string(k), exposure_.t[k].data(),
         g ? g->exposure_t[k].data() : nullptr, size_t(3), cfg_.exposure_lr_mult, frozen);
    }
  }

  void save_checkpoint(const std::string& path) {
    std::vector<TensorRecord> records = field_.to_tensors();
    for (int k = 0; k < exposure_.size(); ++k) {
      TensorRecord r;
      r.name = "exposure/R/" + std::to_string(k);
      r.dims = {3, 3};
      for (auto v : exposure_.R[k]) r.data.push_back(static_cast<float>(v));
      records.push_back(std::move(r));
      TensorRecord t;
      t.name = "exposure/t/" + std::to_string(k);
      t.dims = {3};
      for (auto v : exposure_.t[k]) t.data.push_back(static_cast<float>(v));
      records.push_back(std::move(t));
    }
    records.push_back({"exposure/anchor", {1}, {static_cast<float>(exposure_.anchor)}});
    records.push_back({"train/iteration", {1}, {static_cast<float>(iteration_)}});
    records.push_back({"adam/step", {1}, {static_cast<float>(adam_t_)}});
    size_t idx = 0;
    for_each_tensor(nullptr, [&](const std::string& name, T*, T*, size_t n, double, bool) {
      TensorRecord m{"adam/m/" + name, {static_cast<uint32_t>(n)}, {}};
      TensorRecord v{"adam/v/" + name, {static_cast<uint32_t>(n)}, {}};
      for (size_t i = 0; i < n; ++i) {
        m.data.push_back(static_cast<float>(adam_m_[idx][i]));
        v.data.push_back(static_cast<float>(adam_v_[idx][i]));
      }
      records.push_back(std::move(m));
      records.push_back(std::move(v));
      ++idx;
    });
    write_checkpoint(path, records);
  }

  void load_checkpoint(const std::string& path) {
    auto records = read_checkpoint(path);
    field_.from_tensors(records);
    for (int k = 0; k < exposure_.size(); ++k) {
      const TensorRecord* r = find_tensor(records, "exposure/R/" + std::to_string(k));
      const TensorRecord* t = find_tensor(records, "exposure/t/" + std::to_string(k));
      if (!r || !t) throw std::runtime_error(path + ": checkpoint is missing exposure tensors");
      for (int i = 0; i < 9; ++i) exposure_.R[k][i] = T(r->data[i]);
      for (int i = 0; i < 3; ++i) exposure_.t[k][i] = T(t->data[i]);
    }
    if (const TensorRecord* a = find_tensor(records, "exposure/anchor")) {
      exposure_.anchor = static_cast<int>(a->data[0]);
      exposure_.freeze_anchor();
    }
    if (const TensorRecord* it = find_tensor(records, "train/iteration"))
      iteration_ = static_cast<int>(it->data[0]);
    if (const TensorRecord* st = find_tensor(records, "adam/step"))
      adam_t_ = static_cast<int>(st->data[0]);
    size_t idx = 0;
    for_each_tensor(nullptr, [&](const std::string& name, T*, T*, size_t n, double, bool) {
      if (const TensorRecord* m = find_tensor(records, "adam/m/" + name))
        for (size_t i = 0; i < n && i < m->data.size(); ++i) adam_m_[idx][i] = T(m->data[i]);
      if (const TensorRecord* v = find_tensor(records, "adam/v/" + name))
        for (size_t i = 0; i < n && i < v->data.size(); ++i) adam_v_[idx][i] = T(v->data[i]);
      ++idx;
    });
  }

  LossWeights effective_weights(int) const { return cfg_.weights; }

 private:
  using V = Var<T>;

  struct WorkerCtx {
    Tape<T> tape;
    std::vector<MlpBatchWs<T>> sdf_bws;  // one per ray inside the tape scope
    MlpBatchWs<T> rad_bws;
    ParamGrads<T> grads;
    LossParts parts;
    std::vector<T> enc, enc_tan, rad_in, rad_dx, rad_dy;
    std::vector<T> dy_sdf, dty[3];
    std::vector<int> rad_section;  // section index of each packed radiance row
  };

  struct RayProbe {
    double depth = 0;
    bool valid = false;
  };

  const ExposureSet<double>& exposure_double() {
    exposure_cache_.R.resize(exposure_.R.size());
    exposure_cache_.t.resize(exposure_.t.size());
    for (size_t k = 0; k < exposure_.R.size(); ++k) {
      for (int i = 0; i < 9; ++i) exposure_cache_.R[k][i] = double(exposure_.R[k][i]);
      for (int i = 0; i < 3; ++i) exposure_cache_.t[k][i] = double(exposure_.t[k][i]);
    }
    exposure_cache_.anchor = exposure_.anchor;
    return exposure_cache_;
  }

  // coarse-to-fine + prior product + resampling for one ray
  void sample_ray(FrozenRay& fr, int image, int px, int py, Pcg32& rng) {
    auto ctf = coarse_to_fine(fr.ray, field_, cfg_.n_coarse, cfg_.n_rounds, cfg_.base_sharpness,
                              rng, cfg_.pdf_floor);
    DepthPrior prior;  // invalid by default
    if (!cfg_.ablate_depthmap && image >= 0 && image < static_cast<int>(scene_.maps.depth.size()))
      prior = lookup_prior(scene_.maps, image, px, py);
    RayPdf n = gaussian_pdf(prior, cfg_.sigma_min, ctf.pdf.knots);
    RayPdf g = product_pdf(ctf.pdf, n);
    fr.t = resample(g, fr.ray, cfg_.n_resample, rng);
  }

  // plain forward pass for frozen validity / surface point
  RayProbe probe_ray(const FrozenRay& fr) {
    size_t n = fr.t.size();
    std::vector<Vec3> pts(n);
    for (size_t i = 0; i < n; ++i) pts[i] = fr.ray.at(fr.t[i]);
    std::vector<double> fd(n);
    field_.sdf_batch(pts.data(), n, fd.data());
    std::vector<T> f(n);
    for (size_t i = 0; i < n; ++i) f[i] = T(fd[i]);
    auto sw = section_weights<T>(f, fr.t, field_.sharpness());
    auto dep = render_depth<T>(sw.weight, fr.t, sw.weight_sum, true);
    return {double(dep.depth), dep.valid};
  }

  // forward all samples of one ray on the tape; returns leaves
  struct RayVars {
    std::vector<V> f;
    std::vector<std::array<V, 3>> g;
    SectionWeights<V> sw;
  };

  RayVars forward_ray_geometry(const FrozenRay& fr, WorkerCtx& c, V sharpness, size_t ws_slot) {
    size_t n = fr.t.size();
    int in_dim = field_.sdf_input_dim();
    int out_dim = field_.sdf_net().output_dim();
    c.enc.resize(in_dim * n);
    c.enc_tan.resize(3 * in_dim * n);
    if (c.sdf_bws.size() <= ws_slot) c.sdf_bws.resize(ws_slot + 1);

    for (size_t i = 0; i < n; ++i) {
      Vec3 p = fr.ray.at(fr.t[i]);
      std::array<T*, 3> tan = {c.enc_tan.data() + (0 * n + i) * in_dim,
                               c.enc_tan.data() + (1 * n + i) * in_dim,
                               c.enc_tan.data() + (2 * n + i) * in_dim};
      encode_vector_with_tangents(p, field_.config().pos_frequencies,
                                  c.enc.data() + i * in_dim, tan);
    }
    const T* ctan[3] = {c.enc_tan.data(), c.enc_tan.data() + n * in_dim,
                        c.enc_tan.data() + 2 * n * in_dim};
    MlpBatchWs<T>& bws = c.sdf_bws[ws_slot];
    field_.sdf_net().forward_batch(c.enc.data(), ctan, 3, static_cast<int>(n), bws);

    RayVars rv;
    rv.f.reserve(n);
    rv.g.resize(n);
    for (size_t i = 0; i < n; ++i) {
      rv.f.push_back(V(c.tape, bws.h.back()[i * out_dim]));
      for (int k = 0; k < 3; ++k) rv.g[i][k] = V(c.tape, bws.th.back()[k][i * out_dim]);
    }
    rv.sw = section_weights<V>(std::span<const V>(rv.f.data(), n),
                               std::span<const double>(fr.t.data(), n), sharpness);
    return rv;
  }

  V eikonal_terms(const RayVars& rv, WorkerCtx& c) {
    V acc = rv.f[0] * T(0);
    for (size_t i = 0; i < rv.f.size(); ++i) {
      V ssq = rv.g[i][0] * rv.g[i][0] + rv.g[i][1] * rv.g[i][1] + rv.g[i][2] * rv.g[i][2];
      V d = scal::sqrt(ssq) - T(1);
      acc = acc + d * d;
    }
    return acc;
  }

  // backward through the SDF network for every sample of a ray, combining
  // tape adjoints with optional radiance-input adjoints (rad_dx must already
  // hold the batched radiance input gradients when rad_y_leaves is given)
  void backward_ray_geometry(const FrozenRay& fr, const RayVars& rv, WorkerCtx& c, size_t ws_slot,
                             const std::vector<std::array<int, 3>>* rad_y_leaves) {
    size_t n = fr.t.size();
    int out_dim = field_.sdf_net().output_dim();
    int rad_in_dim = field_.radiance_net().input_dim();
    c.dy_sdf.assign(n * out_dim, T(0));
    for (int k = 0; k < 3; ++k) c.dty[k].assign(n * out_dim, T(0));

    int normal_off = field_.normal_offset();
    int feature_off = field_.feature_offset();
    int fw = field_.config().feature_width;

    for (size_t i = 0; i < n; ++i) {
      c.dy_sdf[i * out_dim] = c.tape.grad(rv.f[i].idx);
      for (int k = 0; k < 3; ++k) c.dty[k][i * out_dim] = c.tape.grad(rv.g[i][k].idx);
    }
    if (rad_y_leaves) {
      // scatter the radiance input adjoints back onto normals and features
      for (size_t row = 0; row < c.rad_section.size(); ++row) {
        int i = c.rad_section[row];
        const T* dx = c.rad_dx.data() + row * rad_in_dim;
        for (int k = 0; k < 3; ++k) c.dty[k][i * out_dim] += dx[normal_off + k];
        T* dy = c.dy_sdf.data() + i * out_dim + 1;
        for (int j = 0; j < fw; ++j) dy[j] += dx[feature_off + j];
      }
    }

    const T* dty_ptr[3] = {c.dty[0].data(), c.dty[1].data(), c.dty[2].data()};
    field_.sdf_net().backward_batch(c.dy_sdf.data(), dty_ptr, 3, static_cast<int>(n),
                                    c.sdf_bws[ws_slot], c.grads.sdf);
  }

  void process_ray(const FrozenBatch& batch, const FrozenRay& fr, const LossScales& scales,
                   WorkerCtx& c, bool with_grads) {
    size_t n = fr.t.size();
    if (n < 2) return;
    c.tape.clear();
    V s_raw(c.tape, field_.sharpness_raw());
    V sharp = scal::exp(s_raw);

    RayVars rv = forward_ray_geometry(fr, c, sharp, 0);
    V eik = eikonal_terms(rv, c);
    double eik_scale = 1.0 / static_cast<double>(batch.total_points);
    c.parts.eikonal += double(eik.val()) * eik_scale;
    V obj = eik * T(scales.eikonal * eik_scale);

    std::vector<std::array<int, 3>> rad_y_leaves;
    bool is_main = fr.target_depth < 0;

    if (is_main && batch.n_main > 0) {
      // radiance at the first n-1 samples (sections take their left
      // endpoints), batched over the sections that carry opacity; a section
      // clamped to exactly zero contributes no color and no gradient
      int rad_in_dim = field_.radiance_net().input_dim();
      int sdf_out = field_.sdf_net().output_dim();
      c.rad_section.clear();
      // sections whose weight is below 1e-9 contribute (and receive) nothing
      // measurable; their radiance evaluation is skipped, and the FD oracle
      // recomputes through the identical rule
      for (size_t i = 0; i + 1 < n; ++i)
        if (std::fabs(double(rv.sw.weight[i].val())) > 1e-9)
          c.rad_section.push_back(static_cast<int>(i));
      c.rad_in.resize(c.rad_section.size() * rad_in_dim);
      std::vector<T> dir_enc(encoding_length(field_.config().dir_frequencies));
      encode_vector(fr.ray.dir, field_.config().dir_frequencies, dir_enc.data());
      const MlpBatchWs<T>& sdf_bws = c.sdf_bws[0];
      for (size_t row = 0; row < c.rad_section.size(); ++row) {
        int i = c.rad_section[row];
        Vec3 p = fr.ray.at(fr.t[i]);
        std::array<T, 3> normal = {rv.g[i][0].val(), rv.g[i][1].val(), rv.g[i][2].val()};
        const T* feature = sdf_bws.h.back().data() + static_cast<size_t>(i) * sdf_out + 1;
        field_.pack_radiance_input_preenc(p, dir_enc.data(), normal.data(), feature,
                                          c.rad_in.data() + row * rad_in_dim);
      }
      if (!c.rad_section.empty())
        field_.radiance_net().forward_batch(c.rad_in.data(), nullptr, 0,
                                            static_cast<int>(c.rad_section.size()), c.rad_bws);

      std::vector<std::array<V, 3>> colors(n - 1);
      rad_y_leaves.assign(n - 1, {-1, -1, -1});
      for (size_t i = 0; i + 1 < n; ++i)
        for (int ch = 0; ch < 3; ++ch) colors[i][ch] = rv.f[0] * T(0);
      for (size_t row = 0; row < c.rad_section.size(); ++row) {
        int i = c.rad_section[row];
        for (int ch = 0; ch < 3; ++ch) {
          V y(c.tape, c.rad_bws.h.back()[row * 3 + ch]);
          rad_y_leaves[i][ch] = y.idx;
          colors[i][ch] = scal::sigmoid(y);
        }
      }
      auto rendered = render_color<V>(std::span<const V>(rv.sw.weight),
                                      std::span<const std::array<V, 3>>(colors));

      std::array<V, 3> comp = rendered;
      int exp_R_leaf = -1, exp_t_leaf = -1;
      if (!cfg_.ablate_exposure && batch.image >= 0) {
        std::array<V, 9> Rv;
        std::array<V, 3> tv;
        for (int i = 0; i < 9; ++i) Rv[i] = V(c.tape, exposure_.R[batch.image][i]);
        for (int i = 0; i < 3; ++i) tv[i] = V(c.tape, exposure_.t[batch.image][i]);
        exp_R_leaf = Rv[0].idx;
        exp_t_leaf = tv[0].idx;
        for (int r = 0; r < 3; ++r)
          comp[r] = Rv[r * 3] * rendered[0] + Rv[r * 3 + 1] * rendered[1] +
                    Rv[r * 3 + 2] * rendered[2] + tv[r];
      }
      V lrgb = scal::abs(comp[0] - T(fr.gt_color[0])) + scal::abs(comp[1] - T(fr.gt_color[1])) +
               scal::abs(comp[2] - T(fr.gt_color[2]));
      double rgb_scale = 1.0 / batch.n_main;
      c.parts.rgb += double(lrgb.val()) * rgb_scale;
      obj = obj + lrgb * T(scales.rgb * rgb_scale);

      if (with_grads) {
        c.tape.backward(obj.idx);
        c.grads.sharpness += c.tape.grad(s_raw.idx);
        if (exp_R_leaf >= 0) {
          for (int i = 0; i < 9; ++i)
            c.grads.exposure_R[batch.image][i] += c.tape.grad(exp_R_leaf + i);
          for (int i = 0; i < 3; ++i)
            c.grads.exposure_t[batch.image][i] += c.tape.grad(exp_t_leaf + i);
        }
        // batched radiance backward first; its input adjoints feed the SDF
        // backward below
        int rad_in_dim = field_.radiance_net().input_dim();
        c.rad_dx.assign(c.rad_section.size() * rad_in_dim, T(0));
        if (!c.rad_section.empty()) {
          c.rad_dy.resize(c.rad_section.size() * 3);
          for (size_t row = 0; row < c.rad_section.size(); ++row) {
            int i = c.rad_section[row];
            for (int ch = 0; ch < 3; ++ch)
              c.rad_dy[row * 3 + ch] = c.tape.grad(rad_y_leaves[i][ch]);
          }
          field_.radiance_net().backward_batch(c.rad_dy.data(), nullptr, 0,
                                               static_cast<int>(c.rad_section.size()), c.rad_bws,
                                               c.grads.radiance, c.rad_dx.data());
        }
        backward_ray_geometry(fr, rv, c, 0, &rad_y_leaves);
      }
      return;
    }

    // keypoint depth ray
    if (fr.target_depth >= 0 && batch.n_keypoint > 0) {
      auto dep = render_depth<V>(std::span<const V>(rv.sw.weight),
                                 std::span<const double>(fr.t.data(), n), rv.sw.weight_sum, true);
      if (dep.valid) {
        V diff = dep.depth - T(fr.target_depth);
        V lpc = diff * diff;
        double pc_scale = 1.0 / batch.n_keypoint;
        c.parts.pointcloud += double(lpc.val()) * pc_scale;
        obj = obj + lpc * T(scales.pointcloud * pc_scale);
      }
    }
    if (with_grads) {
      c.tape.backward(obj.idx);
      c.grads.sharpness += c.tape.grad(s_raw.idx);
      backward_ray_geometry(fr, rv, c, 0, nullptr);
    }
  }

  void process_patch(const FrozenBatch& batch, const FrozenPatch& patch, const LossScales& scales,
                     WorkerCtx& c, bool with_grads) {
    size_t n_rays = patch.rays.size();
    c.tape.clear();
    V s_raw(c.tape, field_.sharpness_raw());
    V sharp = scal::exp(s_raw);

    std::vector<RayVars> rvs;
    rvs.reserve(n_rays);
    std::vector<std::array<V, 3>> normals(n_rays);
    V eik = s_raw * T(0);
    for (size_t r = 0; r < n_rays; ++r) {
      const FrozenRay& fr = batch.rays[patch.rays[r]];
      rvs.push_back(forward_ray_geometry(fr, c, sharp, r));
      RayVars& rv = rvs.back();
      eik = eik + eikonal_terms(rv, c);
      auto num = render_normal<V>(std::span<const V>(rv.sw.weight),
                                  std::span<const std::array<V, 3>>(rv.g.data(), fr.t.size() - 1));
      if (fr.depth_normal_valid) {
        for (int k = 0; k < 3; ++k) normals[r][k] = num[k] / rv.sw.weight_sum;
      } else {
        normals[r] = num;
      }
    }

    double eik_scale = 1.0 / static_cast<double>(batch.total_points);
    c.parts.eikonal += double(eik.val()) * eik_scale;
    V obj = eik * T(scales.eikonal * eik_scale);

    V patch_term = normal_consistency_patch<V>(
        std::span<const std::array<V, 3>>(normals), patch.center,
        std::span<const double>(patch.bilateral));
    double norm_scale = batch.n_patch_rays > 0 ? 1.0 / batch.n_patch_rays : 0.0;
    c.parts.normal += double(patch_term.val()) * norm_scale;
    obj = obj + patch_term * T(scales.normal * norm_scale);

    if (with_grads) {
      c.tape.backward(obj.idx);
      c.grads.sharpness += c.tape.grad(s_raw.idx);
      for (size_t r = 0; r < n_rays; ++r)
        backward_ray_geometry(batch.rays[patch.rays[r]], rvs[r], c, r, nullptr);
    }
  }

  bool grads_finite(ParamGrads<T>& g) {
    bool ok = true;
    for_each_tensor(&g, [&](const std::string&, T*, T* grad, size_t n, double, bool) {
      for (size_t i = 0; i < n; ++i)
        if (!std::isfinite(double(grad[i]))) ok = false;
    });
    return ok;
  }

  void init_adam_state() {
    adam_m_.clear();
    adam_v_.clear();
    for_each_tensor(nullptr, [&](const std::string&, T*, T*, size_t n, double, bool) {
      adam_m_.emplace_back(n, T(0));
      adam_v_.emplace_back(n, T(0));
    });
  }

  void adam_step(ParamGrads<T>& g, double lr) {
    ++adam_t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, adam_t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, adam_t_);
    size_t idx = 0;
    for_each_tensor(&g, [&](const std::string&, T* p, T* grad, size_t n, double lr_mult,
                            bool frozen) {
      auto& m = adam_m_[idx];
      auto& v = adam_v_[idx];
      ++idx;
      if (frozen) return;
      T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
      T step = T(lr * lr_mult);
      for (size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
        v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
        T mhat = m[i] / T(bc1);
        T vhat = v[i] / T(bc2);
        p[i] -= step * mhat / (std::sqrt(vhat) + T(cfg_.adam_eps));
      }
    });
  }

  TrainConfig cfg_;
  const SceneData& scene_;
  Field<T> field_;
  ExposureSet<T> exposure_;
  ExposureSet<double> exposure_cache_;
  KeypointCloud keypoints_;
  int iteration_ = 0;
  int adam_t_ = 0;
  int nan_streak_ = 0;
  std::vector<std::vector<T>> adam_m_, adam_v_;
};

}  // namespace mpsf
