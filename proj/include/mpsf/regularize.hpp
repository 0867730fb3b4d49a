#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mpsf/geometry.hpp"
#include "mpsf/rng.hpp"
#include "mpsf/tape.hpp"

namespace mpsf {

// sRGB (D65) -> CIE Lab. Inputs are clamped to [0,1] first.
inline std::array<double, 3> srgb_to_lab(const std::array<double, 3>& rgb) {
  auto linearize = [](double c) {
    c = std::fmin(1.0, std::fmax(0.0, c));
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
  };
  double r = linearize(rgb[0]), g = linearize(rgb[1]), b = linearize(rgb[2]);
  double X = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  double Y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  double Z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  constexpr double Xn = 0.4124564 + 0.3575761 + 0.1804375;
  constexpr double Yn = 0.2126729 + 0.7151522 + 0.0721750;
  constexpr double Zn = 0.0193339 + 0.1191920 + 0.9503041;
  auto f = [](double t) {
    constexpr double delta = 6.0 / 29.0;
    return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
  };
  double fx = f(X / Xn), fy = f(Y / Yn), fz = f(Z / Zn);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

struct BilateralParams {
  double sigma_c = 3.0;   // Lab units
  double sigma_d = 0.03;  // scene units
};

// One pixel of a patch as seen by the bilateral kernel: exposure-corrected
// Lab color and the rendered 3D surface point. `valid` is false when the
// ray's weight mass was below the renderer's floor.
struct PatchPixel {
  std::array<double, 3> lab{};
  Vec3 point{};
  bool valid = false;
};

// Unnormalized Gaussian affinity in color and in 3D position (peak 1).
// Pairs involving an invalid-depth pixel get zero weight.
inline double bilateral_weight(const PatchPixel& center, const PatchPixel& neighbor,
                               const BilateralParams& params) {
  if (!center.valid || !neighbor.valid) return 0.0;
  double dc = 0;
  for (int c = 0; c < 3; ++c) {
    double d = center.lab[c] - neighbor.lab[c];
    dc += d * d;
  }
  Vec3 dp = center.point - neighbor.point;
  double dd = dot(dp, dp);
  return std::exp(-dc / (2.0 * params.sigma_c * params.sigma_c)) *
         std::exp(-dd / (2.0 * params.sigma_d * params.sigma_d));
}

// Pixel layout of one dilated k x k patch (row-major offsets, center in the
// middle). Coordinates are integer pixels.
struct PatchSpec {
  std::vector<std::pair<int, int>> pixels;
  int center_index = 0;
};

// n_patches random patch placements with dilation delta; every pixel of the
// dilated footprint lies inside the image.
inline std::vector<PatchSpec> patch_rays(int width, int height, int n_patches, int k, int delta,
                                         Pcg32& rng) {
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("patch_rays: patch size must be odd");
  int margin = delta * (k - 1) / 2;
  if (width <= 2 * margin || height <= 2 * margin)
    throw std::invalid_argument("patch_rays: image smaller than dilated patch");
  std::vector<PatchSpec> patches;
  patches.reserve(n_patches);
  for (int p = 0; p < n_patches; ++p) {
    int cx = margin + static_cast<int>(rng.next_below(width - 2 * margin));
    int cy = margin + static_cast<int>(rng.next_below(height - 2 * margin));
    PatchSpec spec;
    for (int dy = -(k - 1) / 2; dy <= (k - 1) / 2; ++dy)
      for (int dx = -(k - 1) / 2; dx <= (k - 1) / 2; ++dx)
        spec.pixels.emplace_back(cx + dx * delta, cy + dy * delta);
    spec.center_index = (k * k) / 2;
    patches.push_back(std::move(spec));
  }
  return patches;
}

// Inner sum of the normal-consistency loss for one patch:
//   sum_{r != center} ||N_r - N_center||_2 * w_b(r).
// The caller divides by the total ray count m. Identical normals contribute
// exactly zero (the norm's subgradient at the origin is taken as 0).
template <class S>
S normal_consistency_patch(std::span<const std::array<S, 3>> normals, int center_index,
                           std::span<const double> bilateral) {
  using U = scalar_of_t<S>;
  S acc = normals[0][0] * U(0);
  for (size_t r = 0; r < normals.size(); ++r) {
    if (static_cast<int>(r) == center_index) continue;
    if (bilateral[r] == 0.0) continue;
    S ssq = acc * U(0);
    for (int k = 0; k < 3; ++k) {
      S d = normals[r][k] - normals[center_index][k];
      ssq = ssq + d * d;
    }
    if (scal::value_of(ssq) <= U(1e-24)) continue;
    acc = acc + scal::sqrt(ssq) * U(bilateral[r]);
  }
  return acc;
}

}  // namespace mpsf
