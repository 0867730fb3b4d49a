#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mpsf/image.hpp"

namespace mpsf {

// Per-image affine color compensation A_k = [R_k | t_k] applied to rendered
// colors before the photometric comparison. The anchor image stays pinned to
// the identity so it fixes the color gauge of the whole scene.
template <typename T>
struct ExposureSet {
  std::vector<std::array<T, 9>> R;  // row-major 3x3 per image
  std::vector<std::array<T, 3>> t;
  int anchor = -1;
  bool anchor_frozen = false;

  static ExposureSet identity(int n_images) {
    ExposureSet s;
    s.R.resize(n_images);
    s.t.resize(n_images);
    for (int k = 0; k < n_images; ++k) {
      s.R[k] = {T(1), T(0), T(0), T(0), T(1), T(0), T(0), T(0), T(1)};
      s.t[k] = {T(0), T(0), T(0)};
    }
    return s;
  }

  int size() const { return static_cast<int>(R.size()); }

  void check_image(int k) const {
    if (k < 0 || k >= size()) throw std::out_of_range("exposure: unknown image id");
  }

  std::array<double, 3> apply(int k, const std::array<double, 3>& c) const {
    check_image(k);
    const auto& m = R[k];
    const auto& b = t[k];
    std::array<double, 3> out;
    for (int r = 0; r < 3; ++r)
      out[r] = double(m[r * 3 + 0]) * c[0] + double(m[r * 3 + 1]) * c[1] +
               double(m[r * 3 + 2]) * c[2] + double(b[r]);
    return out;
  }

  // Maps an acquired image color back into the anchor color space
  // (inverse affine). Falls back to the raw color if R_k is singular.
  std::array<double, 3> apply_inverse(int k, const std::array<double, 3>& c) const {
    check_image(k);
    const auto& m = R[k];
    double a[9];
    for (int i = 0; i < 9; ++i) a[i] = double(m[i]);
    double det = a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
                 a[2] * (a[3] * a[7] - a[4] * a[6]);
    if (std::fabs(det) < 1e-9) return c;
    double inv[9] = {(a[4] * a[8] - a[5] * a[7]) / det, (a[2] * a[7] - a[1] * a[8]) / det,
                     (a[1] * a[5] - a[2] * a[4]) / det, (a[5] * a[6] - a[3] * a[8]) / det,
                     (a[0] * a[8] - a[2] * a[6]) / det, (a[2] * a[3] - a[0] * a[5]) / det,
                     (a[3] * a[7] - a[4] * a[6]) / det, (a[1] * a[6] - a[0] * a[7]) / det,
                     (a[0] * a[4] - a[1] * a[3]) / det};
    std::array<double, 3> d = {c[0] - double(t[k][0]), c[1] - double(t[k][1]),
                               c[2] - double(t[k][2])};
    return {inv[0] * d[0] + inv[1] * d[1] + inv[2] * d[2],
            inv[3] * d[0] + inv[4] * d[1] + inv[5] * d[2],
            inv[6] * d[0] + inv[7] * d[1] + inv[8] * d[2]};
  }

  void freeze_anchor() {
    if (anchor < 0) throw std::logic_error("exposure: no anchor selected");
    anchor_frozen = true;
    reassert_anchor();
  }

  // Anchor parameters are pinned to (I, 0); called after every optimizer
  // step in addition to masking its gradients.
  void reassert_anchor() {
    if (anchor < 0) return;
    R[anchor] = {T(1), T(0), T(0), T(0), T(1), T(0), T(0), T(0), T(1)};
    t[anchor] = {T(0), T(0), T(0)};
  }
};

// Shannon entropy of the 64-bin Rec.709 luminance histogram.
inline double histogram_entropy(const Image& img) {
  constexpr int kBins = 64;
  std::array<double, kBins> hist{};
  size_t n = static_cast<size_t>(img.width) * img.height;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double lum = luminance709(img.at(x, y));
      int bin = std::min(kBins - 1, std::max(0, static_cast<int>(lum * kBins)));
      hist[bin] += 1.0;
    }
  double entropy = 0.0;
  for (double c : hist) {
    if (c <= 0) continue;
    double p = c / static_cast<double>(n);
    entropy -= p * std::log(p);
  }
  return entropy;
}

// The anchor is the image with the most uniform (maximum-entropy) luminance
// histogram; ties break to the lowest index.
inline int select_anchor(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("select_anchor: empty image set");
  int best = 0;
  double best_entropy = histogram_entropy(images[0]);
  for (size_t k = 1; k < images.size(); ++k) {
    double e = histogram_entropy(images[k]);
    if (e > best_entropy) {
      best_entropy = e;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace mpsf
