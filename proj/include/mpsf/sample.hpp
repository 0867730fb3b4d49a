#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mpsf/geometry.hpp"
#include "mpsf/render.hpp"
#include "mpsf/rng.hpp"

namespace mpsf {

// Piecewise-linear PDF along a ray: density values at ascending knots,
// trapezoid-normalized to unit mass, with the running CDF for inverse
// transform sampling. A PDF flagged uniform carries no information and acts
// as the identity element of product_pdf.
struct RayPdf {
  std::vector<double> knots;
  std::vector<double> density;
  std::vector<double> cdf;
  bool is_uniform = false;

  static RayPdf uniform(double a, double b, int n_knots = 2) {
    RayPdf p;
    p.is_uniform = true;
    p.knots.resize(n_knots);
    double d = 1.0 / (b - a);
    for (int i = 0; i < n_knots; ++i) p.knots[i] = a + (b - a) * i / (n_knots - 1);
    p.density.assign(n_knots, d);
    p.rebuild_cdf();
    return p;
  }

  double total_mass_unnormalized() const {
    double m = 0;
    for (size_t i = 0; i + 1 < knots.size(); ++i)
      m += 0.5 * (density[i] + density[i + 1]) * (knots[i + 1] - knots[i]);
    return m;
  }

  // Normalizes to unit mass; degenerate (≈zero) mass falls back to the
  // uniform PDF over the same span so sampling never collapses.
  void normalize() {
    double m = total_mass_unnormalized();
    if (!(m > 1e-300)) {
      double a = knots.front(), b = knots.back();
      double d = 1.0 / (b - a);
      std::fill(density.begin(), density.end(), d);
      is_uniform = true;
    } else {
      for (auto& d : density) d /= m;
    }
    rebuild_cdf();
  }

  void rebuild_cdf() {
    cdf.resize(knots.size());
    cdf[0] = 0.0;
    for (size_t i = 1; i < knots.size(); ++i)
      cdf[i] = cdf[i - 1] + 0.5 * (density[i - 1] + density[i]) * (knots[i] - knots[i - 1]);
  }

  // Linear interpolation of the density; zero outside the knot span.
  double value(double x) const {
    if (x < knots.front() || x > knots.back()) return 0.0;
    auto it = std::upper_bound(knots.begin(), knots.end(), x);
    size_t hi = std::min<size_t>(knots.size() - 1, it - knots.begin());
    if (hi == 0) return density[0];
    size_t lo = hi - 1;
    double h = knots[hi] - knots[lo];
    if (h <= 0) return density[lo];
    double w = (x - knots[lo]) / h;
    return density[lo] * (1.0 - w) + density[hi] * w;
  }

  // Inverse-CDF draw for u in [0,1): exact per-segment quadratic inversion
  // of the trapezoid CDF.
  double sample(double u) const {
    double target = u * cdf.back();
    auto it = std::lower_bound(cdf.begin(), cdf.end(), target);
    size_t hi = std::min<size_t>(cdf.size() - 1, std::max<size_t>(1, it - cdf.begin()));
    size_t lo = hi - 1;
    double tau = target - cdf[lo];
    double h = knots[hi] - knots[lo];
    double d0 = density[lo], d1 = density[hi];
    if (h <= 0) return knots[lo];
    double a = (d1 - d0) / (2.0 * h);
    double s;
    if (std::fabs(a) < 1e-14) {
      s = d0 > 0 ? tau / d0 : 0.0;
    } else {
      double disc = d0 * d0 + 4.0 * a * tau;
      s = (-d0 + std::sqrt(std::max(0.0, disc))) / (2.0 * a);
    }
    return knots[lo] + std::clamp(s, 0.0, h);
  }
};

// Dense depth prior at one pixel: depth d, confidence mu in [0,1].
struct DepthPrior {
  double d = 0.0;
  double mu = 0.0;
  bool valid = false;
};

// Gaussian prior PDF n(x) = Normal(d, sigma) with sigma = 0.5 (1 - mu),
// clamped below by sigma_min. Evaluated on the ray's knot grid, refined
// around d so narrow priors are resolved by the piecewise-linear density.
// An invalid prior yields the information-free uniform PDF on `grid`.
inline RayPdf gaussian_pdf(const DepthPrior& prior, double sigma_min,
                           const std::vector<double>& grid) {
  double a = grid.front(), b = grid.back();
  if (!prior.valid) return RayPdf::uniform(a, b, static_cast<int>(grid.size()));

  double sigma = std::max(0.5 * (1.0 - prior.mu), sigma_min);
  RayPdf p;
  p.knots = grid;
  double lo = std::max(a, prior.d - 5.0 * sigma);
  double hi = std::min(b, prior.d + 5.0 * sigma);
  if (hi > lo) {
    const int refine = 33;
    for (int i = 0; i < refine; ++i) p.knots.push_back(lo + (hi - lo) * i / (refine - 1));
    std::sort(p.knots.begin(), p.knots.end());
    p.knots.erase(std::unique(p.knots.begin(), p.knots.end()), p.knots.end());
  }
  p.density.resize(p.knots.size());
  double inv = 1.0 / (sigma * std::sqrt(2.0 * M_PI));
  for (size_t i = 0; i < p.knots.size(); ++i) {
    double z = (p.knots[i] - prior.d) / sigma;
    p.density[i] = inv * std::exp(-0.5 * z * z);
  }
  p.normalize();
  p.is_uniform = false;
  return p;
}

// g(x) = h(x) n(x), renormalized. Uniform factors are identity elements;
// if the pointwise product carries (almost) no mass the prior wins, since a
// confident prior over an immature surface estimate is the informative side.
inline RayPdf product_pdf(const RayPdf& h, const RayPdf& n) {
  // inputs are unit-mass PDFs, so a uniform factor drops out exactly
  if (n.is_uniform) return h;
  if (h.is_uniform) return n;
  RayPdf g;
  g.knots.reserve(h.knots.size() + n.knots.size());
  std::merge(h.knots.begin(), h.knots.end(), n.knots.begin(), n.knots.end(),
             std::back_inserter(g.knots));
  g.knots.erase(std::unique(g.knots.begin(), g.knots.end()), g.knots.end());
  g.density.resize(g.knots.size());
  for (size_t i = 0; i < g.knots.size(); ++i) g.density[i] = h.value(g.knots[i]) * n.value(g.knots[i]);
  if (!(g.total_mass_unnormalized() > 1e-12)) {
    g = n;
    g.normalize();
    return g;
  }
  g.normalize();
  return g;
}

namespace detail {

// Enforce strictly ascending samples inside [lo, hi] with 1e-9 nudges.
inline void make_strictly_ascending(std::vector<double>& t, double lo, double hi) {
  std::sort(t.begin(), t.end());
  for (auto& x : t) x = std::clamp(x, lo, hi);
  for (size_t i = 1; i < t.size(); ++i)
    if (t[i] <= t[i - 1]) t[i] = t[i - 1] + 1e-9;
  if (t.back() > hi) {
    t.back() = hi;
    for (size_t i = t.size() - 1; i-- > 0;)
      if (t[i] >= t[i + 1]) t[i] = t[i + 1] - 1e-9;
  }
}

// Piecewise-linear PDF over `points` from per-section weights: interior
// knots average the two adjacent sections.
inline RayPdf pdf_from_section_weights(const std::vector<double>& points,
                                       const std::vector<double>& w, double floor_fraction) {
  RayPdf pdf;
  pdf.knots = points;
  size_t n = points.size();
  pdf.density.resize(n);
  pdf.density[0] = w.empty() ? 0.0 : w.front();
  pdf.density[n - 1] = w.empty() ? 0.0 : w.back();
  for (size_t i = 1; i + 1 < n; ++i) pdf.density[i] = 0.5 * (w[i - 1] + w[i]);
  double dmax = *std::max_element(pdf.density.begin(), pdf.density.end());
  if (dmax > 0 && floor_fraction > 0) {
    double floor = floor_fraction * dmax;
    for (auto& d : pdf.density) d = std::max(d, floor);
  }
  pdf.normalize();
  return pdf;
}

}  // namespace detail

struct CoarseToFineResult {
  std::vector<double> points;
  RayPdf pdf;  // h(x): surface-location PDF over the final samples
};

// NeuS-style coarse-to-fine placement: a stratified uniform round followed
// by importance rounds at doubling sharpness. The returned PDF h(x)
// interpolates the final section weights; densities below
// floor_fraction * max are clamped up so a later prior product cannot be
// vetoed entirely by an immature h. Zero-signal rays fall back to uniform.
template <class FieldT>
CoarseToFineResult coarse_to_fine(const Ray& ray, const FieldT& field, int n_total, int n_rounds,
                                  double base_sharpness, Pcg32& rng, double floor_fraction = 1e-4) {
  if (ray.t_far - ray.t_near < 1e-6)
    throw std::invalid_argument("coarse_to_fine: degenerate ROI");
  if (n_total < 8 || n_rounds < 1 || n_total % n_rounds != 0)
    throw std::invalid_argument("coarse_to_fine: n_total must be >= 8 and divisible into rounds");

  int per_round = n_total / n_rounds;
  std::vector<double> points, sdf_vals;
  points.reserve(n_total);
  sdf_vals.reserve(n_total);
  for (int j = 0; j < per_round; ++j) {
    double u = (j + rng.uniform()) / per_round;
    points.push_back(ray.t_near + u * (ray.t_far - ray.t_near));
  }
  detail::make_strictly_ascending(points, ray.t_near, ray.t_far);

  auto eval_many = [&](const std::vector<double>& ts, std::vector<double>& out) {
    out.resize(ts.size());
    if constexpr (requires(const FieldT& f, const Vec3* p, size_t n, double* o) {
                    f.sdf_batch(p, n, o);
                  }) {
      std::vector<Vec3> pts(ts.size());
      for (size_t i = 0; i < ts.size(); ++i) pts[i] = ray.at(ts[i]);
      field.sdf_batch(pts.data(), pts.size(), out.data());
    } else {
      for (size_t i = 0; i < ts.size(); ++i) out[i] = double(field.sdf(ray.at(ts[i])));
    }
  };
  eval_many(points, sdf_vals);

  // SDF values are cached across rounds; each round evaluates only its new
  // points and merges them in
  double sharp = base_sharpness;
  for (int round = 1; round < n_rounds; ++round) {
    auto sw = section_weights<double>(sdf_vals, points, sharp);
    RayPdf round_pdf = detail::pdf_from_section_weights(points, sw.weight, 0.0);
    std::vector<double> fresh;
    fresh.reserve(per_round);
    for (int j = 0; j < per_round; ++j) {
      double u = (j + rng.uniform()) / per_round;
      fresh.push_back(round_pdf.sample(u));
    }
    std::sort(fresh.begin(), fresh.end());
    std::vector<double> fresh_vals;
    eval_many(fresh, fresh_vals);
    std::vector<double> merged_t, merged_f;
    merged_t.reserve(points.size() + fresh.size());
    merged_f.reserve(points.size() + fresh.size());
    size_t a = 0, b = 0;
    while (a < points.size() || b < fresh.size()) {
      bool take_old = b >= fresh.size() || (a < points.size() && points[a] <= fresh[b]);
      if (take_old) {
        merged_t.push_back(points[a]);
        merged_f.push_back(sdf_vals[a]);
        ++a;
      } else {
        merged_t.push_back(fresh[b]);
        merged_f.push_back(fresh_vals[b]);
        ++b;
      }
    }
    // strictness nudges move points by 1e-9 at most; the cached values stay
    double prev = -1e300;
    for (size_t i = 0; i < merged_t.size(); ++i) {
      double t = std::clamp(merged_t[i], ray.t_near, ray.t_far);
      if (t <= prev) t = prev + 1e-9;
      merged_t[i] = t;
      prev = t;
    }
    if (merged_t.back() > ray.t_far) {
      merged_t.back() = ray.t_far;
      for (size_t i = merged_t.size() - 1; i-- > 0;)
        if (merged_t[i] >= merged_t[i + 1]) merged_t[i] = merged_t[i + 1] - 1e-9;
    }
    points = std::move(merged_t);
    sdf_vals = std::move(merged_f);
    sharp *= 2.0;
  }

  auto sw = section_weights<double>(sdf_vals, points, sharp);
  CoarseToFineResult out;
  out.pdf = detail::pdf_from_section_weights(points, sw.weight, floor_fraction);
  out.points = std::move(points);
  return out;
}

// Final quadrature points: n_new/2 stratified inverse-CDF draws from g plus
// n_new/2 evenly spaced points covering the whole ROI, merged ascending.
inline std::vector<double> resample(const RayPdf& g, const Ray& ray, int n_new, Pcg32& rng) {
  if (n_new % 2 != 0) throw std::invalid_argument("resample: n_new must be even");
  int half = n_new / 2;
  std::vector<double> t;
  t.reserve(n_new);
  for (int j = 0; j < half; ++j) {
    double u = (j + rng.uniform()) / half;
    t.push_back(g.sample(u));
  }
  double range = ray.t_far - ray.t_near;
  for (int j = 0; j < half; ++j) t.push_back(ray.t_near + (j + 0.5) * range / half);
  detail::make_strictly_ascending(t, ray.t_near, ray.t_far);
  return t;
}

}  // namespace mpsf
