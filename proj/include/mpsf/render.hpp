#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "mpsf/geometry.hpp"
#include "mpsf/tape.hpp"

namespace mpsf {

// n samples yield n-1 sections; alpha/weight are per section,
// transmittance[i] is the survival probability entering section i
// (transmittance[0] == 1).
template <class S>
struct SectionWeights {
  std::vector<S> alpha;
  std::vector<S> weight;
  std::vector<S> transmittance;
  S weight_sum;
};

// Discrete SDF-to-opacity conversion: alpha_i = max(1 - Phi(f_{i+1})/Phi(f_i), 0)
// with Phi the logistic CDF at the given sharpness. Evaluated through
// log-space softplus so extreme sharpness values stay finite in both tails.
// Works on plain scalars and on tape variables.
template <class S>
SectionWeights<S> section_weights(std::span<const S> sdf_vals, std::span<const double> t,
                                  S sharpness) {
  using U = scalar_of_t<S>;
  size_t n = t.size();
  if (n < 2 || sdf_vals.size() != n)
    throw std::invalid_argument("section_weights: need >= 2 aligned samples");
  for (size_t i = 1; i < n; ++i)
    if (!(t[i] > t[i - 1])) throw std::invalid_argument("section_weights: t must be ascending");

  SectionWeights<S> out;
  out.alpha.reserve(n - 1);
  out.weight.reserve(n - 1);
  out.transmittance.reserve(n - 1);

  std::vector<S> u;  // u_i = -log Phi_s(f_i) = softplus(-s f_i)
  u.reserve(n);
  for (size_t i = 0; i < n; ++i) u.push_back(scal::softplus(-(sharpness * sdf_vals[i])));

  S trans = u[0] * U(0) + U(1);  // transmittance enters section 0 at exactly 1
  S wsum = u[0] * U(0);
  for (size_t i = 0; i + 1 < n; ++i) {
    S alpha = scal::max0(U(1) - scal::exp(u[i] - u[i + 1]));
    S w = trans * alpha;
    out.alpha.push_back(alpha);
    out.weight.push_back(w);
    out.transmittance.push_back(trans);
    wsum = wsum + w;
    trans = trans * (U(1) - alpha);
  }
  out.weight_sum = wsum;
  return out;
}

template <class S>
std::array<S, 3> render_color(std::span<const S> weights, std::span<const std::array<S, 3>> colors) {
  using U = scalar_of_t<S>;
  std::array<S, 3> out = {weights[0] * U(0), weights[0] * U(0), weights[0] * U(0)};
  for (size_t i = 0; i < weights.size(); ++i)
    for (int c = 0; c < 3; ++c) out[c] = out[c] + weights[i] * colors[i][c];
  return out;
}

template <class S>
struct DepthResult {
  S depth;
  bool valid = true;
};

inline constexpr double kMinWeightMass = 1e-4;

// Quadrature depth: sum(w_i t_i), optionally divided by the weight mass.
// Under normalization, rays with mass below kMinWeightMass carry no reliable
// depth and are flagged invalid.
template <class S>
DepthResult<S> render_depth(std::span<const S> weights, std::span<const double> t, S weight_sum,
                            bool normalize) {
  using U = scalar_of_t<S>;
  S acc = weights[0] * U(0);
  for (size_t i = 0; i < weights.size(); ++i) acc = acc + weights[i] * U(t[i]);
  if (!normalize) return {acc, true};
  if (!(scal::value_of(weight_sum) > kMinWeightMass)) return {acc, false};
  return {acc / weight_sum, true};
}

// Quadrature normal: sum(w_i grad_i). Not normalized to unit length here.
template <class S>
std::array<S, 3> render_normal(std::span<const S> weights,
                               std::span<const std::array<S, 3>> gradients) {
  using U = scalar_of_t<S>;
  std::array<S, 3> out = {weights[0] * U(0), weights[0] * U(0), weights[0] * U(0)};
  for (size_t i = 0; i < weights.size(); ++i)
    for (int k = 0; k < 3; ++k) out[k] = out[k] + weights[i] * gradients[i][k];
  return out;
}

}  // namespace mpsf
