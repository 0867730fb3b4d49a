#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mpsf/fastmath.hpp"
#include "mpsf/rng.hpp"
#include "mpsf/tape.hpp"

namespace mpsf {

template <typename T>
struct Linear {
  int in = 0, out = 0;
  std::vector<T> W;  // row-major [out][in]
  std::vector<T> b;  // [out]
};

template <typename T>
struct MlpGrads {
  std::vector<std::vector<T>> W;
  std::vector<std::vector<T>> b;

  void add_scaled(const MlpGrads& o, T s) {
    for (size_t l = 0; l < W.size(); ++l) {
      for (size_t i = 0; i < W[l].size(); ++i) W[l][i] += s * o.W[l][i];
      for (size_t i = 0; i < b[l].size(); ++i) b[l][i] += s * o.b[l][i];
    }
  }
  void zero() {
    for (auto& w : W) std::fill(w.begin(), w.end(), T(0));
    for (auto& v : b) std::fill(v.begin(), v.end(), T(0));
  }
};

// Per-sample activation caches kept alive until the backward pass of the
// surrounding ray has produced its upstream seeds.
template <typename T>
struct MlpWorkspace {
  // h[l] is the input of layer l; h[L] the network output.
  std::vector<std::vector<T>> h;
  // th[l][k]: tangent of h[l] along input direction k (forward mode).
  std::vector<std::array<std::vector<T>, 3>> th;
  // sg[l] = sigmoid(beta * z_l) for hidden layers (activation derivative).
  std::vector<std::vector<T>> sg;
  // tz[l][k]: pre-activation tangents of hidden layer l (for the curvature
  // term in backward).
  std::vector<std::array<std::vector<T>, 3>> tz;

  // scratch used by backward only
  std::vector<T> dz, dtz[3], dh, dth[3];
};

namespace kernels {

// Small-GEMM pieces built on GCC vector extensions: accumulators are
// explicit vector registers held across the reduction loop (accumulating
// through memory would serialize on store-to-load forwarding).

using vecmath::vload;
using vecmath::vstore;
template <typename T>
using VecTraits = vecmath::Lanes<T>;

// z[0..out) = (bias|0) + sum_i x[i] * wt[i][.]   (wt transposed, row stride out)
template <typename T>
inline void mat_fwd(const T* x, int in, const T* wt, int out, const T* bias, T* z) {
  using V = typename VecTraits<T>::V;
  constexpr int W = VecTraits<T>::W;
  int ob = 0;
  for (; ob + 4 * W <= out; ob += 4 * W) {
    V a0{}, a1{}, a2{}, a3{};
    if (bias) {
      a0 = vload(bias + ob);
      a1 = vload(bias + ob + W);
      a2 = vload(bias + ob + 2 * W);
      a3 = vload(bias + ob + 3 * W);
    }
    const T* w = wt + ob;
    for (int i = 0; i < in; ++i, w += out) {
      T xv = x[i];
      if (xv == T(0)) continue;
      a0 += vload(w) * xv;
      a1 += vload(w + W) * xv;
      a2 += vload(w + 2 * W) * xv;
      a3 += vload(w + 3 * W) * xv;
    }
    vstore(z + ob, a0);
    vstore(z + ob + W, a1);
    vstore(z + ob + 2 * W, a2);
    vstore(z + ob + 3 * W, a3);
  }
  for (; ob + W <= out; ob += W) {
    V a{};
    if (bias) a = vload(bias + ob);
    const T* w = wt + ob;
    for (int i = 0; i < in; ++i, w += out) {
      T xv = x[i];
      if (xv == T(0)) continue;
      a += vload(w) * xv;
    }
    vstore(z + ob, a);
  }
  for (; ob < out; ++ob) {
    T acc = bias ? bias[ob] : T(0);
    const T* w = wt + ob;
    for (int i = 0; i < in; ++i, w += out) acc += x[i] * w[0];
    z[ob] = acc;
  }
}

// dh[0..in) += sum_o dz[o] * W[o][.]   (W canonical row-major)
template <typename T>
inline void back_input(const T* dzb, const T* Wm, int in, int out, T* dhb) {
  using V = typename VecTraits<T>::V;
  constexpr int W = VecTraits<T>::W;
  int ib = 0;
  for (; ib + 4 * W <= in; ib += 4 * W) {
    V a0{}, a1{}, a2{}, a3{};
    for (int o = 0; o < out; ++o) {
      T g = dzb[o];
      if (g == T(0)) continue;
      const T* w = Wm + static_cast<size_t>(o) * in + ib;
      a0 += vload(w) * g;
      a1 += vload(w + W) * g;
      a2 += vload(w + 2 * W) * g;
      a3 += vload(w + 3 * W) * g;
    }
    vstore(dhb + ib, vload(dhb + ib) + a0);
    vstore(dhb + ib + W, vload(dhb + ib + W) + a1);
    vstore(dhb + ib + 2 * W, vload(dhb + ib + 2 * W) + a2);
    vstore(dhb + ib + 3 * W, vload(dhb + ib + 3 * W) + a3);
  }
  for (; ib + W <= in; ib += W) {
    V a{};
    for (int o = 0; o < out; ++o) {
      T g = dzb[o];
      if (g == T(0)) continue;
      a += vload(Wm + static_cast<size_t>(o) * in + ib) * g;
    }
    vstore(dhb + ib, vload(dhb + ib) + a);
  }
  for (; ib < in; ++ib) {
    T acc = T(0);
    for (int o = 0; o < out; ++o) acc += dzb[o] * Wm[static_cast<size_t>(o) * in + ib];
    dhb[ib] += acc;
  }
}

// gW[o][.] += sum_b dz[b][o] * h[b][.]
template <typename T>
inline void grad_weights(const T* dz, const T* h, int batch, int in, int out, T* gW) {
  using V = typename VecTraits<T>::V;
  constexpr int W = VecTraits<T>::W;
  for (int o = 0; o < out; ++o) {
    T* wrow = gW + static_cast<size_t>(o) * in;
    int ib = 0;
    for (; ib + 4 * W <= in; ib += 4 * W) {
      V a0{}, a1{}, a2{}, a3{};
      for (int b = 0; b < batch; ++b) {
        T g = dz[static_cast<size_t>(b) * out + o];
        if (g == T(0)) continue;
        const T* hb = h + static_cast<size_t>(b) * in + ib;
        a0 += vload(hb) * g;
        a1 += vload(hb + W) * g;
        a2 += vload(hb + 2 * W) * g;
        a3 += vload(hb + 3 * W) * g;
      }
      vstore(wrow + ib, vload(wrow + ib) + a0);
      vstore(wrow + ib + W, vload(wrow + ib + W) + a1);
      vstore(wrow + ib + 2 * W, vload(wrow + ib + 2 * W) + a2);
      vstore(wrow + ib + 3 * W, vload(wrow + ib + 3 * W) + a3);
    }
    for (; ib + W <= in; ib += W) {
      V a{};
      for (int b = 0; b < batch; ++b) {
        T g = dz[static_cast<size_t>(b) * out + o];
        if (g == T(0)) continue;
        a += vload(h + static_cast<size_t>(b) * in + ib) * g;
      }
      vstore(wrow + ib, vload(wrow + ib) + a);
    }
    for (; ib < in; ++ib) {
      T acc = T(0);
      for (int b = 0; b < batch; ++b)
        acc += dz[static_cast<size_t>(b) * out + o] * h[static_cast<size_t>(b) * in + ib];
      wrow[ib] += acc;
    }
  }
}

}  // namespace kernels

// Batch workspace: activations stored point-major (sample rows of length
// dim), which keeps every batched kernel a contiguous broadcast-FMA loop.
template <typename T>
struct MlpBatchWs {
  int batch = 0;
  std::vector<std::vector<T>> h;
  std::vector<std::array<std::vector<T>, 3>> th;
  std::vector<std::vector<T>> sg;
  std::vector<std::array<std::vector<T>, 3>> tz;
  std::vector<T> dz, dh;
  std::array<std::vector<T>, 3> dtz, dth;
};

// Fully connected network: softplus(beta) on hidden layers, linear output.
// forward() optionally propagates up to three input-tangent streams, giving
// exact spatial derivatives of the outputs; backward() differentiates the
// whole augmented computation with respect to the parameters, including the
// curvature terms the tangent streams introduce.
//
// The *_batch variants process many points at once through vector-friendly
// kernels. They read weights through a transposed cache that callers must
// refresh via sync_transposed() after any parameter change; the single-point
// methods always read the canonical row-major weights directly.
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<int>& dims, double beta) : beta_(T(beta)) {
    assert(dims.size() >= 2);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
      Linear<T> lay;
      lay.in = dims[l];
      lay.out = dims[l + 1];
      lay.W.assign(static_cast<size_t>(lay.in) * lay.out, T(0));
      lay.b.assign(lay.out, T(0));
      layers_.push_back(std::move(lay));
    }
  }

  int input_dim() const { return layers_.front().in; }
  int output_dim() const { return layers_.back().out; }
  size_t layer_count() const { return layers_.size(); }
  std::vector<Linear<T>>& layers() { return layers_; }
  const std::vector<Linear<T>>& layers() const { return layers_; }
  T beta() const { return beta_; }

  MlpGrads<T> make_grads() const {
    MlpGrads<T> g;
    for (const auto& l : layers_) {
      g.W.emplace_back(l.W.size(), T(0));
      g.b.emplace_back(l.b.size(), T(0));
    }
    return g;
  }

  void init_kaiming(Pcg32& rng) {
    for (auto& l : layers_) {
      T std = T(std::sqrt(2.0 / l.in));
      for (auto& w : l.W) w = T(rng.normal()) * std;
      std::fill(l.b.begin(), l.b.end(), T(0));
    }
  }

  void ensure_workspace(MlpWorkspace<T>& ws) const {
    size_t L = layers_.size();
    ws.h.resize(L + 1);
    ws.th.resize(L + 1);
    ws.sg.resize(L);
    ws.tz.resize(L);
    ws.h[0].resize(layers_[0].in);
    for (int k = 0; k < 3; ++k) ws.th[0][k].resize(layers_[0].in);
    int max_dim = layers_[0].in;
    for (size_t l = 0; l < L; ++l) {
      int out = layers_[l].out;
      max_dim = std::max(max_dim, out);
      ws.h[l + 1].resize(out);
      ws.sg[l].resize(out);
      for (int k = 0; k < 3; ++k) {
        ws.th[l + 1][k].resize(out);
        ws.tz[l][k].resize(out);
      }
    }
    ws.dz.resize(max_dim);
    ws.dh.resize(max_dim);
    for (int k = 0; k < 3; ++k) {
      ws.dtz[k].resize(max_dim);
      ws.dth[k].resize(max_dim);
    }
  }

  // x: [in]; tx[k]: [in] tangent seeds, k < n_tangents. Outputs live in
  // ws.h.back() / ws.th.back().
  void forward(const T* x, const T* const* tx, int n_tangents, MlpWorkspace<T>& ws) const {
    ensure_workspace(ws);
    size_t L = layers_.size();
    std::copy(x, x + layers_[0].in, ws.h[0].begin());
    for (int k = 0; k < n_tangents; ++k)
      std::copy(tx[k], tx[k] + layers_[0].in, ws.th[0][k].begin());

    for (size_t l = 0; l < L; ++l) {
      const Linear<T>& lay = layers_[l];
      const bool hidden = (l + 1 < L);
      const T* hin = ws.h[l].data();
      T* hout = ws.h[l + 1].data();
      for (int o = 0; o < lay.out; ++o) {
        const T* row = lay.W.data() + static_cast<size_t>(o) * lay.in;
        T acc = lay.b[o];
#pragma omp simd reduction(+ : acc)
        for (int i = 0; i < lay.in; ++i) acc += row[i] * hin[i];
        hout[o] = acc;
      }
      for (int k = 0; k < n_tangents; ++k) {
        const T* tin = ws.th[l][k].data();
        T* tzk = ws.tz[l][k].data();
        for (int o = 0; o < lay.out; ++o) {
          const T* row = lay.W.data() + static_cast<size_t>(o) * lay.in;
          T acc = T(0);
#pragma omp simd reduction(+ : acc)
          for (int i = 0; i < lay.in; ++i) acc += row[i] * tin[i];
          tzk[o] = acc;
        }
      }
      if (hidden) {
        T* sg = ws.sg[l].data();
#pragma omp simd
        for (int o = 0; o < lay.out; ++o) {
          T z = hout[o];
          T bz = beta_ * z;
          T a = std::min(std::fabs(bz), T(30));
          T e = fast_exp(-a);
          T q = T(1) / (T(1) + e);
          sg[o] = z >= T(0) ? q : T(1) - q;
          hout[o] = std::max(z, T(0)) + fast_log1p_unit(e) / beta_;
        }
        for (int k = 0; k < n_tangents; ++k) {
          const T* tzk = ws.tz[l][k].data();
          T* tout = ws.th[l + 1][k].data();
          for (int o = 0; o < lay.out; ++o) tout[o] = sg[o] * tzk[o];
        }
      } else {
        for (int k = 0; k < n_tangents; ++k)
          std::copy(ws.tz[l][k].begin(), ws.tz[l][k].begin() + lay.out, ws.th[l + 1][k].begin());
      }
    }
  }

  // dy: adjoint of the output; dty[k]: adjoints of the tangent outputs.
  // Parameter gradients accumulate into `grads`; if dx is non-null it
  // receives the adjoint of the input vector.
  void backward(const T* dy, const T* const* dty, int n_tangents, MlpWorkspace<T>& ws,
                MlpGrads<T>& grads, T* dx = nullptr) const {
    size_t L = layers_.size();
    std::copy(dy, dy + layers_.back().out, ws.dh.begin());
    for (int k = 0; k < n_tangents; ++k) {
      if (dty && dty[k])
        std::copy(dty[k], dty[k] + layers_.back().out, ws.dth[k].begin());
      else
        std::fill(ws.dth[k].begin(), ws.dth[k].begin() + layers_.back().out, T(0));
    }

    for (int l = static_cast<int>(L) - 1; l >= 0; --l) {
      const Linear<T>& lay = layers_[l];
      const bool hidden = (l + 1 < static_cast<int>(L));
      T* dz = ws.dz.data();
      if (hidden) {
        const T* sg = ws.sg[l].data();
        for (int o = 0; o < lay.out; ++o) {
          // d/dz softplus_beta = sigmoid(beta z); second order via the
          // tangent streams: d/dz [sg * tz] = beta sg (1 - sg) tz.
          T acc = ws.dh[o] * sg[o];
          for (int k = 0; k < n_tangents; ++k) {
            T spp = beta_ * sg[o] * (T(1) - sg[o]);
            acc += ws.dth[k][o] * spp * ws.tz[l][k][o];
          }
          dz[o] = acc;
        }
        for (int k = 0; k < n_tangents; ++k) {
          const T* sg2 = ws.sg[l].data();
          T* dtzk = ws.dtz[k].data();
          for (int o = 0; o < lay.out; ++o) dtzk[o] = ws.dth[k][o] * sg2[o];
        }
      } else {
        for (int o = 0; o < lay.out; ++o) dz[o] = ws.dh[o];
        for (int k = 0; k < n_tangents; ++k)
          for (int o = 0; o < lay.out; ++o) ws.dtz[k][o] = ws.dth[k][o];
      }

      const T* hin = ws.h[l].data();
      T* gW = grads.W[l].data();
      T* gb = grads.b[l].data();
      for (int o = 0; o < lay.out; ++o) {
        T g = dz[o];
        T* wrow = gW + static_cast<size_t>(o) * lay.in;
#pragma omp simd
        for (int i = 0; i < lay.in; ++i) wrow[i] += g * hin[i];
        gb[o] += g;
      }
      for (int k = 0; k < n_tangents; ++k) {
        const T* tin = ws.th[l][k].data();
        const T* dtzk = ws.dtz[k].data();
        for (int o = 0; o < lay.out; ++o) {
          T g = dtzk[o];
          if (g == T(0)) continue;
          T* wrow = gW + static_cast<size_t>(o) * lay.in;
#pragma omp simd
          for (int i = 0; i < lay.in; ++i) wrow[i] += g * tin[i];
        }
      }

      // input adjoints for the next (earlier) layer
      bool need_dh = (l > 0) || (dx != nullptr);
      if (!need_dh) break;
      std::fill(ws.dh.begin(), ws.dh.begin() + lay.in, T(0));
      T* dh = ws.dh.data();
      for (int o = 0; o < lay.out; ++o) {
        T g = dz[o];
        if (g == T(0)) continue;
        const T* row = lay.W.data() + static_cast<size_t>(o) * lay.in;
#pragma omp simd
        for (int i = 0; i < lay.in; ++i) dh[i] += row[i] * g;
      }
      for (int k = 0; k < n_tangents; ++k) {
        std::fill(ws.dth[k].begin(), ws.dth[k].begin() + lay.in, T(0));
        const T* dtzk = ws.dtz[k].data();
        T* dthk = ws.dth[k].data();
        for (int o = 0; o < lay.out; ++o) {
          T g = dtzk[o];
          if (g == T(0)) continue;
          const T* row = lay.W.data() + static_cast<size_t>(o) * lay.in;
#pragma omp simd
          for (int i = 0; i < lay.in; ++i) dthk[i] += row[i] * g;
        }
      }
    }
    if (dx) std::copy(ws.dh.begin(), ws.dh.begin() + layers_[0].in, dx);
  }

  // (1/beta) log(1 + e^{beta z}); same fast formulation the activation loop
  // uses, so external callers observe identical values
  T softplus_beta(T z) const {
    T bz = beta_ * z;
    T a = std::min(std::fabs(bz), T(30));
    return std::max(z, T(0)) + fast_log1p_unit(fast_exp(-a)) / beta_;
  }

  // Rebuilds the transposed-weight cache consumed by the batch kernels.
  void sync_transposed() const {
    wt_.resize(layers_.size());
    for (size_t l = 0; l < layers_.size(); ++l) {
      const Linear<T>& lay = layers_[l];
      wt_[l].resize(lay.W.size());
      for (int o = 0; o < lay.out; ++o)
        for (int i = 0; i < lay.in; ++i)
          wt_[l][static_cast<size_t>(i) * lay.out + o] = lay.W[static_cast<size_t>(o) * lay.in + i];
    }
  }

  void ensure_batch_ws(MlpBatchWs<T>& ws, int batch) const {
    size_t L = layers_.size();
    ws.batch = batch;
    ws.h.resize(L + 1);
    ws.th.resize(L + 1);
    ws.sg.resize(L);
    ws.tz.resize(L);
    size_t max_dim = layers_[0].in;
    ws.h[0].resize(static_cast<size_t>(layers_[0].in) * batch);
    for (int k = 0; k < 3; ++k) ws.th[0][k].resize(static_cast<size_t>(layers_[0].in) * batch);
    for (size_t l = 0; l < L; ++l) {
      size_t n = static_cast<size_t>(layers_[l].out) * batch;
      max_dim = std::max<size_t>(max_dim, layers_[l].out);
      ws.h[l + 1].resize(n);
      ws.sg[l].resize(n);
      for (int k = 0; k < 3; ++k) {
        ws.th[l + 1][k].resize(n);
        ws.tz[l][k].resize(n);
      }
    }
    ws.dz.resize(max_dim * batch);
    ws.dh.resize(max_dim * batch);
    for (int k = 0; k < 3; ++k) {
      ws.dtz[k].resize(max_dim * batch);
      ws.dth[k].resize(max_dim * batch);
    }
  }

  // X: point-major [batch][in]; TX[k] likewise. Requires sync_transposed().
  void forward_batch(const T* X, const T* const* TX, int n_tangents, int batch,
                     MlpBatchWs<T>& ws) const {
    ensure_batch_ws(ws, batch);
    size_t L = layers_.size();
    std::copy(X, X + static_cast<size_t>(layers_[0].in) * batch, ws.h[0].begin());
    for (int k = 0; k < n_tangents; ++k)
      std::copy(TX[k], TX[k] + static_cast<size_t>(layers_[0].in) * batch, ws.th[0][k].begin());

    for (size_t l = 0; l < L; ++l) {
      const Linear<T>& lay = layers_[l];
      const bool hidden = (l + 1 < L);
      const T* wt = wt_[l].data();
      const int in = lay.in, out = lay.out;

      auto matmul = [&](const T* src, T* dst, const T* bias) {
        for (int b = 0; b < batch; ++b)
          kernels::mat_fwd(src + static_cast<size_t>(b) * in, in, wt, out, bias,
                           dst + static_cast<size_t>(b) * out);
      };
      matmul(ws.h[l].data(), ws.h[l + 1].data(), lay.b.data());
      for (int k = 0; k < n_tangents; ++k)
        matmul(ws.th[l][k].data(), ws.th[l + 1][k].data(), nullptr);

      if (hidden) {
        size_t n = static_cast<size_t>(out) * batch;
        T* hv = ws.h[l + 1].data();
        T* sg = ws.sg[l].data();
        using VL = vecmath::Lanes<T>;
        using V = typename VL::V;
        constexpr int W = VL::W;
        const T inv_beta = T(1) / beta_;
        size_t e = 0;
        for (; e + W <= n; e += W) {
          V z = kernels::vload(hv + e);
          V bz = z * beta_;
          V a = bz > -bz ? bz : -bz;
          a = a > T(30) ? V{} + T(30) : a;
          V ex = vecmath::fast_exp_v(-a);
          V q = T(1) / (ex + T(1));
          V sgv = z >= V{} ? q : T(1) - q;
          V sp = (z > V{} ? z : V{}) + vecmath::fast_log1p_unit_v(ex) * inv_beta;
          kernels::vstore(sg + e, sgv);
          kernels::vstore(hv + e, sp);
        }
        for (; e < n; ++e) {
          T z = hv[e];
          T bz = beta_ * z;
          T a = std::min(std::fabs(bz), T(30));
          T ex = fast_exp(-a);
          T q = T(1) / (T(1) + ex);
          sg[e] = z >= T(0) ? q : T(1) - q;
          hv[e] = std::max(z, T(0)) + fast_log1p_unit(ex) * inv_beta;
        }
        for (int k = 0; k < n_tangents; ++k) {
          T* tzk = ws.th[l + 1][k].data();
          T* tz_store = ws.tz[l][k].data();
#pragma omp simd
          for (size_t j = 0; j < n; ++j) {
            tz_store[j] = tzk[j];
            tzk[j] = sg[j] * tzk[j];
          }
        }
      }
    }
  }

  // dY: point-major [batch][out]; dTY[k] likewise (null rows mean zero).
  void backward_batch(const T* dY, const T* const* dTY, int n_tangents, int batch,
                      MlpBatchWs<T>& ws, MlpGrads<T>& grads, T* dX = nullptr) const {
    size_t L = layers_.size();
    int out_last = layers_.back().out;
    std::copy(dY, dY + static_cast<size_t>(out_last) * batch, ws.dh.begin());
    for (int k = 0; k < n_tangents; ++k) {
      if (dTY && dTY[k])
        std::copy(dTY[k], dTY[k] + static_cast<size_t>(out_last) * batch, ws.dth[k].begin());
      else
        std::fill(ws.dth[k].begin(), ws.dth[k].begin() + static_cast<size_t>(out_last) * batch,
                  T(0));
    }

    for (int l = static_cast<int>(L) - 1; l >= 0; --l) {
      const Linear<T>& lay = layers_[l];
      const bool hidden = (l + 1 < static_cast<int>(L));
      const int in = lay.in, out = lay.out;
      size_t n = static_cast<size_t>(out) * batch;
      T* dz = ws.dz.data();

      if (hidden) {
        const T* sg = ws.sg[l].data();
#pragma omp simd
        for (size_t e = 0; e < n; ++e) dz[e] = ws.dh[e] * sg[e];
        for (int k = 0; k < n_tangents; ++k) {
          const T* tzk = ws.tz[l][k].data();
          const T* dthk = ws.dth[k].data();
          T* dtzk = ws.dtz[k].data();
#pragma omp simd
          for (size_t e = 0; e < n; ++e) {
            T spp = beta_ * sg[e] * (T(1) - sg[e]);
            dz[e] += dthk[e] * spp * tzk[e];
            dtzk[e] = dthk[e] * sg[e];
          }
        }
      } else {
        std::copy(ws.dh.begin(), ws.dh.begin() + n, dz);
        for (int k = 0; k < n_tangents; ++k)
          std::copy(ws.dth[k].begin(), ws.dth[k].begin() + n, ws.dtz[k].begin());
      }

      T* gW = grads.W[l].data();
      T* gb = grads.b[l].data();
      const T* hin = ws.h[l].data();
      for (int b = 0; b < batch; ++b) {
        const T* dzb = dz + static_cast<size_t>(b) * out;
#pragma omp simd
        for (int o = 0; o < out; ++o) gb[o] += dzb[o];
      }
      kernels::grad_weights(dz, hin, batch, in, out, gW);
      for (int k = 0; k < n_tangents; ++k)
        kernels::grad_weights(ws.dtz[k].data(), ws.th[l][k].data(), batch, in, out, gW);

      bool need_dh = (l > 0) || (dX != nullptr);
      if (!need_dh) break;
      std::fill(ws.dh.begin(), ws.dh.begin() + static_cast<size_t>(in) * batch, T(0));
      for (int b = 0; b < batch; ++b)
        kernels::back_input(dz + static_cast<size_t>(b) * out, lay.W.data(), in, out,
                            ws.dh.data() + static_cast<size_t>(b) * in);
      for (int k = 0; k < n_tangents; ++k) {
        std::fill(ws.dth[k].begin(), ws.dth[k].begin() + static_cast<size_t>(in) * batch, T(0));
        const T* dtzk = ws.dtz[k].data();
        for (int b = 0; b < batch; ++b)
          kernels::back_input(dtzk + static_cast<size_t>(b) * out, lay.W.data(), in, out,
                              ws.dth[k].data() + static_cast<size_t>(b) * in);
      }
    }
    if (dX) std::copy(ws.dh.begin(), ws.dh.begin() + static_cast<size_t>(layers_[0].in) * batch, dX);
  }

 private:
  std::vector<Linear<T>> layers_;
  T beta_ = T(100);
  mutable std::vector<std::vector<T>> wt_;  // transposed cache for batch kernels
};

}  // namespace mpsf
