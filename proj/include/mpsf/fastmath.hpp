#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace mpsf {

// Polynomial exp/log1p used inside the network activation loops, in scalar
// and explicit 8/4-lane vector forms (the float<->int bit manipulation
// defeats auto-vectorization, so the vector forms are written out).
// Relative error is ~1e-7 float / ~2e-8 double — far below every gradient
// tolerance in the project; each precision is self-consistent between
// forward and backward passes.

inline float fast_exp(float x) {
  x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
  float z = x * 1.442695041f;  // log2(e)
  // round-to-nearest via the 2^23 magic constant
  float zr = z + 12582912.0f;
  int32_t n = std::bit_cast<int32_t>(zr) - std::bit_cast<int32_t>(12582912.0f);
  float r = x - float(n) * 0.6931471824645996f;   // ln2 high
  r -= float(n) * -1.904654323148236017e-09f;     // ln2 low
  float p = 1.0f +
            r * (1.0f +
                 r * (0.5f + r * (0.166666686f + r * (0.0416573475f + r * 0.00837312452f))));
  int32_t bits = std::bit_cast<int32_t>(p) + (n << 23);
  return std::bit_cast<float>(bits);
}

inline double fast_exp(double x) {
  x = x < -87.0 ? -87.0 : (x > 88.0 ? 88.0 : x);
  double z = x * 1.4426950408889634074;
  double zr = z + 6755399441055744.0;  // 2^52 * 1.5
  int64_t n = std::bit_cast<int64_t>(zr) - std::bit_cast<int64_t>(6755399441055744.0);
  double r = x - double(n) * 0.693147180369123816490;
  r -= double(n) * 1.90821492927058770002e-10;
  double p = 1.0 +
             r * (1.0 +
                  r * (0.5 +
                       r * (0.16666666666666602381 +
                            r * (0.04166666666557090988 +
                                 r * (0.00833333606138632307 + r * 0.00138928439219885539)))));
  int64_t bits = std::bit_cast<int64_t>(p) + (n << 52);
  return std::bit_cast<double>(bits);
}

// log(1 + y) for y in [0, 1], via the atanh series of log(u) on u in [1, 2].
template <typename T>
inline T fast_log1p_unit(T y) {
  T u = T(1) + y;
  T s = (u - T(1)) / (u + T(1));  // in [0, 1/3]
  T s2 = s * s;
  return T(2) * s *
         (T(1) + s2 * (T(0.33333333333333333) +
                       s2 * (T(0.2) + s2 * (T(0.14285714285714285) + s2 * T(0.11111111111111111)))));
}

// ---- vector forms (GCC vector extensions, 32-byte lanes) ----

namespace vecmath {

typedef float Vf __attribute__((vector_size(32)));
typedef int32_t Vi __attribute__((vector_size(32)));
typedef double Vd __attribute__((vector_size(32)));
typedef int64_t Vl __attribute__((vector_size(32)));

typedef float VfU __attribute__((vector_size(32), aligned(4)));
typedef double VdU __attribute__((vector_size(32), aligned(8)));

template <typename T>
struct Lanes;
template <>
struct Lanes<float> {
  using V = Vf;
  using UV = VfU;
  using I = Vi;
  static constexpr int W = 8;
};
template <>
struct Lanes<double> {
  using V = Vd;
  using UV = VdU;
  using I = Vl;
  static constexpr int W = 4;
};

template <typename T>
inline typename Lanes<T>::V vload(const T* p) {
  return *reinterpret_cast<const typename Lanes<T>::UV*>(p);
}
template <typename T>
inline void vstore(T* p, typename Lanes<T>::V v) {
  *reinterpret_cast<typename Lanes<T>::UV*>(p) = v;
}

inline Vf fast_exp_v(Vf x) {
  x = x < -87.0f ? Vf{} - 87.0f : x;
  x = x > 88.0f ? Vf{} + 88.0f : x;
  Vf z = x * 1.442695041f;
  Vf zr = z + 12582912.0f;
  Vi magic = std::bit_cast<Vi>(Vf{} + 12582912.0f);
  Vi n = std::bit_cast<Vi>(zr) - magic;
  Vf nf = __builtin_convertvector(n, Vf);
  Vf r = x - nf * 0.6931471824645996f;
  r -= nf * -1.904654323148236017e-09f;
  Vf p = 1.0f +
         r * (1.0f + r * (0.5f + r * (0.166666686f + r * (0.0416573475f + r * 0.00837312452f))));
  Vi bits = std::bit_cast<Vi>(p) + (n << 23);
  return std::bit_cast<Vf>(bits);
}

inline Vd fast_exp_v(Vd x) {
  x = x < -87.0 ? Vd{} - 87.0 : x;
  x = x > 88.0 ? Vd{} + 88.0 : x;
  Vd z = x * 1.4426950408889634074;
  Vd zr = z + 6755399441055744.0;
  Vl magic = std::bit_cast<Vl>(Vd{} + 6755399441055744.0);
  Vl n = std::bit_cast<Vl>(zr) - magic;
  Vd nf = __builtin_convertvector(n, Vd);
  Vd r = x - nf * 0.693147180369123816490;
  r -= nf * 1.90821492927058770002e-10;
  Vd p = 1.0 +
         r * (1.0 +
              r * (0.5 +
                   r * (0.16666666666666602381 +
                        r * (0.04166666666557090988 +
                             r * (0.00833333606138632307 + r * 0.00138928439219885539)))));
  Vl bits = std::bit_cast<Vl>(p) + (n << 52);
  return std::bit_cast<Vd>(bits);
}

template <typename V>
inline V fast_log1p_unit_v(V y) {
  V u = y + decltype(y[0])(1);
  V s = (u - decltype(y[0])(1)) / (u + decltype(y[0])(1));
  V s2 = s * s;
  return decltype(y[0])(2) * s *
         (s2 * (s2 * (s2 * (s2 * decltype(y[0])(0.11111111111111111) +
                            decltype(y[0])(0.14285714285714285)) +
                      decltype(y[0])(0.2)) +
                decltype(y[0])(0.33333333333333333)) +
          decltype(y[0])(1));
}

}  // namespace vecmath

}  // namespace mpsf
