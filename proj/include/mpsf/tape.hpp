#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

namespace mpsf {

// Reverse-mode tape over scalars of type T. Every recorded node keeps at
// most two parents together with the local partial derivatives evaluated at
// forward time, so the backward sweep is a single uniform loop. One tape is
// built per ray (or per patch) and reset afterwards; the arena is reused.
template <typename T>
class Tape {
 public:
  struct Node {
    int32_t pa = -1, pb = -1;
    T da = T(0), db = T(0);
  };

  int add_leaf(T value) {
    values_.push_back(value);
    nodes_.push_back(Node{});
    return static_cast<int>(values_.size()) - 1;
  }

  int add_node(T value, int pa, T da, int pb = -1, T db = T(0)) {
    values_.push_back(value);
    nodes_.push_back(Node{pa, pb, da, db});
    return static_cast<int>(values_.size()) - 1;
  }

  T value(int idx) const { return values_[idx]; }
  size_t size() const { return values_.size(); }

  void clear() {
    values_.clear();
    nodes_.clear();
    grads_.clear();
  }

  // Backward sweep seeding d(output)/d(output) = seed. Gradients of every
  // node are then available through grad().
  void backward(int output, T seed = T(1)) {
    grads_.assign(values_.size(), T(0));
    grads_[output] = seed;
    for (int i = static_cast<int>(values_.size()) - 1; i >= 0; --i) {
      T g = grads_[i];
      if (g == T(0)) continue;
      const Node& n = nodes_[i];
      if (n.pa >= 0) grads_[n.pa] += n.da * g;
      if (n.pb >= 0) grads_[n.pb] += n.db * g;
    }
  }

  T grad(int idx) const { return grads_[idx]; }

 private:
  std::vector<T> values_;
  std::vector<Node> nodes_;
  std::vector<T> grads_;
};

// Handle to a tape node. Arithmetic on Var records new nodes; mixing Vars
// from different tapes is a programming error.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int idx = -1;

  Var() = default;
  Var(Tape<T>& t, T value) : tape(&t), idx(t.add_leaf(value)) {}
  Var(Tape<T>* t, int i) : tape(t), idx(i) {}

  T val() const { return tape->value(idx); }
  T grad() const { return tape->grad(idx); }
};

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) {
  return {a.tape, a.tape->add_node(a.val() + b.val(), a.idx, T(1), b.idx, T(1))};
}
template <typename T>
Var<T> operator+(Var<T> a, T c) {
  return {a.tape, a.tape->add_node(a.val() + c, a.idx, T(1))};
}
template <typename T>
Var<T> operator+(T c, Var<T> a) {
  return a + c;
}
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) {
  return {a.tape, a.tape->add_node(a.val() - b.val(), a.idx, T(1), b.idx, T(-1))};
}
template <typename T>
Var<T> operator-(Var<T> a, T c) {
  return {a.tape, a.tape->add_node(a.val() - c, a.idx, T(1))};
}
template <typename T>
Var<T> operator-(T c, Var<T> a) {
  return {a.tape, a.tape->add_node(c - a.val(), a.idx, T(-1))};
}
template <typename T>
Var<T> operator-(Var<T> a) {
  return {a.tape, a.tape->add_node(-a.val(), a.idx, T(-1))};
}
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) {
  return {a.tape, a.tape->add_node(a.val() * b.val(), a.idx, b.val(), b.idx, a.val())};
}
template <typename T>
Var<T> operator*(Var<T> a, T c) {
  return {a.tape, a.tape->add_node(a.val() * c, a.idx, c)};
}
template <typename T>
Var<T> operator*(T c, Var<T> a) {
  return a * c;
}
template <typename T>
Var<T> operator/(Var<T> a, Var<T> b) {
  T inv = T(1) / b.val();
  return {a.tape, a.tape->add_node(a.val() * inv, a.idx, inv, b.idx, -a.val() * inv * inv)};
}
template <typename T>
Var<T> operator/(Var<T> a, T c) {
  return a * (T(1) / c);
}

template <class S>
struct scalar_of {
  using type = S;
};
template <class T>
struct scalar_of<Var<T>> {
  using type = T;
};
template <class S>
using scalar_of_t = typename scalar_of<S>::type;

namespace scal {

// Generic scalar helpers usable with both plain floating types and Var<T>,
// so the rendering formulas are written once and instantiated for the fast
// no-grad path and the tape path alike.

template <typename S>
S exp(S x) {
  return std::exp(x);
}
template <typename T>
Var<T> exp(Var<T> a) {
  T e = std::exp(a.val());
  return {a.tape, a.tape->add_node(e, a.idx, e)};
}

template <typename S>
S log(S x) {
  return std::log(x);
}
template <typename T>
Var<T> log(Var<T> a) {
  return {a.tape, a.tape->add_node(std::log(a.val()), a.idx, T(1) / a.val())};
}

template <typename S>
S sqrt(S x) {
  return std::sqrt(x);
}
template <typename T>
Var<T> sqrt(Var<T> a) {
  T r = std::sqrt(a.val());
  return {a.tape, a.tape->add_node(r, a.idx, T(0.5) / r)};
}

template <typename S>
S sigmoid(S x) {
  return x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : S(1) - S(1) / (S(1) + std::exp(x));
}
template <typename T>
Var<T> sigmoid(Var<T> a) {
  T s = sigmoid(a.val());
  return {a.tape, a.tape->add_node(s, a.idx, s * (T(1) - s))};
}

// softplus(x) = log(1 + e^x), linearized for large x to stay finite.
template <typename S>
S softplus(S x) {
  return x > S(30) ? x : std::log1p(std::exp(x));
}
template <typename T>
Var<T> softplus(Var<T> a) {
  return {a.tape, a.tape->add_node(softplus(a.val()), a.idx, sigmoid(a.val()))};
}

template <typename S>
S abs(S x) {
  return std::fabs(x);
}
template <typename T>
Var<T> abs(Var<T> a) {
  T v = a.val();
  return {a.tape, a.tape->add_node(std::fabs(v), a.idx, v >= T(0) ? T(1) : T(-1))};
}

template <typename S>
S max0(S x) {
  return x > S(0) ? x : S(0);
}
template <typename T>
Var<T> max0(Var<T> a) {
  bool pos = a.val() > T(0);
  return {a.tape, a.tape->add_node(pos ? a.val() : T(0), a.idx, pos ? T(1) : T(0))};
}

template <typename S>
S value_of(S x) {
  return x;
}
template <typename T>
T value_of(Var<T> a) {
  return a.val();
}

template <typename S>
S constant(S /*like*/, double c) {
  return S(c);
}
template <typename T>
Var<T> constant(Var<T> like, double c) {
  return {*like.tape, T(c)};
}

}  // namespace scal

}  // namespace mpsf
