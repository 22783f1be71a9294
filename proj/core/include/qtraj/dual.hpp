#pragma once

#include <array>
#include <cmath>

#include "qtraj/errors.hpp"

namespace qtraj {

/// Plain scalars pass through; keeps generic code readable when it needs
/// a point value for branching.
inline double val(double x) { return x; }

namespace ad {

/// Forward-mode scalar carrying W directional derivatives alongside its
/// value.  W is the number of free parameters of the active computation
/// and stays fixed throughout it.
template <int W>
struct Dual {
  double v{};
  std::array<double, W> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit promotion wanted

  static Dual seeded(double value, int slot) {
    Dual x(value);
    x.d[slot] = 1.0;
    return x;
  }
};

template <int W>
inline double val(const Dual<W>& x) {
  return x.v;
}

// ---- arithmetic -----------------------------------------------------------

template <int W>
inline Dual<W> operator+(const Dual<W>& a, const Dual<W>& b) {
  Dual<W> r(a.v + b.v);
  for (int i = 0; i < W; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}
template <int W>
inline Dual<W> operator+(const Dual<W>& a, double b) {
  Dual<W> r = a;
  r.v += b;
  return r;
}
template <int W>
inline Dual<W> operator+(double a, const Dual<W>& b) {
  return b + a;
}

template <int W>
inline Dual<W> operator-(const Dual<W>& a) {
  Dual<W> r(-a.v);
  for (int i = 0; i < W; ++i) r.d[i] = -a.d[i];
  return r;
}
template <int W>
inline Dual<W> operator-(const Dual<W>& a, const Dual<W>& b) {
  Dual<W> r(a.v - b.v);
  for (int i = 0; i < W; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}
template <int W>
inline Dual<W> operator-(const Dual<W>& a, double b) {
  Dual<W> r = a;
  r.v -= b;
  return r;
}
template <int W>
inline Dual<W> operator-(double a, const Dual<W>& b) {
  Dual<W> r(a - b.v);
  for (int i = 0; i < W; ++i) r.d[i] = -b.d[i];
  return r;
}

template <int W>
inline Dual<W> operator*(const Dual<W>& a, const Dual<W>& b) {
  Dual<W> r(a.v * b.v);
  for (int i = 0; i < W; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
template <int W>
inline Dual<W> operator*(const Dual<W>& a, double b) {
  Dual<W> r(a.v * b);
  for (int i = 0; i < W; ++i) r.d[i] = a.d[i] * b;
  return r;
}
template <int W>
inline Dual<W> operator*(double a, const Dual<W>& b) {
  return b * a;
}

template <int W>
inline Dual<W> operator/(const Dual<W>& a, const Dual<W>& b) {
  if (b.v == 0.0) throw DomainError("dual division by zero");
  const double inv = 1.0 / b.v;
  Dual<W> r(a.v * inv);
  for (int i = 0; i < W; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) * inv;
  return r;
}
template <int W>
inline Dual<W> operator/(const Dual<W>& a, double b) {
  if (b == 0.0) throw DomainError("dual division by zero");
  return a * (1.0 / b);
}
template <int W>
inline Dual<W> operator/(double a, const Dual<W>& b) {
  if (b.v == 0.0) throw DomainError("dual division by zero");
  const double inv = 1.0 / b.v;
  Dual<W> r(a * inv);
  for (int i = 0; i < W; ++i) r.d[i] = -r.v * inv * b.d[i];
  return r;
}

template <int W>
inline Dual<W>& operator+=(Dual<W>& a, const Dual<W>& b) {
  a = a + b;
  return a;
}
template <int W>
inline Dual<W>& operator-=(Dual<W>& a, const Dual<W>& b) {
  a = a - b;
  return a;
}

// ---- elementary functions --------------------------------------------------

template <int W>
inline Dual<W> exp(const Dual<W>& a) {
  const double e = std::exp(a.v);
  Dual<W> r(e);
  for (int i = 0; i < W; ++i) r.d[i] = e * a.d[i];
  return r;
}

template <int W>
inline Dual<W> log(const Dual<W>& a) {
  if (a.v <= 0.0) throw DomainError("dual log of non-positive value");
  Dual<W> r(std::log(a.v));
  const double inv = 1.0 / a.v;
  for (int i = 0; i < W; ++i) r.d[i] = inv * a.d[i];
  return r;
}

template <int W>
inline Dual<W> sqrt(const Dual<W>& a) {
  if (a.v < 0.0) throw DomainError("dual sqrt of negative value");
  const double s = std::sqrt(a.v);
  Dual<W> r(s);
  const double half_inv = s > 0.0 ? 0.5 / s : 0.0;  // subgradient at 0
  for (int i = 0; i < W; ++i) r.d[i] = half_inv * a.d[i];
  return r;
}

template <int W>
inline Dual<W> tanh(const Dual<W>& a) {
  const double t = std::tanh(a.v);
  Dual<W> r(t);
  const double g = 1.0 - t * t;
  for (int i = 0; i < W; ++i) r.d[i] = g * a.d[i];
  return r;
}

}  // namespace ad

// Generic elementary functions usable with both double and Dual operands.
using std::exp;
using std::log;
using std::sqrt;
using std::tanh;
using ad::exp;
using ad::log;
using ad::sqrt;
using ad::tanh;

/// logistic(x) = 1 / (1 + e^-x), evaluated in the numerically stable branch.
template <class T>
inline T logistic(const T& x) {
  if (val(x) >= 0.0) {
    return 1.0 / (1.0 + exp(-x));
  }
  const T e = exp(x);
  return e / (1.0 + e);
}

/// softplus(x) = log(1 + e^x); linear for large x to avoid overflow.
template <class T>
inline T softplus(const T& x) {
  if (val(x) > 30.0) return x;
  if (val(x) < -30.0) return exp(x);
  return log(1.0 + exp(x));
}

inline double inv_softplus(double y) {
  if (y > 30.0) return y;
  if (y <= 0.0) throw DomainError("inv_softplus needs a positive argument");
  return std::log(std::expm1(y));
}

inline double logit(double p) {
  if (p <= 0.0 || p >= 1.0) throw DomainError("logit needs p in (0, 1)");
  return std::log(p / (1.0 - p));
}

}  // namespace qtraj
