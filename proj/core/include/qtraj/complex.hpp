#pragma once

namespace qtraj {

/// Complex number over a generic real scalar (double or a forward-mode
/// dual), so the same state algebra serves simulation and learning.
template <class T>
struct Cx {
  T re{};
  T im{};

  Cx() = default;
  Cx(T r) : re(r) {}  // NOLINT: promotion from real wanted
  Cx(T r, T i) : re(r), im(i) {}
};

using cxd = Cx<double>;

template <class T>
inline Cx<T> operator+(const Cx<T>& a, const Cx<T>& b) {
  return {a.re + b.re, a.im + b.im};
}

template <class T>
inline Cx<T> operator-(const Cx<T>& a, const Cx<T>& b) {
  return {a.re - b.re, a.im - b.im};
}

template <class T>
inline Cx<T> operator-(const Cx<T>& a) {
  return {-a.re, -a.im};
}

template <class T>
inline Cx<T> operator*(const Cx<T>& a, const Cx<T>& b) {
  return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}

template <class T>
inline Cx<T> conj(const Cx<T>& a) {
  return {a.re, -a.im};
}

/// Entrywise scaling by a real scalar; S may be double or the dual type.
template <class T, class S>
inline Cx<T> cscale(const Cx<T>& a, const S& s) {
  return {a.re * s, a.im * s};
}

}  // namespace qtraj
