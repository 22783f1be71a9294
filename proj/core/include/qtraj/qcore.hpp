#pragma once

#include <cmath>
#include <cstdint>

#include "qtraj/complex.hpp"
#include "qtraj/dual.hpp"
#include "qtraj/errors.hpp"

namespace qtraj {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Dense 2x2 complex matrix, row-major, generic over the real scalar.
template <class T>
struct Mat2 {
  Cx<T> m00, m01, m10, m11;
};

using Complex2x2 = Mat2<double>;

template <class T>
struct Vec3 {
  T x{}, y{}, z{};
};

/// Bloch vector of a physical state: (<sx>, <sy>, <sz>), |r| <= 1.
using BlochVector = Vec3<double>;

/// Unconstrained model output that may lie outside the Bloch sphere.
struct RawBloch {
  double x{}, y{}, z{};
};

enum class Axis : std::uint8_t { X = 0, Y = 1, Z = 2 };

inline BlochVector axis_unit(Axis a) {
  switch (a) {
    case Axis::X: return {1, 0, 0};
    case Axis::Y: return {0, 1, 0};
    default: return {0, 0, 1};
  }
}

template <class T>
inline T axis_component(const Vec3<T>& r, Axis a) {
  switch (a) {
    case Axis::X: return r.x;
    case Axis::Y: return r.y;
    default: return r.z;
  }
}

/// Cardinal preparation states, indexed 0..5: |0>, |1>, |+>, |->, |+i>, |-i>
/// with the convention sz|0> = +|0>.
inline constexpr int kNumPreps = 6;
inline BlochVector prep_bloch(int prep) {
  switch (prep) {
    case 0: return {0, 0, 1};
    case 1: return {0, 0, -1};
    case 2: return {1, 0, 0};
    case 3: return {-1, 0, 0};
    case 4: return {0, 1, 0};
    case 5: return {0, -1, 0};
    default: throw InvalidArgument("preparation index must be 0..5");
  }
}

// ---------------------------------------------------------------------------
// Matrix algebra
// ---------------------------------------------------------------------------

template <class T>
inline Mat2<T> operator+(const Mat2<T>& a, const Mat2<T>& b) {
  return {a.m00 + b.m00, a.m01 + b.m01, a.m10 + b.m10, a.m11 + b.m11};
}

template <class T>
inline Mat2<T> operator-(const Mat2<T>& a, const Mat2<T>& b) {
  return {a.m00 - b.m00, a.m01 - b.m01, a.m10 - b.m10, a.m11 - b.m11};
}

template <class T>
inline Mat2<T> operator*(const Mat2<T>& a, const Mat2<T>& b) {
  return {a.m00 * b.m00 + a.m01 * b.m10, a.m00 * b.m01 + a.m01 * b.m11,
          a.m10 * b.m00 + a.m11 * b.m10, a.m10 * b.m01 + a.m11 * b.m11};
}

template <class T>
inline Mat2<T> dagger(const Mat2<T>& m) {
  return {conj(m.m00), conj(m.m10), conj(m.m01), conj(m.m11)};
}

template <class T>
inline Cx<T> trace(const Mat2<T>& m) {
  return m.m00 + m.m11;
}

template <class T>
inline T trace_re(const Mat2<T>& m) {
  return m.m00.re + m.m11.re;
}

/// Entrywise scaling by a real scalar (double or dual).
template <class T, class S>
inline Mat2<T> scaled(const Mat2<T>& m, const S& s) {
  return {cscale(m.m00, s), cscale(m.m01, s), cscale(m.m10, s),
          cscale(m.m11, s)};
}

/// Multiplication by -i (rotates each entry: x+iy -> y-ix).
template <class T>
inline Mat2<T> neg_i_times(const Mat2<T>& m) {
  auto rot = [](const Cx<T>& c) { return Cx<T>{c.im, -c.re}; };
  return {rot(m.m00), rot(m.m01), rot(m.m10), rot(m.m11)};
}

/// -i[H, rho], the Hamiltonian part of any master equation here.
template <class T>
inline Mat2<T> neg_i_commutator(const Mat2<T>& h, const Mat2<T>& rho) {
  return neg_i_times(h * rho - rho * h);
}

template <class T>
inline Mat2<T> hermitized(const Mat2<T>& m) {
  return scaled(m + dagger(m), 0.5);
}

template <class T>
inline Mat2<T> zero_mat2() {
  return Mat2<T>{};
}

template <class T>
inline Mat2<T> identity2() {
  return {Cx<T>{T(1)}, Cx<T>{}, Cx<T>{}, Cx<T>{T(1)}};
}

template <class T>
inline Mat2<T> sigma_x() {
  return {Cx<T>{}, Cx<T>{T(1)}, Cx<T>{T(1)}, Cx<T>{}};
}

template <class T>
inline Mat2<T> sigma_y() {
  return {Cx<T>{}, Cx<T>{T(0), T(-1)}, Cx<T>{T(0), T(1)}, Cx<T>{}};
}

template <class T>
inline Mat2<T> sigma_z() {
  return {Cx<T>{T(1)}, Cx<T>{}, Cx<T>{}, Cx<T>{T(-1)}};
}

/// Raising operator |1><0| in the sz|0> = +|0> convention.
template <class T>
inline Mat2<T> sigma_plus() {
  return {Cx<T>{}, Cx<T>{}, Cx<T>{T(1)}, Cx<T>{}};
}

/// Lowering operator |0><1|.
template <class T>
inline Mat2<T> sigma_minus() {
  return {Cx<T>{}, Cx<T>{T(1)}, Cx<T>{}, Cx<T>{}};
}

// ---------------------------------------------------------------------------
// State maps
// ---------------------------------------------------------------------------

/// rho = (I + r.sigma)/2.
template <class T>
inline Mat2<T> rho_from_bloch(const Vec3<T>& r) {
  const T half(0.5);
  return {Cx<T>{(1.0 + r.z) * half}, Cx<T>{r.x * half, -r.y * half},
          Cx<T>{r.x * half, r.y * half}, Cx<T>{(1.0 - r.z) * half}};
}

/// Component alpha = Re Tr(sigma_alpha rho).
template <class T>
inline Vec3<T> bloch_from_rho(const Mat2<T>& rho) {
  return {rho.m01.re + rho.m10.re, rho.m10.im - rho.m01.im,
          rho.m00.re - rho.m11.re};
}

template <class T>
inline T bloch_norm2(const Vec3<T>& r) {
  return r.x * r.x + r.y * r.y + r.z * r.z;
}

// ---------------------------------------------------------------------------
// Generator pieces
// ---------------------------------------------------------------------------

/// D[L]rho = L rho L^+ - (L^+L rho + rho L^+L)/2.
template <class T>
inline Mat2<T> dissipator(const Mat2<T>& l, const Mat2<T>& rho) {
  const Mat2<T> ld = dagger(l);
  const Mat2<T> ldl = ld * l;
  return l * rho * ld - scaled(ldl * rho + rho * ldl, 0.5);
}

/// H[c]rho = c rho + rho c^+ - rho Tr[rho (c + c^+)], the conditional
/// update generated by monitoring channel c.
template <class T>
inline Mat2<T> meas_superop(const Mat2<T>& c, const Mat2<T>& rho) {
  const Mat2<T> cd = dagger(c);
  const T s = trace_re(rho * (c + cd));
  return c * rho + rho * cd - scaled(rho, s);
}

/// Directional derivative of H[c] at rho along B.  H[c] is quadratic in
/// rho, so this is exact:
///   D_B H[c]rho = cB + Bc^+ - B Tr[rho(c+c^+)] - rho Tr[B(c+c^+)].
template <class T>
inline Mat2<T> meas_superop_dderiv(const Mat2<T>& c, const Mat2<T>& rho,
                                   const Mat2<T>& b) {
  const Mat2<T> cd = dagger(c);
  const Mat2<T> cpc = c + cd;
  return c * b + b * cd - scaled(b, trace_re(rho * cpc)) -
         scaled(rho, trace_re(b * cpc));
}

// ---------------------------------------------------------------------------
// Validated density matrix (double precision, API boundary type)
// ---------------------------------------------------------------------------

inline constexpr double kHermTol = 1e-12;
inline constexpr double kTraceTol = 1e-12;
inline constexpr double kPositivityTol = 1e-9;
inline constexpr double kBlochBallTol = 2e-9;

double hermiticity_defect(const Complex2x2& m);
double min_eigenvalue(const Complex2x2& hermitian);
/// Trace distance (1/2)Tr|a - b| for Hermitian a, b.
double trace_distance(const Complex2x2& a, const Complex2x2& b);
double max_abs_diff(const Complex2x2& a, const Complex2x2& b);
bool all_finite(const Complex2x2& m);

struct DensityMatrix {
  Complex2x2 mat;

  /// Validates Hermiticity, unit trace and positivity within tolerance.
  static DensityMatrix checked(const Complex2x2& m);
};

/// Validating map from a Bloch vector; rejects |r| > 1 + 2e-9.
DensityMatrix density_from_bloch(const BlochVector& r);
BlochVector bloch_from_density(const DensityMatrix& rho);

inline Complex2x2 dissipator(const Complex2x2& l, const DensityMatrix& rho) {
  return dissipator(l, rho.mat);
}
inline Complex2x2 meas_superop(const Complex2x2& c, const DensityMatrix& rho) {
  return meas_superop(c, rho.mat);
}
inline Complex2x2 meas_superop_dderiv(const Complex2x2& c,
                                      const DensityMatrix& rho,
                                      const Complex2x2& b) {
  return meas_superop_dderiv(c, rho.mat, b);
}

}  // namespace qtraj
