#include "qtraj/qcore.hpp"

#include <algorithm>
#include <cmath>

namespace qtraj {

double hermiticity_defect(const Complex2x2& m) {
  const Complex2x2 d = m - dagger(m);
  auto mag = [](const cxd& c) { return std::hypot(c.re, c.im); };
  return std::max({mag(d.m00), mag(d.m01), mag(d.m10), mag(d.m11)});
}

double min_eigenvalue(const Complex2x2& m) {
  const double a = m.m00.re;
  const double c = m.m11.re;
  const double off2 = m.m01.re * m.m01.re + m.m01.im * m.m01.im;
  const double mid = 0.5 * (a + c);
  const double rad = std::sqrt(0.25 * (a - c) * (a - c) + off2);
  return mid - rad;
}

double trace_distance(const Complex2x2& a, const Complex2x2& b) {
  const Complex2x2 d = a - b;
  const double t = trace_re(d);
  const double p = d.m00.re;
  const double q = d.m11.re;
  const double off2 = d.m01.re * d.m01.re + d.m01.im * d.m01.im;
  const double rad = std::sqrt(0.25 * (p - q) * (p - q) + off2);
  const double l1 = 0.5 * t + rad;
  const double l2 = 0.5 * t - rad;
  return 0.5 * (std::abs(l1) + std::abs(l2));
}

double max_abs_diff(const Complex2x2& a, const Complex2x2& b) {
  const Complex2x2 d = a - b;
  auto mag = [](const cxd& c) { return std::max(std::abs(c.re), std::abs(c.im)); };
  return std::max({mag(d.m00), mag(d.m01), mag(d.m10), mag(d.m11)});
}

bool all_finite(const Complex2x2& m) {
  auto ok = [](const cxd& c) {
    return std::isfinite(c.re) && std::isfinite(c.im);
  };
  return ok(m.m00) && ok(m.m01) && ok(m.m10) && ok(m.m11);
}

DensityMatrix DensityMatrix::checked(const Complex2x2& m) {
  if (!all_finite(m)) throw InvalidState("density matrix has non-finite entries");
  if (hermiticity_defect(m) > kHermTol)
    throw InvalidState("density matrix is not Hermitian within tolerance");
  if (std::abs(trace_re(m) - 1.0) > kTraceTol)
    throw InvalidState("density matrix does not have unit trace");
  if (min_eigenvalue(m) < -kPositivityTol)
    throw InvalidState("density matrix is not positive within tolerance");
  return DensityMatrix{m};
}

DensityMatrix density_from_bloch(const BlochVector& r) {
  const double n2 = bloch_norm2(r);
  const double lim = 1.0 + kBlochBallTol;
  if (!(n2 <= lim * lim))
    throw InvalidState("Bloch vector lies outside the unit ball");
  return DensityMatrix{rho_from_bloch(r)};
}

BlochVector bloch_from_density(const DensityMatrix& rho) {
  return bloch_from_rho(rho.mat);
}

}  // namespace qtraj
