#pragma once

#include <cmath>
#include <vector>

#include "qtraj/qcore.hpp"
#include "qtraj/rng.hpp"
#include "qtraj/sme.hpp"

namespace testutil {

using namespace qtraj;

inline Complex2x2 random_hermitian(SplitMix64& rng, double scale = 2.0) {
  const double a = scale * (2.0 * rng.uniform() - 1.0);
  const double d = scale * (2.0 * rng.uniform() - 1.0);
  const double br = scale * (2.0 * rng.uniform() - 1.0);
  const double bi = scale * (2.0 * rng.uniform() - 1.0);
  return {{a, 0.0}, {br, -bi}, {br, bi}, {d, 0.0}};
}

inline Complex2x2 random_matrix(SplitMix64& rng, double scale = 2.0) {
  auto u = [&] { return scale * (2.0 * rng.uniform() - 1.0); };
  return {{u(), u()}, {u(), u()}, {u(), u()}, {u(), u()}};
}

inline BlochVector random_bloch_in_ball(SplitMix64& rng) {
  for (;;) {
    const BlochVector r{2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0,
                        2.0 * rng.uniform() - 1.0};
    if (bloch_norm2(r) <= 1.0) return r;
  }
}

inline Complex2x2 random_density(SplitMix64& rng) {
  return rho_from_bloch(random_bloch_in_ball(rng));
}

inline Complex2x2 random_traceless_hermitian(SplitMix64& rng,
                                             double scale = 2.0) {
  Complex2x2 h = random_hermitian(rng, scale);
  const double half_tr = 0.5 * trace_re(h);
  h.m00.re -= half_tr;
  h.m11.re -= half_tr;
  return h;
}

inline double bloch_dist(const BlochVector& a, const BlochVector& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// Log-log least-squares slope.
inline double loglog_slope(const std::vector<double>& x,
                           const std::vector<double>& y) {
  const std::size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace testutil
