#pragma once

#include <span>
#include <utility>
#include <vector>

#include "qtraj/dual.hpp"
#include "qtraj/errors.hpp"

namespace qtraj::ad {

/// Evaluates fn with seeded dual inputs and returns (value, gradient).
/// fn takes a span of W duals and returns one dual; theta.size() must
/// equal W.  Purely functional, so identical inputs give bit-identical
/// outputs.
template <int W, class Fn>
std::pair<double, std::vector<double>> gradient(Fn&& fn,
                                                std::span<const double> theta) {
  if (theta.size() != static_cast<std::size_t>(W))
    throw InvalidArgument("gradient: parameter count does not match width");
  std::vector<Dual<W>> x(theta.size());
  for (int i = 0; i < W; ++i) x[i] = Dual<W>::seeded(theta[i], i);
  const Dual<W> out = fn(std::span<const Dual<W>>(x));
  return {out.v, std::vector<double>(out.d.begin(), out.d.end())};
}

/// Bias-corrected Adam.  Defaults follow the training protocol used
/// throughout: step size 1e-3, betas (0.9, 0.999), eps 1e-8.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(std::size_t dim, double learning_rate = 1e-3)
      : m(dim, 0.0), v(dim, 0.0), lr(learning_rate) {}
};

void adam_step(AdamState& st, std::span<double> theta,
               std::span<const double> grad);

}  // namespace qtraj::ad
