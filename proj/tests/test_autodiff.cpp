#include "qtraj/autodiff.hpp"

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "qtraj/sdelearn.hpp"
#include "qtraj/sme.hpp"

using namespace qtraj;

TEST_CASE("gradient of a constant is zero") {
  const double theta[2] = {0.3, -1.2};
  auto [v, g] = ad::gradient<2>(
      [](std::span<const ad::Dual<2>>) { return ad::Dual<2>(7.5); },
      std::span<const double>(theta, 2));
  CHECK(v == 7.5);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
}

TEST_CASE("gradient of a shifted quadratic") {
  const double center[3] = {1.0, -2.0, 0.5};
  const double theta[3] = {0.2, 0.4, -0.3};
  auto [v, g] = ad::gradient<3>(
      [&](std::span<const ad::Dual<3>> x) {
        ad::Dual<3> acc(0.0);
        for (int i = 0; i < 3; ++i) {
          const auto d = x[i] - center[i];
          acc += d * d;
        }
        return acc;
      },
      std::span<const double>(theta, 3));
  for (int i = 0; i < 3; ++i) {
    CHECK(g[i] == doctest::Approx(2.0 * (theta[i] - center[i])).epsilon(1e-14));
  }
  CHECK(v > 0.0);
}

TEST_CASE("gradient evaluation is bit-deterministic") {
  const double theta[2] = {0.7, 1.3};
  auto f = [](std::span<const ad::Dual<2>> x) {
    return tanh(x[0] * x[1]) + exp(-x[0]) / (1.0 + x[1] * x[1]);
  };
  auto [v1, g1] = ad::gradient<2>(f, std::span<const double>(theta, 2));
  auto [v2, g2] = ad::gradient<2>(f, std::span<const double>(theta, 2));
  CHECK(v1 == v2);
  CHECK(g1[0] == g2[0]);
  CHECK(g1[1] == g2[1]);
}

TEST_CASE("adam first step has unit-learning-rate magnitude") {
  ad::AdamState st(3, 0.001);
  std::vector<double> theta{1.0, 2.0, 3.0};
  const std::vector<double> g{0.5, 2.0, 17.0};
  const auto before = theta;
  ad::adam_step(st, theta, g);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(std::abs(before[i] - theta[i]) - 0.001) <= 1e-9);
    CHECK(theta[i] < before[i]);  // moved against the gradient
  }
}

TEST_CASE("adam with zero gradient from a fresh state is a no-op") {
  ad::AdamState st(2, 0.001);
  std::vector<double> theta{0.4, -0.9};
  const std::vector<double> g{0.0, 0.0};
  ad::adam_step(st, theta, g);
  CHECK(theta[0] == 0.4);
  CHECK(theta[1] == -0.9);
}

TEST_CASE("adam drives a quadratic to the origin") {
  ad::AdamState st(3, 0.01);
  std::vector<double> theta{1.0, 1.0, 1.0};
  std::vector<double> g(3);
  for (int step = 0; step < 1000; ++step) {
    for (int i = 0; i < 3; ++i) g[i] = 2.0 * theta[i];
    ad::adam_step(st, theta, g);
  }
  const double norm =
      std::sqrt(theta[0] * theta[0] + theta[1] * theta[1] + theta[2] * theta[2]);
  CHECK(norm < 1e-3);
}

TEST_CASE("filter cross entropy gradient matches finite differences") {
  // short-horizon version of the full-trajectory gradient check
  const auto model = sme::default_device();
  const auto shot =
      sme::generate_trajectory(2, Axis::Z, model, 0.8, 0.04, 991);
  const sde::SpamModel spam = sde::ideal_spam();

  const sde::ParamPack truth =
      sde::pack_from_model(sde::PackKind::Constrained, model);
  std::vector<double> u = truth.u;
  u[0] *= 1.07;
  u[1] -= 0.12;
  u[2] += 0.25;

  auto loss_d = [&](std::span<const double> p) {
    return sde::shot_ce_t<double>(sde::PackKind::Constrained, p, spam, shot);
  };
  auto [v, g] = ad::gradient<3>(
      [&](std::span<const ad::Dual<3>> p) {
        return sde::shot_ce_t<ad::Dual<3>>(sde::PackKind::Constrained, p, spam,
                                           shot);
      },
      std::span<const double>(u));
  CHECK(std::isfinite(v));
  for (int i = 0; i < 3; ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(u[i]));
    std::vector<double> up = u, dn = u;
    up[i] += h;
    dn[i] -= h;
    const double fd = (loss_d(up) - loss_d(dn)) / (2.0 * h);
    if (std::abs(g[i]) > 1e-8) {
      CHECK(std::abs(g[i] - fd) <= 1e-4 * std::max(std::abs(fd), 1e-6));
    }
  }
}
