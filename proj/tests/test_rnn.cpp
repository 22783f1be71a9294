#include "qtraj/rnn.hpp"

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

using namespace qtraj;
using namespace qtraj::rnn;

namespace {

par::Pool& test_pool() {
  static par::Pool pool(4);
  return pool;
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Deterministic non-trivial parameter fill.
GruModel patterned_model(int hidden, double scale = 0.3) {
  const GruLayout lay = gru_layout(hidden);
  GruModel m;
  m.hidden = hidden;
  m.theta.resize(lay.total);
  for (std::size_t i = 0; i < lay.total; ++i) {
    m.theta[i] = scale * std::sin(0.7 * static_cast<double>(i) + 0.3);
  }
  return m;
}

sme::TrajectoryRecord patterned_shot(int prep, Axis axis, int outcome,
                                     std::size_t steps, double dt,
                                     std::uint64_t seed) {
  sme::TrajectoryRecord shot;
  shot.prep = static_cast<std::uint8_t>(prep);
  shot.axis = axis;
  shot.outcome = static_cast<std::int8_t>(outcome);
  shot.record.dt = dt;
  SplitMix64 rng(seed);
  for (std::size_t t = 0; t < steps; ++t) {
    const auto [a, b] = rng.gauss_pair();
    shot.record.dm_i.push_back(a * std::sqrt(dt));
    shot.record.dm_q.push_back(b * std::sqrt(dt));
  }
  return shot;
}

}  // namespace

TEST_CASE("gru cell closed-form checks") {
  SUBCASE("all-zero parameters halve the hidden state") {
    GruModel m;
    m.hidden = 4;
    m.theta.assign(gru_layout(4).total, 0.0);
    const std::vector<double> h{0.2, -0.6, 1.0, 0.4};
    const std::vector<double> x{0.3, -0.1};
    const auto out = gru_cell(m, h, x);
    for (int i = 0; i < 4; ++i) {
      CHECK(out[i] == doctest::Approx(0.5 * h[i]).epsilon(1e-15));
    }
  }
  SUBCASE("zero state and zero parameters stay at zero") {
    GruModel m;
    m.hidden = 3;
    m.theta.assign(gru_layout(3).total, 0.0);
    const std::vector<double> h{0, 0, 0};
    const std::vector<double> x{0.9, -0.5};
    for (const double v : gru_cell(m, h, x)) CHECK(v == 0.0);
  }
}

TEST_CASE("tiny unrolled network matches a hand evaluation") {
  const int hh = 2;
  const GruModel m = patterned_model(hh);
  const GruLayout lay = gru_layout(hh);
  const auto shot = patterned_shot(3, Axis::X, 1, 3, 0.04, 99);

  const auto res = forward(m, shot);
  REQUIRE(res.r.size() == 4);
  REQUIRE(res.dm_pred.size() == 3);

  // independent scalar evaluation of the same equations
  const double* p = m.theta.data();
  auto M = [&](std::size_t off, int r, int c) {
    return p[off + static_cast<std::size_t>(c) * hh + r];
  };
  auto Md = [&](std::size_t off, int r, int c) {
    return p[off + static_cast<std::size_t>(c) * GruModel::kOut + r];
  };
  double h[2];
  for (int i = 0; i < hh; ++i)
    h[i] = std::tanh(M(lay.we, i, shot.prep) + p[lay.be + i]);

  const double sq_dt = std::sqrt(0.04);
  for (std::size_t t = 0; t <= 3; ++t) {
    double d[5];
    for (int o = 0; o < 5; ++o) {
      d[o] = p[lay.bd + o];
      for (int c = 0; c < hh; ++c) d[o] += Md(lay.wd, o, c) * h[c];
    }
    CHECK(res.r[t].x == doctest::Approx(d[0]).epsilon(1e-12));
    CHECK(res.r[t].y == doctest::Approx(d[1]).epsilon(1e-12));
    CHECK(res.r[t].z == doctest::Approx(d[2]).epsilon(1e-12));
    if (t < 3) {
      CHECK(res.dm_pred[t][0] == doctest::Approx(d[3] * sq_dt).epsilon(1e-12));
      CHECK(res.dm_pred[t][1] == doctest::Approx(d[4] * sq_dt).epsilon(1e-12));

      const double x0 = shot.record.dm_i[t] / sq_dt;
      const double x1 = shot.record.dm_q[t] / sq_dt;
      double hn[2];
      for (int i = 0; i < hh; ++i) {
        double pr = p[lay.b_mr + i] + p[lay.b_hr + i] + M(lay.w_mr, i, 0) * x0 +
                    M(lay.w_mr, i, 1) * x1;
        double pz = p[lay.b_mz + i] + p[lay.b_hz + i] + M(lay.w_mz, i, 0) * x0 +
                    M(lay.w_mz, i, 1) * x1;
        double pa = p[lay.b_hn + i];
        double pm = p[lay.b_mn + i] + M(lay.w_mn, i, 0) * x0 +
                    M(lay.w_mn, i, 1) * x1;
        for (int c = 0; c < hh; ++c) {
          pr += M(lay.w_hr, i, c) * h[c];
          pz += M(lay.w_hz, i, c) * h[c];
          pa += M(lay.w_hn, i, c) * h[c];
        }
        const double r = sigmoid_ref(pr);
        const double z = sigmoid_ref(pz);
        const double n = std::tanh(pm + r * pa);
        hn[i] = (1.0 - z) * n + z * h[i];
      }
      h[0] = hn[0];
      h[1] = hn[1];
    }
  }
}

TEST_CASE("forward handles empty records") {
  const GruModel m = patterned_model(5);
  const auto shot = patterned_shot(1, Axis::Z, -1, 0, 0.04, 7);
  const auto res = forward(m, shot);
  CHECK(res.r.size() == 1);
  CHECK(res.dm_pred.empty());
}

TEST_CASE("the preparation enters only through the encode column") {
  const GruModel m = patterned_model(6);
  const GruLayout lay = gru_layout(6);
  auto shot = patterned_shot(0, Axis::Z, 1, 2, 0.04, 21);
  const auto r0 = forward(m, shot).r[0];
  // manual encode+decode of preparation 0
  double h0[6];
  for (int i = 0; i < 6; ++i)
    h0[i] = std::tanh(m.theta[lay.we + 0 * 6 + i] + m.theta[lay.be + i]);
  double d0 = m.theta[lay.bd + 0];
  for (int c = 0; c < 6; ++c)
    d0 += m.theta[lay.wd + static_cast<std::size_t>(c) * 5 + 0] * h0[c];
  CHECK(r0.x == doctest::Approx(d0).epsilon(1e-12));

  shot.prep = 4;
  const auto r4 = forward(m, shot).r[0];
  CHECK(r4.x != r0.x);  // different encode column, different start
}

TEST_CASE("batched forward agrees with the scalar path") {
  const GruModel m = patterned_model(5, 0.25);
  sme::Dataset d;
  d.meta.dt = 0.04;
  for (int i = 0; i < 37; ++i) {
    d.shots.push_back(patterned_shot(i % 6, static_cast<Axis>(i % 3),
                                     i % 2 ? 1 : -1, (i % 4) * 5, 0.04,
                                     derive_seed(1000, i)));
    d.split.push_back(sme::Split::Train);
  }
  std::vector<std::size_t> idx(d.shots.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto batched = forward_all(m, d, idx, test_pool());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto scalar = forward(m, d.shots[i]);
    REQUIRE(batched[i].r.size() == scalar.r.size());
    for (std::size_t t = 0; t < scalar.r.size(); ++t) {
      CHECK(std::abs(batched[i].r[t].x - scalar.r[t].x) <= 1e-12);
      CHECK(std::abs(batched[i].r[t].y - scalar.r[t].y) <= 1e-12);
      CHECK(std::abs(batched[i].r[t].z - scalar.r[t].z) <= 1e-12);
    }
    for (std::size_t t = 0; t < scalar.dm_pred.size(); ++t) {
      CHECK(std::abs(batched[i].dm_pred[t][0] - scalar.dm_pred[t][0]) <= 1e-12);
      CHECK(std::abs(batched[i].dm_pred[t][1] - scalar.dm_pred[t][1]) <= 1e-12);
    }
  }
}

TEST_CASE("loss functions") {
  SUBCASE("cross entropy on known values") {
    {
      const double pi[] = {1.0 - 1e-6};
      const std::int8_t y[] = {1};
      CHECK(ce_loss(pi, y) == doctest::Approx(1e-6).epsilon(1e-3));
    }
    {
      const double pi[] = {0.5};
      const std::int8_t y[] = {1};
      CHECK(ce_loss(pi, y) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    }
    {
      const double pi[] = {0.8, 0.3};
      const std::int8_t y[] = {1, -1};
      const double expected = -0.5 * (std::log(0.8) + std::log(0.7));
      CHECK(ce_loss(pi, y) == doctest::Approx(expected).epsilon(1e-14));
      CHECK(expected == doctest::Approx(0.28990).epsilon(1e-4));
    }
  }

  SUBCASE("positivity loss") {
    std::vector<std::vector<RawBloch>> inside{{{0.1, 0.2, 0.3}, {0, 0, 1.0}}};
    CHECK(posit_loss(inside) == 0.0);
    std::vector<std::vector<RawBloch>> one{{{1.0, 1.0, 1.0}}};
    CHECK(posit_loss(one) == doctest::Approx(2.0).epsilon(1e-15));
    std::vector<std::vector<RawBloch>> two{
        {{0, 0, 0.5}, {0, 0, std::sqrt(2.0)}}};
    CHECK(posit_loss(two) == doctest::Approx(0.5).epsilon(1e-12));
  }

  SUBCASE("adding an outside-sphere state strictly increases the positivity loss") {
    std::vector<std::vector<RawBloch>> batch{{{0.3, 0.3, 0.1}, {0, 0, 0.9}}};
    const double before = posit_loss(batch);
    batch.push_back({{1.2, 0.5, 0.1}});
    CHECK(posit_loss(batch) > before);
  }

  SUBCASE("preparation loss") {
    const RawBloch r0[] = {{0, 0, 1}};
    const BlochVector t0[] = {{0, 0, 1}};
    CHECK(prep_loss(r0, t0) == 0.0);
    const RawBloch r1[] = {{0, 0, 0}};
    CHECK(prep_loss(r1, t0) == doctest::Approx(1.0));
    const RawBloch r2[] = {{0, 0, 0}, {0, 0, 1}};
    const BlochVector t2[] = {{0, 0, 1}, {0, 0, 1}};
    CHECK(prep_loss(r2, t2) == doctest::Approx(0.5));
  }

  SUBCASE("prediction loss") {
    const double a[] = {0.4, -0.2};
    CHECK(pred_loss(a, a) == 0.0);
    const double p[] = {0.1};
    const double q[] = {0.3};
    CHECK(pred_loss(p, q) == doctest::Approx(0.04).epsilon(1e-12));
  }

  SUBCASE("zero predictions on pure noise estimate the increment variance") {
    const double dt = 0.04;
    SplitMix64 rng(55);
    const std::size_t n = 100000;
    std::vector<double> actual(n), zero(n, 0.0);
    for (auto& v : actual) v = rng.gauss_pair().first * std::sqrt(dt);
    const double mse = pred_loss(zero, actual);
    const double rel_se = std::sqrt(2.0 / static_cast<double>(n));
    CHECK(std::abs(mse - dt) <= 5.0 * rel_se * dt);
  }
}

TEST_CASE("backpropagation matches finite differences") {
  sme::Dataset d;
  d.meta.dt = 0.04;
  d.shots.push_back(patterned_shot(2, Axis::X, 1, 5, 0.04, 31));
  d.shots.push_back(patterned_shot(5, Axis::Z, -1, 5, 0.04, 32));
  d.split.assign(2, sme::Split::Train);
  const std::vector<std::size_t> idx{0, 1};
  const LossWeights w{0.36, 1.7, 2.1};
  const auto spam = sde::ideal_spam();

  auto check_grad = [&](const GruModel& m) {
    const GruLayout lay = gru_layout(m.hidden);
    std::vector<double> grad(lay.total);
    const BatchLoss bl =
        batch_loss(m, d, idx, w, spam, test_pool(), grad);
    CHECK(std::isfinite(bl.total));
    GruModel pert = m;
    for (std::size_t i = 0; i < lay.total; ++i) {
      const double h = 1e-6;
      const double orig = pert.theta[i];
      pert.theta[i] = orig + h;
      const double up =
          batch_loss(pert, d, idx, w, spam, test_pool()).total;
      pert.theta[i] = orig - h;
      const double dn =
          batch_loss(pert, d, idx, w, spam, test_pool()).total;
      pert.theta[i] = orig;
      const double fd = (up - dn) / (2.0 * h);
      if (std::abs(grad[i]) > 1e-8 || std::abs(fd) > 1e-8) {
        CHECK(std::abs(grad[i] - fd) <=
              1e-4 * std::max({std::abs(fd), std::abs(grad[i]), 1e-4}));
      }
    }
  };

  SUBCASE("states inside the sphere") { check_grad(patterned_model(3, 0.3)); }

  SUBCASE("states pushed outside the sphere activate the positivity term") {
    GruModel m = patterned_model(3, 0.3);
    const GruLayout lay = gru_layout(3);
    // inflate the decode bias so |r| > 1 along the whole sequence
    m.theta[lay.bd + 0] = 1.1;
    m.theta[lay.bd + 2] = 0.9;
    check_grad(m);
  }
}

TEST_CASE("loss weights of zero reduce the objective to the cross entropy") {
  sme::Dataset d;
  d.meta.dt = 0.04;
  for (int i = 0; i < 8; ++i) {
    d.shots.push_back(patterned_shot(i % 6, static_cast<Axis>(i % 3),
                                     i % 2 ? 1 : -1, 6, 0.04,
                                     derive_seed(91, i)));
    d.split.push_back(sme::Split::Train);
  }
  std::vector<std::size_t> idx(d.shots.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto bl = batch_loss(patterned_model(4), d, idx, {0.0, 0.0, 0.0},
                             sde::ideal_spam(), test_pool());
  CHECK(bl.total == bl.ce);
  CHECK(bl.posit == 0.0);
  CHECK(bl.prep == 0.0);
  CHECK(bl.pred == 0.0);
}

TEST_CASE("training aborts on a divergent loss") {
  sme::Dataset d;
  d.meta.dt = 0.04;
  for (int i = 0; i < 6; ++i) {
    auto shot = patterned_shot(i % 6, Axis::Z, 1, 4, 0.04, derive_seed(8, i));
    shot.record.dm_i[0] = 1e160;  // squared error overflows to inf
    d.shots.push_back(std::move(shot));
    d.split.push_back(i < 4 ? sme::Split::Train : sme::Split::Validation);
  }
  RnnTrainConfig cfg;
  cfg.hidden = 3;
  cfg.epochs = 2;
  cfg.batch = 4;
  CHECK_THROWS_AS(train_rnn(d, {0.36, 1.7, 2.1}, cfg, test_pool()),
                  TrainingDiverged);
}

TEST_CASE("short training run is deterministic and tracked") {
  sme::DatasetMeta meta;
  meta.dt = 0.04;
  meta.dt_fine = 0.04;
  meta.t_grid = {0.4};
  meta.shots_per_cell = 12;
  meta.master_seed = 5;
  meta.generator = sme::default_device();
  par::Pool p1(1);
  const auto d = sme::generate_dataset(meta, p1);

  RnnTrainConfig cfg;
  cfg.hidden = 6;
  cfg.epochs = 3;
  cfg.batch = 64;
  cfg.seed = 17;
  const auto [m1, r1] = train_rnn(d, {0.36, 1.7, 2.1}, cfg, p1);
  const auto [m2, r2] = train_rnn(d, {0.36, 1.7, 2.1}, cfg, test_pool());
  CHECK(m1.theta == m2.theta);
  REQUIRE(r1.curve.size() == r2.curve.size());
  for (std::size_t i = 0; i < r1.curve.size(); ++i) {
    CHECK(r1.curve[i].val_ce == r2.curve[i].val_ce);
    CHECK(r1.curve[i].train_total == r2.curve[i].train_total);
  }
  CHECK(r1.best_val_ce <= r1.init_val_ce + 1e-15);
}
