#include <benchmark/benchmark.h>

#include "qtraj/dual.hpp"
#include "qtraj/parallel.hpp"
#include "qtraj/rnn.hpp"
#include "qtraj/sdelearn.hpp"
#include "qtraj/sme.hpp"

using namespace qtraj;

namespace {

void BM_MilsteinStepDouble(benchmark::State& state) {
  const auto m = sme::default_device();
  Complex2x2 rho = rho_from_bloch(prep_bloch(2));
  SplitMix64 rng(1);
  for (auto _ : state) {
    const auto [a, b] = rng.gauss_pair();
    rho = sme::milstein_step(rho, 0.2 * a, 0.2 * b, m, 0.04);
    benchmark::DoNotOptimize(rho);
  }
}
BENCHMARK(BM_MilsteinStepDouble);

void BM_MilsteinStepDual3(benchmark::State& state) {
  using D = ad::Dual<3>;
  const sde::ParamPack pack =
      sde::pack_from_model(sde::PackKind::Constrained, sme::default_device());
  std::vector<D> u(3);
  for (int i = 0; i < 3; ++i) u[i] = D::seeded(pack.u[i], i);
  const auto m = sde::materialize<D>(sde::PackKind::Constrained,
                                     std::span<const D>(u));
  Mat2<D> rho = rho_from_bloch(sde::promote3<D>(prep_bloch(2)));
  SplitMix64 rng(1);
  for (auto _ : state) {
    const auto [a, b] = rng.gauss_pair();
    rho = sme::milstein_step(rho, D(0.2 * a), D(0.2 * b), m, 0.04);
    benchmark::DoNotOptimize(rho);
  }
}
BENCHMARK(BM_MilsteinStepDual3);

void BM_MilsteinStepDual12(benchmark::State& state) {
  using D = ad::Dual<12>;
  const sde::ParamPack pack =
      sde::pack_from_model(sde::PackKind::Operator, sme::default_device());
  std::vector<D> u(12);
  for (int i = 0; i < 12; ++i) u[i] = D::seeded(pack.u[i], i);
  const auto m =
      sde::materialize<D>(sde::PackKind::Operator, std::span<const D>(u));
  Mat2<D> rho = rho_from_bloch(sde::promote3<D>(prep_bloch(2)));
  SplitMix64 rng(1);
  for (auto _ : state) {
    const auto [a, b] = rng.gauss_pair();
    rho = sme::milstein_step(rho, D(0.2 * a), D(0.2 * b), m, 0.04);
    benchmark::DoNotOptimize(rho);
  }
}
BENCHMARK(BM_MilsteinStepDual12);

void BM_GenerateTrajectory(benchmark::State& state) {
  const auto m = sme::default_device();
  std::uint64_t seed = 0;
  for (auto _ : state) {
    auto shot = sme::generate_trajectory(0, Axis::Z, m, 8.0, 0.001, ++seed);
    benchmark::DoNotOptimize(shot);
  }
  state.SetItemsProcessed(state.iterations() * 8000);
}
BENCHMARK(BM_GenerateTrajectory);

void BM_GruBatchLoss(benchmark::State& state) {
  sme::DatasetMeta meta;
  meta.dt = 0.04;
  meta.dt_fine = 0.04;
  meta.t_grid = {2.0};
  meta.shots_per_cell = 8;
  meta.master_seed = 2;
  meta.generator = sme::default_device();
  par::Pool pool(1);
  const auto data = sme::generate_dataset(meta, pool);
  std::vector<std::size_t> idx(data.shots.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto model = rnn::init_gru(16, 3);
  std::vector<double> grad(model.n_params());
  const auto spam = sde::ideal_spam();
  for (auto _ : state) {
    const auto bl = rnn::batch_loss(model, data, idx, {0.36, 1.7, 2.1}, spam,
                                    pool, grad);
    benchmark::DoNotOptimize(bl);
  }
  state.SetItemsProcessed(state.iterations() * idx.size() * 50);
}
BENCHMARK(BM_GruBatchLoss);

void BM_FilteredShotCe(benchmark::State& state) {
  const auto m = sme::default_device();
  const auto shot = sme::generate_trajectory(2, Axis::Z, m, 8.0, 0.04, 7);
  const auto spam = sde::ideal_spam();
  const auto pack = sde::pack_from_model(sde::PackKind::Constrained, m);
  for (auto _ : state) {
    const double ce = sde::shot_ce_t<double>(
        sde::PackKind::Constrained, std::span<const double>(pack.u), spam,
        shot);
    benchmark::DoNotOptimize(ce);
  }
  state.SetItemsProcessed(state.iterations() * 200);
}
BENCHMARK(BM_FilteredShotCe);

}  // namespace

BENCHMARK_MAIN();
