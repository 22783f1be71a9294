// Nested-model studies: these train real models and take minutes, which is
// why they live in their own binary.
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "qtraj/sdelearn.hpp"

using namespace qtraj;
using namespace qtraj::sde;

namespace {

par::Pool& test_pool() {
  static par::Pool pool(0);
  return pool;
}

sme::Dataset tilt_dataset(double tilt, std::uint64_t seed, int per_cell) {
  sme::PhysicalModel m = sme::rabi_dephasing_model(1.395, 1.176, 0.4);
  // sx admixture on the monitored operator
  const double amp = tilt * std::sqrt(1.176 / 2.0);
  m.l = m.l + scaled(sigma_x<double>(), amp);
  sme::DatasetMeta meta;
  meta.dt = 0.04;
  meta.dt_fine = 0.04;
  meta.t_grid = {2.0};
  meta.shots_per_cell = per_cell;
  meta.master_seed = seed;
  meta.generator = m;
  return sme::generate_dataset(meta, test_pool());
}

TrainConfig study_config(std::uint64_t seed, int ensemble, int epochs) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.ensemble = ensemble;
  cfg.epochs = epochs;
  cfg.patience = 18;
  cfg.batch = 1024;
  return cfg;
}

}  // namespace

TEST_CASE("a tilted monitored operator rewards the unconstrained pack") {
  const auto data = tilt_dataset(0.1, 2718, 1200);  // 21600 shots

  const auto rep_c =
      train_sde(data, PackKind::Constrained, study_config(21, 2, 60),
                test_pool());
  const auto rep_o =
      train_sde(data, PackKind::Operator, study_config(22, 3, 80), test_pool());

  const auto sel = model_select({rep_c, rep_o}, data, ideal_spam(), test_pool());
  REQUIRE(sel.comparisons.size() == 1);
  CHECK(sel.comparisons[0].dof == 9);
  // the richer operator model must strictly win on held-out data
  CHECK(sel.test_ce[1] < sel.test_ce[0]);
  CHECK(sel.comparisons[0].lr_stat > 0.0);

  // nested dominance on the training split itself
  const auto train_idx = data.indices_of(sme::Split::Train);
  const double ce_c = dataset_ce(materialize(rep_c.best_pack()), ideal_spam(),
                                 data, train_idx, test_pool());
  const double ce_o = dataset_ce(materialize(rep_o.best_pack()), ideal_spam(),
                                 data, train_idx, test_pool());
  CHECK(ce_o <= ce_c + 1e-3);
}

TEST_CASE("relaxation channels add nothing on relaxation-free data") {
  sme::DatasetMeta meta;
  meta.dt = 0.04;
  meta.dt_fine = 0.04;
  meta.t_grid = {2.0};
  meta.shots_per_cell = 700;  // 12600 shots
  meta.master_seed = 3141;
  meta.generator = sme::rabi_dephasing_model(1.395, 1.176, 0.4);
  const auto data = sme::generate_dataset(meta, test_pool());

  const auto rep_o = train_sde(data, PackKind::Operator,
                               study_config(31, 3, 110), test_pool());
  const auto rep_e = train_sde(data, PackKind::Extended,
                               study_config(32, 3, 110), test_pool());

  const auto sel = model_select({rep_o, rep_e}, data, ideal_spam(), test_pool());
  REQUIRE(sel.comparisons.size() == 1);
  CHECK(sel.comparisons[0].dof == 2);
  // the gain from the extra dissipators stays statistically marginal
  CHECK(std::abs(sel.comparisons[0].lr_stat) < 20.0);
  // and the learned rates themselves are small
  const auto named = named_params(rep_e.best_pack());
  for (const auto& [name, value] : named) {
    if (name == "gamma_up" || name == "gamma_down") CHECK(value < 0.15);
  }
}
