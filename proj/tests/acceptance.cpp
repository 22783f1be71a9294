// Acceptance suite: every criterion prints one PASS/FAIL line and the
// binary exits nonzero if any requested criterion fails.  Run a single
// criterion with `acceptance <n>` or everything with `acceptance all`.
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "qtraj/dataio.hpp"
#include "qtraj/eval.hpp"
#include "qtraj/parallel.hpp"
#include "qtraj/rnn.hpp"
#include "qtraj/sdelearn.hpp"
#include "qtraj/sme.hpp"

using namespace qtraj;
namespace fs = std::filesystem;

namespace {

par::Pool& pool() {
  static par::Pool p(0);
  return p;
}

double named(const sde::ParamPack& pack, const char* name) {
  for (const auto& [k, v] : sde::named_params(pack)) {
    if (k == name) return v;
  }
  throw InvalidArgument(std::string("no parameter named ") + name);
}

constexpr double kOmegaTrue = 1.395;
constexpr double kGammaTrue = 1.176;
constexpr double kEtaTrue = 0.1469;

sme::Dataset make_data(std::vector<double> t_grid, int per_cell,
                       std::uint64_t seed, double dt = 0.04,
                       double dt_fine = 0.001) {
  sme::DatasetMeta meta;
  meta.dt = dt;
  meta.dt_fine = dt_fine;
  meta.t_grid = std::move(t_grid);
  meta.shots_per_cell = per_cell;
  meta.master_seed = seed;
  meta.generator = sme::default_device();
  return sme::generate_dataset(meta, pool());
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness: forward-mode through the full filter and BPTT
//    through the unrolled network both match central finite differences.
// ---------------------------------------------------------------------------
bool criterion_1() {
  const auto model = sme::default_device();
  const auto spam = sde::ideal_spam();
  const sde::ParamPack truth =
      sde::pack_from_model(sde::PackKind::Constrained, model);

  double worst_sde = 0.0;
  int done = 0;
  std::uint64_t attempt = 0;
  while (done < 10 && attempt < 200) {
    ++attempt;
    SplitMix64 rng(derive_seed(11001, attempt));
    const auto shot = sme::generate_trajectory(
        static_cast<int>(rng.next() % 6), static_cast<Axis>(rng.next() % 3),
        model, 8.0, 0.04, derive_seed(11002, attempt));
    std::vector<double> u = truth.u;
    for (auto& v : u) v += 0.4 * (2.0 * rng.uniform() - 1.0);

    // finite differences are only meaningful while the positivity
    // projection stays inactive along the path
    sme::StepStats stats;
    const double base = sde::shot_ce_t<double>(
        sde::PackKind::Constrained, u, spam, shot, &stats);
    (void)base;
    if (stats.clips > 0) continue;

    auto [value, grad] = ad::gradient<3>(
        [&](std::span<const ad::Dual<3>> p) {
          return sde::shot_ce_t<ad::Dual<3>>(sde::PackKind::Constrained, p,
                                             spam, shot);
        },
        std::span<const double>(u));
    if (!std::isfinite(value)) continue;

    bool clean = true;
    double worst_here = 0.0;
    for (int i = 0; i < 3 && clean; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(u[i]));
      std::vector<double> up = u, dn = u;
      up[i] += h;
      dn[i] -= h;
      sme::StepStats s1, s2;
      const double f_up = sde::shot_ce_t<double>(sde::PackKind::Constrained,
                                                 up, spam, shot, &s1);
      const double f_dn = sde::shot_ce_t<double>(sde::PackKind::Constrained,
                                                 dn, spam, shot, &s2);
      if (s1.clips > 0 || s2.clips > 0) {
        clean = false;
        break;
      }
      const double fd = (f_up - f_dn) / (2.0 * h);
      if (std::abs(grad[i]) <= 1e-8 && std::abs(fd) <= 1e-8) continue;
      worst_here = std::max(
          worst_here, std::abs(grad[i] - fd) /
                          std::max({std::abs(fd), std::abs(grad[i]), 1e-8}));
    }
    if (!clean) continue;
    worst_sde = std::max(worst_sde, worst_here);
    ++done;
  }
  const bool sde_ok = done == 10 && worst_sde <= 1e-4;
  std::printf("  filter gradient: %d/10 parameter sets, worst rel err %.3g\n",
              done, worst_sde);

  // BPTT on a tiny unrolled network, all loss terms active
  sme::Dataset d;
  d.meta.dt = 0.04;
  for (int i = 0; i < 2; ++i) {
    sme::TrajectoryRecord shot;
    shot.prep = static_cast<std::uint8_t>(2 + 3 * i);
    shot.axis = i ? Axis::Z : Axis::X;
    shot.outcome = i ? -1 : 1;
    shot.record.dt = 0.04;
    SplitMix64 rng(derive_seed(11003, i));
    for (int t = 0; t < 5; ++t) {
      const auto [a, b] = rng.gauss_pair();
      shot.record.dm_i.push_back(a * 0.2);
      shot.record.dm_q.push_back(b * 0.2);
    }
    d.shots.push_back(std::move(shot));
    d.split.push_back(sme::Split::Train);
  }
  const std::vector<std::size_t> idx{0, 1};
  const rnn::LossWeights w{0.36, 1.7, 2.1};
  rnn::GruModel gm;
  gm.hidden = 3;
  {
    const auto lay = rnn::gru_layout(3);
    gm.theta.resize(lay.total);
    for (std::size_t i = 0; i < lay.total; ++i)
      gm.theta[i] = 0.35 * std::sin(0.9 * static_cast<double>(i) + 0.2);
    gm.theta[lay.bd + 1] = 1.05;  // keep the positivity term active
  }
  std::vector<double> grad(gm.n_params());
  (void)rnn::batch_loss(gm, d, idx, w, spam, pool(), grad);
  double worst_rnn = 0.0;
  for (std::size_t i = 0; i < gm.n_params(); ++i) {
    const double h = 1e-6;
    rnn::GruModel pert = gm;
    pert.theta[i] += h;
    const double f_up = rnn::batch_loss(pert, d, idx, w, spam, pool()).total;
    pert.theta[i] = gm.theta[i] - h;
    const double f_dn = rnn::batch_loss(pert, d, idx, w, spam, pool()).total;
    const double fd = (f_up - f_dn) / (2.0 * h);
    if (std::abs(grad[i]) <= 1e-8 && std::abs(fd) <= 1e-8) continue;
    worst_rnn = std::max(
        worst_rnn, std::abs(grad[i] - fd) /
                       std::max({std::abs(fd), std::abs(grad[i]), 1e-8}));
  }
  const bool rnn_ok = worst_rnn <= 1e-4;
  std::printf("  backprop gradient: worst rel err %.3g over %zu weights\n",
              worst_rnn, gm.n_params());
  return sde_ok && rnn_ok;
}

// ---------------------------------------------------------------------------
// 2. Strong convergence order of the integrator against a dt/1024
//    reference on the same Brownian paths.
// ---------------------------------------------------------------------------
bool criterion_2() {
  const auto m = sme::default_device();
  const auto ch = sme::make_channels(m);
  const double total_t = 0.64;
  const std::vector<double> dts{0.04, 0.02, 0.01, 0.005};
  const int n_paths = 100;

  std::vector<double> mean_err(dts.size(), 0.0);
  for (std::size_t lvl = 0; lvl < dts.size(); ++lvl) {
    const double dt = dts[lvl];
    const int sub = 1024;
    const double h = dt / sub;
    const auto n_coarse = static_cast<std::size_t>(std::llround(total_t / dt));
    std::vector<double> errs(n_paths, 0.0);
    pool().for_chunks(n_paths, 4, [&](std::size_t, std::size_t b,
                                      std::size_t e) {
      for (std::size_t p = b; p < e; ++p) {
        SplitMix64 rng(derive_seed(derive_seed(22002, lvl), p));
        Complex2x2 ref = rho_from_bloch(prep_bloch(2));
        Complex2x2 coarse = ref;
        const double sq_h = std::sqrt(h);
        for (std::size_t j = 0; j < n_coarse; ++j) {
          double wi = 0.0, wq = 0.0;
          for (int s = 0; s < sub; ++s) {
            const auto [a, bq] = rng.gauss_pair();
            const double dwi = a * sq_h;
            const double dwq = bq * sq_h;
            ref = sme::milstein_step(ref, dwi, dwq, m, ch, h);
            wi += dwi;
            wq += dwq;
          }
          coarse = sme::milstein_step(coarse, wi, wq, m, ch, dt);
        }
        errs[p] = trace_distance(coarse, ref);
      }
    });
    for (const double e : errs) mean_err[lvl] += e;
    mean_err[lvl] /= n_paths;
  }

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < dts.size(); ++i) {
    const double lx = std::log(dts[i]);
    const double ly = std::log(mean_err[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double n = static_cast<double>(dts.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  std::printf("  pathwise errors:");
  for (std::size_t i = 0; i < dts.size(); ++i)
    std::printf(" dt=%.3f:%.3e", dts[i], mean_err[i]);
  std::printf("\n  log-log slope %.3f (need [0.8, 1.2])\n", slope);
  return slope >= 0.8 && slope <= 1.2;
}

// ---------------------------------------------------------------------------
// 3. Parameter recovery from 20k shots at dt = 0.04.
// ---------------------------------------------------------------------------
bool criterion_3() {
  // dyadic duration grid: uniform spacings would alias the drive
  // frequency in the mean curves that seed the initialization
  const auto data = make_data({0.4, 0.8, 1.6, 3.2, 6.4}, 223, 33003);
  std::printf("  dataset: %zu shots at dt %.3f\n", data.shots.size(),
              data.meta.dt);

  sde::TrainConfig cfg;
  cfg.seed = 337;
  cfg.ensemble = 8;
  cfg.epochs = 400;
  cfg.patience = 60;
  cfg.lr = 0.005;
  const auto rep = sde::train_sde(data, sde::PackKind::Constrained, cfg, pool());

  const double omega = named(rep.best_pack(), "omega_r");
  const double gamma = named(rep.best_pack(), "gamma_d");
  const double eta = named(rep.best_pack(), "eta");
  const double e_omega = std::abs(omega - kOmegaTrue) / kOmegaTrue;
  const double e_gamma = std::abs(gamma - kGammaTrue) / kGammaTrue;
  const double e_eta = std::abs(eta - kEtaTrue) / kEtaTrue;
  std::printf(
      "  learned omega %.4f (err %.2f%%), gamma %.4f (err %.2f%%), eta %.4f "
      "(err %.2f%%)\n",
      omega, 100 * e_omega, gamma, 100 * e_gamma, eta, 100 * e_eta);
  std::printf("  best validation ce %.5f\n", rep.best_metric());
  return e_omega <= 0.02 && e_gamma <= 0.05 && e_eta <= 0.10;
}

// ---------------------------------------------------------------------------
// 4. Coarse-graining degrades the learned parameters and the achievable
//    cross entropy; learned models stay at or below the true-parameter
//    cross entropy at every step size.
// ---------------------------------------------------------------------------
bool criterion_4() {
  sme::DatasetMeta meta;
  meta.dt = 0.001;  // the record grid of the fine set itself
  meta.dt_fine = 0.001;
  meta.t_grid = {0.4, 0.8, 1.6, 3.2};
  meta.shots_per_cell = 140;  // 10080 shots
  meta.master_seed = 44004;
  meta.generator = sme::default_device();
  const auto fine = sme::generate_dataset(meta, pool());
  std::printf("  fine dataset: %zu shots\n", fine.shots.size());

  eval::CoarseStudyConfig cfg;
  cfg.k_list = {4, 40, 200};  // dt = 0.004, 0.04, 0.2
  cfg.kind = sde::PackKind::Constrained;
  cfg.train.seed = 447;
  cfg.train.ensemble = 4;
  cfg.train.epochs = 300;
  cfg.train.patience = 40;
  cfg.train.lr = 0.005;
  const auto rep = eval::coarse_study(fine, sme::default_device(), cfg, pool());

  bool ok = true;
  for (const auto& row : rep.rows) {
    std::printf(
        "  dt %.3f: rel err (%.3f, %.3f, %.3f), learned ce %.5f, true ce "
        "%.5f\n",
        row.dt, row.rel_err_omega, row.rel_err_gamma, row.rel_err_eta,
        row.learned_ce, row.true_ce);
    ok = ok && row.learned_ce <= row.true_ce;
  }
  const auto& fine_row = rep.rows.front();
  const auto& coarse_row = rep.rows.back();
  ok = ok && coarse_row.rel_err_omega > fine_row.rel_err_omega;
  ok = ok && coarse_row.rel_err_gamma > fine_row.rel_err_gamma;
  ok = ok && coarse_row.rel_err_eta > fine_row.rel_err_eta;
  ok = ok && rep.rows[0].true_ce < rep.rows[1].true_ce &&
       rep.rows[1].true_ce < rep.rows[2].true_ce;
  return ok;
}

// ---------------------------------------------------------------------------
// Shared 100k-shot studies for criteria 5 and 6.
// ---------------------------------------------------------------------------
struct BaselineStudy {
  sme::Dataset data;
  rnn::GruModel pinn;
  rnn::RnnReport pinn_report;
  std::vector<std::size_t> test_idx;
};

BaselineStudy train_pinn_study() {
  BaselineStudy st;
  st.data = make_data({0.0, 0.4, 0.8, 1.2, 1.6, 2.0}, 926, 55005);  // 100008
  st.test_idx = st.data.indices_of(sme::Split::Test);

  rnn::RnnTrainConfig rc;
  rc.hidden = 16;
  rc.epochs = 20;
  rc.patience = 20;
  rc.seed = 551;
  auto [model, report] =
      rnn::train_rnn(st.data, {0.36, 1.7, 2.1}, rc, pool());
  st.pinn = std::move(model);
  st.pinn_report = std::move(report);
  return st;
}

double rnn_test_ce(const BaselineStudy& st, const rnn::GruModel& m) {
  const auto pi =
      rnn::outcome_probs(m, st.data, st.test_idx, sde::ideal_spam(), pool());
  std::vector<std::int8_t> y(st.test_idx.size());
  for (std::size_t k = 0; k < y.size(); ++k)
    y[k] = st.data.shots[st.test_idx[k]].outcome;
  return eval::ce_metric(pi, y);
}

double rnn_test_mse(const BaselineStudy& st, const rnn::GruModel& m) {
  const auto fw = rnn::forward_all(m, st.data, st.test_idx, pool());
  std::vector<std::vector<RawBloch>> pred(fw.size());
  std::vector<std::vector<BlochVector>> truth(fw.size());
  for (std::size_t k = 0; k < fw.size(); ++k) {
    pred[k] = fw[k].r;
    truth[k] = st.data.shots[st.test_idx[k]].truth;
  }
  return eval::mse_vs_truth(pred, truth).total;
}

// ---------------------------------------------------------------------------
// 5. Record-aware models beat the record-blind baseline, and the model-
//    based filter reconstructs trajectories an order of magnitude better
//    than the network.
// ---------------------------------------------------------------------------
bool criterion_5() {
  BaselineStudy st = train_pinn_study();
  const auto spam = sde::ideal_spam();
  const double me_ce = sde::me_baseline_ce(sme::default_device(), spam,
                                           st.data, st.test_idx);
  const double pinn_ce = rnn_test_ce(st, st.pinn);
  std::printf("  me baseline ce %.5f, pinn test ce %.5f (best epoch %d)\n",
              me_ce, pinn_ce, st.pinn_report.best_epoch);

  sde::TrainConfig cfg;
  cfg.seed = 552;
  cfg.ensemble = 4;
  cfg.epochs = 120;
  cfg.patience = 20;
  cfg.lr = 0.005;
  const auto rep =
      sde::train_sde(st.data, sde::PackKind::Constrained, cfg, pool());
  const auto model = sde::materialize(rep.best_pack());
  const double sde_ce =
      sde::dataset_ce(model, spam, st.data, st.test_idx, pool());

  std::vector<std::vector<RawBloch>> pred(st.test_idx.size());
  std::vector<std::vector<BlochVector>> truth(st.test_idx.size());
  for (std::size_t k = 0; k < st.test_idx.size(); ++k) {
    const auto series =
        sde::infer_trajectory(model, spam, st.data.shots[st.test_idx[k]]);
    pred[k].reserve(series.size());
    for (const auto& r : series) pred[k].push_back({r.x, r.y, r.z});
    truth[k] = st.data.shots[st.test_idx[k]].truth;
  }
  const double sde_mse = eval::mse_vs_truth(pred, truth).total;
  const double pinn_mse = rnn_test_mse(st, st.pinn);
  std::printf("  sde test ce %.5f, trajectory mse: sde %.3e vs pinn %.3e\n",
              sde_ce, sde_mse, pinn_mse);

  return sde_ce < me_ce && pinn_ce < me_ce && sde_mse <= 0.1 * pinn_mse;
}

// ---------------------------------------------------------------------------
// 6. The physics-inspired losses improve the learned trajectories over a
//    bare cross-entropy network of the same architecture and seed, and
//    the prediction head extracts the deterministic record content.
// ---------------------------------------------------------------------------
bool criterion_6() {
  BaselineStudy st = train_pinn_study();

  rnn::RnnTrainConfig rc;
  rc.hidden = 16;
  rc.epochs = 20;
  rc.patience = 20;
  rc.seed = 551;  // same seed set as the physics-inspired run
  auto [bbnn, bb_report] =
      rnn::train_rnn(st.data, {0.0, 0.0, 0.0}, rc, pool());
  (void)bb_report;

  const double pinn_mse = rnn_test_mse(st, st.pinn);
  const double bbnn_mse = rnn_test_mse(st, bbnn);
  std::printf("  trajectory mse over [0, 2] us: pinn %.3e vs bbnn %.3e\n",
              pinn_mse, bbnn_mse);

  // denoising property of the prediction head on the I quadrature
  const auto fw = rnn::forward_all(st.pinn, st.data, st.test_idx, pool());
  const auto model = sme::default_device();
  const double pref = std::sqrt(model.eta * 0.5);
  double s_pd = 0, s_pn = 0, s_pp = 0, s_dd = 0, s_nn = 0, s_p = 0, s_d = 0,
         s_n = 0;
  long cnt = 0;
  for (std::size_t k = 0; k < st.test_idx.size(); ++k) {
    const auto& shot = st.data.shots[st.test_idx[k]];
    for (std::size_t t = 0; t < shot.record.steps(); ++t) {
      const auto rho = rho_from_bloch(shot.truth[t]);
      const auto [si, sq] = sme::record_signals(rho, model);
      (void)sq;
      const double det = pref * si * shot.record.dt;
      const double noise = shot.record.dm_i[t] - det;
      const double p = fw[k].dm_pred[t][0];
      s_pd += p * det;
      s_pn += p * noise;
      s_pp += p * p;
      s_dd += det * det;
      s_nn += noise * noise;
      s_p += p;
      s_d += det;
      s_n += noise;
      ++cnt;
    }
  }
  const double nshots = static_cast<double>(cnt);
  const double cov_pd = s_pd / nshots - (s_p / nshots) * (s_d / nshots);
  const double cov_pn = s_pn / nshots - (s_p / nshots) * (s_n / nshots);
  const double var_p = s_pp / nshots - (s_p / nshots) * (s_p / nshots);
  const double var_d = s_dd / nshots - (s_d / nshots) * (s_d / nshots);
  const double var_n = s_nn / nshots - (s_n / nshots) * (s_n / nshots);
  const double corr_det = cov_pd / std::sqrt(var_p * var_d);
  const double corr_noise = cov_pn / std::sqrt(var_p * var_n);
  std::printf("  prediction-head correlation: deterministic %.3f vs noise %.3f\n",
              corr_det, corr_noise);

  return pinn_mse < bbnn_mse && corr_det > corr_noise;
}

// ---------------------------------------------------------------------------
// 7. Calibration of the true-parameter filter's outcome predictions.
// ---------------------------------------------------------------------------
bool criterion_7() {
  const auto data = make_data({2.0}, 2778, 77007);  // 50004 shots
  const auto model = sme::default_device();
  const auto spam = sde::ideal_spam();

  std::vector<double> pi(data.shots.size());
  std::vector<std::int8_t> y(data.shots.size());
  pool().for_chunks(data.shots.size(), 64,
                    [&](std::size_t, std::size_t b, std::size_t e) {
                      for (std::size_t i = b; i < e; ++i) {
                        const auto series =
                            sde::infer_trajectory(model, spam, data.shots[i]);
                        pi[i] = sde::predict_outcome_prob(
                            series.back(), data.shots[i].axis, spam);
                        y[i] = data.shots[i].outcome;
                      }
                    });
  const auto rep = eval::self_consistency(pi, y, 0.04);
  std::printf("  %zu shots, slope %.4f, epsilon %.4f over %zu bins\n",
              rep.n_shots, rep.slope, rep.epsilon, rep.count.size());
  return rep.slope >= 0.9 && rep.slope <= 1.1 && rep.epsilon < 0.02;
}

// ---------------------------------------------------------------------------
// 8. Distilling the network's trajectories into the model recovers the
//    device parameters better than the binning baseline.
// ---------------------------------------------------------------------------
bool criterion_8() {
  const auto data = make_data({0.0, 0.4, 0.8, 1.2, 1.6, 2.0}, 463, 88008);
  std::printf("  dataset: %zu shots\n", data.shots.size());

  rnn::RnnTrainConfig rc;
  rc.hidden = 16;
  rc.epochs = 30;
  rc.patience = 30;
  rc.seed = 881;
  auto [pinn, report] = rnn::train_rnn(data, {0.36, 1.7, 2.1}, rc, pool());
  std::printf("  pinn best val ce %.5f at epoch %d\n", report.best_val_ce,
              report.best_epoch);

  const auto trajs = rnn::trajectories(pinn, data, pool());

  sde::TrainConfig cfg;
  cfg.seed = 882;
  cfg.ensemble = 3;
  cfg.epochs = 150;
  cfg.patience = 25;
  cfg.lr = 0.005;
  const auto distilled =
      sde::distill(trajs, data, sde::PackKind::Constrained, cfg, pool());

  std::vector<std::uint8_t> preps(data.shots.size());
  for (std::size_t i = 0; i < preps.size(); ++i) preps[i] = data.shots[i].prep;
  const auto binned = eval::bin_fit(trajs, preps, data.meta.dt, 0.04);

  const double d_err[3] = {
      std::abs(named(distilled.best_pack(), "omega_r") - kOmegaTrue) /
          kOmegaTrue,
      std::abs(named(distilled.best_pack(), "gamma_d") - kGammaTrue) /
          kGammaTrue,
      std::abs(named(distilled.best_pack(), "eta") - kEtaTrue) / kEtaTrue};
  const double b_err[3] = {std::abs(binned.omega - kOmegaTrue) / kOmegaTrue,
                           std::abs(binned.gamma - kGammaTrue) / kGammaTrue,
                           std::abs(binned.eta - kEtaTrue) / kEtaTrue};
  std::printf("  distilled rel err (%.3f, %.3f, %.3f)\n", d_err[0], d_err[1],
              d_err[2]);
  std::printf("  binning   rel err (%.3f, %.3f, %.3f)\n", b_err[0], b_err[1],
              b_err[2]);

  int better = 0;
  for (int i = 0; i < 3; ++i) {
    if (d_err[i] < b_err[i]) ++better;
  }
  std::printf("  distillation closer to truth in %d of 3 parameters\n", better);
  return better >= 2;
}

// ---------------------------------------------------------------------------
// 9. Infrastructure invariants: bit-exact persistence, worker-count
//    independence, and the zero mean of the signal-free quadrature.
// ---------------------------------------------------------------------------
bool criterion_9() {
  bool ok = true;
  const fs::path base =
      fs::temp_directory_path() / ("qtraj_acc9_" + std::to_string(::getpid()));
  fs::remove_all(base);
  fs::create_directories(base);

  sme::DatasetMeta meta;
  meta.dt = 0.04;
  meta.dt_fine = 0.01;
  meta.t_grid = {0.0, 0.4};
  meta.shots_per_cell = 24;
  meta.master_seed = 99009;
  meta.generator = sme::default_device();

  {  // round trip: load(save(d)) then save again, byte-identical
    par::Pool p4(4);
    const auto d = sme::generate_dataset(meta, p4);
    io::save_dataset(d, base / "a");
    const auto loaded = io::load_dataset(base / "a");
    io::save_dataset(loaded, base / "b");
    const bool same =
        io::read_text_file(base / "a/records.bin") ==
            io::read_text_file(base / "b/records.bin") &&
        io::read_text_file(base / "a/truth.bin") ==
            io::read_text_file(base / "b/truth.bin") &&
        io::read_text_file(base / "a/meta.json") ==
            io::read_text_file(base / "b/meta.json");
    std::printf("  dataset round trip byte-identical: %s\n",
                same ? "yes" : "NO");
    ok = ok && same;
  }

  {  // worker-count invariance of generation, model fit and network fit
    par::Pool p1(1), p4(4), p16(16);
    const auto d1 = sme::generate_dataset(meta, p1);
    const auto d4 = sme::generate_dataset(meta, p4);
    const auto d16 = sme::generate_dataset(meta, p16);
    io::save_dataset(d1, base / "t1");
    io::save_dataset(d4, base / "t4");
    io::save_dataset(d16, base / "t16");
    const bool gen_same =
        io::read_text_file(base / "t1/records.bin") ==
            io::read_text_file(base / "t4/records.bin") &&
        io::read_text_file(base / "t4/records.bin") ==
            io::read_text_file(base / "t16/records.bin");
    std::printf("  generation invariant over 1/4/16 workers: %s\n",
                gen_same ? "yes" : "NO");
    ok = ok && gen_same;

    sde::TrainConfig cfg;
    cfg.seed = 12;
    cfg.ensemble = 2;
    cfg.epochs = 2;
    cfg.batch = 128;
    cfg.init_omega = 1.4;
    cfg.init_gamma = 1.2;
    const auto r1 =
        io::to_json(sde::train_sde(d1, sde::PackKind::Constrained, cfg, p1),
                    false);
    const auto r4 =
        io::to_json(sde::train_sde(d4, sde::PackKind::Constrained, cfg, p4),
                    false);
    const auto r16 =
        io::to_json(sde::train_sde(d16, sde::PackKind::Constrained, cfg, p16),
                    false);
    const bool fit_same = r1 == r4 && r4 == r16;
    std::printf("  model fit invariant over 1/4/16 workers: %s\n",
                fit_same ? "yes" : "NO");
    ok = ok && fit_same;

    rnn::RnnTrainConfig rc;
    rc.hidden = 6;
    rc.epochs = 2;
    rc.batch = 128;
    rc.seed = 13;
    const auto n1 = rnn::train_rnn(d1, {0.36, 1.7, 2.1}, rc, p1);
    const auto n4 = rnn::train_rnn(d4, {0.36, 1.7, 2.1}, rc, p4);
    const auto n16 = rnn::train_rnn(d16, {0.36, 1.7, 2.1}, rc, p16);
    const bool net_same =
        n1.first.theta == n4.first.theta && n4.first.theta == n16.first.theta;
    std::printf("  network fit invariant over 1/4/16 workers: %s\n",
                net_same ? "yes" : "NO");
    ok = ok && net_same;
  }

  {  // Hermitian monitored operator: the Q quadrature is pure noise
    const auto m = sme::default_device();
    SplitMix64 rng(99019);
    const std::size_t n = 1000000;
    const double dt = 0.04;
    double sum = 0.0;
    const Complex2x2 rho = rho_from_bloch(prep_bloch(2));
    for (std::size_t i = 0; i < n; ++i) {
      const auto [a, b] = rng.gauss_pair();
      const auto [mi, mq] =
          sme::synth_record(rho, a * std::sqrt(dt), b * std::sqrt(dt), m, dt);
      (void)mi;
      sum += mq;
    }
    const double mean = sum / static_cast<double>(n);
    const double bound = 4.0 * std::sqrt(dt / static_cast<double>(n));
    std::printf("  Q-quadrature mean %.3e (4-sigma bound %.3e)\n", mean,
                bound);
    ok = ok && std::abs(mean) <= bound;
  }

  fs::remove_all(base);
  return ok;
}

struct Criterion {
  int id;
  const char* name;
  bool (*fn)();
};

const Criterion kCriteria[] = {
    {1, "gradient correctness", criterion_1},
    {2, "integrator strong order", criterion_2},
    {3, "parameter recovery", criterion_3},
    {4, "coarse-graining trend", criterion_4},
    {5, "baseline ordering", criterion_5},
    {6, "physics-inspired loss benefit", criterion_6},
    {7, "prediction self-consistency", criterion_7},
    {8, "extraction ordering", criterion_8},
    {9, "infrastructure invariants", criterion_9},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> wanted;
  if (argc < 2 || std::strcmp(argv[1], "all") == 0) {
    for (const auto& c : kCriteria) wanted.push_back(c.id);
  } else {
    for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
  }

  bool all_ok = true;
  for (const int id : wanted) {
    const Criterion* crit = nullptr;
    for (const auto& c : kCriteria) {
      if (c.id == id) crit = &c;
    }
    if (crit == nullptr) {
      std::printf("unknown criterion %d\n", id);
      return 2;
    }
    std::printf("[criterion %d] %s\n", crit->id, crit->name);
    bool ok = false;
    try {
      ok = crit->fn();
    } catch (const std::exception& e) {
      std::printf("  exception: %s\n", e.what());
    }
    std::printf("[criterion %d] %s\n", crit->id, ok ? "PASS" : "FAIL");
    all_ok = all_ok && ok;
  }
  return all_ok ? 0 : 1;
}
