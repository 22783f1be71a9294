#include "qtraj/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace qtraj::eval {

SelfConsistencyReport self_consistency(std::span<const double> pi,
                                       std::span<const std::int8_t> y,
                                       double delta) {
  if (pi.size() != y.size())
    throw InvalidArgument("self_consistency: length mismatch");
  if (!(delta > 0.0 && delta < 1.0))
    throw InvalidArgument("self_consistency: delta must lie in (0, 1)");

  const auto n_bins = static_cast<std::size_t>(std::ceil(1.0 / delta));
  // Accumulate in a canonical sorted order so the report is a pure
  // function of the multiset of (prediction, outcome) pairs.
  std::vector<std::pair<double, std::int8_t>> entries(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) {
    if (!(pi[i] >= 0.0 && pi[i] <= 1.0))
      throw InvalidArgument("self_consistency: probabilities must lie in [0, 1]");
    entries[i] = {pi[i], y[i]};
  }
  std::sort(entries.begin(), entries.end());
  std::vector<double> sum_pred(n_bins, 0.0), sum_emp(n_bins, 0.0);
  std::vector<long> count(n_bins, 0);
  for (const auto& [p, yy] : entries) {
    auto b = static_cast<std::size_t>(p / delta);
    if (b >= n_bins) b = n_bins - 1;
    sum_pred[b] += p;
    sum_emp[b] += 0.5 * (1.0 + yy);
    ++count[b];
  }

  SelfConsistencyReport rep;
  rep.delta = delta;
  rep.n_shots = pi.size();
  double wsum = 0.0, werr = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const double cb = static_cast<double>(count[b]);
    const double pm = sum_pred[b] / cb;
    const double em = sum_emp[b] / cb;
    rep.bin_center.push_back((static_cast<double>(b) + 0.5) * delta);
    rep.predicted_mean.push_back(pm);
    rep.empirical_mean.push_back(em);
    rep.count.push_back(count[b]);
    wsum += cb;
    werr += cb * (pm - em) * (pm - em);
  }
  rep.epsilon = wsum > 0 ? std::sqrt(werr / wsum) : 0.0;

  // count-weighted least squares of empirical on predicted means
  double sx = 0.0, sy = 0.0;
  for (std::size_t b = 0; b < rep.count.size(); ++b) {
    sx += rep.count[b] * rep.predicted_mean[b];
    sy += rep.count[b] * rep.empirical_mean[b];
  }
  const double mx = wsum > 0 ? sx / wsum : 0.0;
  const double my = wsum > 0 ? sy / wsum : 0.0;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t b = 0; b < rep.count.size(); ++b) {
    const double dx = rep.predicted_mean[b] - mx;
    sxx += rep.count[b] * dx * dx;
    sxy += rep.count[b] * dx * (rep.empirical_mean[b] - my);
  }
  rep.slope = sxx > 0 ? sxy / sxx : 0.0;
  return rep;
}

MseReport mse_vs_truth(const std::vector<std::vector<RawBloch>>& predicted,
                       const std::vector<std::vector<BlochVector>>& truth) {
  if (predicted.size() != truth.size())
    throw InvalidArgument("mse_vs_truth: shot count mismatch");
  MseReport rep;
  double total = 0.0;
  long terms = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto& p = predicted[i];
    const auto& t = truth[i];
    if (p.size() != t.size())
      throw InvalidArgument("mse_vs_truth: series length mismatch");
    if (p.size() > rep.per_time.size()) {
      rep.per_time.resize(p.size(), 0.0);
      rep.count.resize(p.size(), 0);
    }
    for (std::size_t s = 0; s < p.size(); ++s) {
      const double dx = p[s].x - t[s].x;
      const double dy = p[s].y - t[s].y;
      const double dz = p[s].z - t[s].z;
      const double e = dx * dx + dy * dy + dz * dz;
      rep.per_time[s] += e;
      ++rep.count[s];
      total += e;
      ++terms;
    }
  }
  for (std::size_t s = 0; s < rep.per_time.size(); ++s) {
    if (rep.count[s] > 0) rep.per_time[s] /= 3.0 * rep.count[s];
  }
  rep.total = terms > 0 ? total / (3.0 * terms) : 0.0;
  return rep;
}

std::vector<std::vector<RawBloch>> to_raw(
    const std::vector<std::vector<BlochVector>>& series) {
  std::vector<std::vector<RawBloch>> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    out[i].reserve(series[i].size());
    for (const auto& r : series[i]) out[i].push_back({r.x, r.y, r.z});
  }
  return out;
}

BinFitResult bin_fit(const std::vector<std::vector<RawBloch>>& trajectories,
                     std::span<const std::uint8_t> preps, double dt,
                     double delta, int substeps) {
  if (trajectories.size() != preps.size())
    throw InvalidArgument("bin_fit: one preparation index per trajectory");
  if (trajectories.empty()) throw InvalidArgument("bin_fit: no trajectories");
  if (!(delta > 0.0 && delta < 2.0))
    throw InvalidArgument("bin_fit: bin width must lie in (0, 2)");

  // Stage 1: ensemble means per (prep, step, component) -> (omega, gamma).
  struct Acc {
    double sum[3] = {0, 0, 0};
    long n = 0;
  };
  std::map<std::pair<int, std::size_t>, Acc> cells;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& tr = trajectories[i];
    for (std::size_t s = 0; s < tr.size(); ++s) {
      Acc& a = cells[{preps[i], s}];
      a.sum[0] += tr[s].x;
      a.sum[1] += tr[s].y;
      a.sum[2] += tr[s].z;
      ++a.n;
    }
  }
  std::vector<sde::MeanTarget> targets;
  targets.reserve(cells.size() * 3);
  for (const auto& [key, acc] : cells) {
    for (int comp = 0; comp < 3; ++comp) {
      sde::MeanTarget t;
      t.prep = static_cast<std::uint8_t>(key.first);
      t.comp = static_cast<Axis>(comp);
      t.t = static_cast<double>(key.second) * dt;
      t.value = acc.sum[comp] / acc.n;
      t.weight = static_cast<double>(acc.n);
      targets.push_back(t);
    }
  }
  const sde::RateEstimate rates =
      sde::fit_rates_to_means(targets, dt, substeps);

  BinFitResult res;
  res.omega = rates.omega;
  res.gamma = rates.gamma;
  res.omega_err = rates.omega_err;
  res.gamma_err = rates.gamma_err;

  // Stage 2: conditional variance of the z increments, binned in z.
  // Under the fitted model dz = omega y dt + sqrt(eta gamma) (1 - z^2) dW,
  // so after subtracting the drift the per-bin variance regresses on
  // (1 - z^2)^2 dt with coefficient eta * gamma.
  const auto n_bins = static_cast<std::size_t>(std::ceil(2.0 / delta));
  struct VarBin {
    double se = 0.0, se2 = 0.0, su = 0.0;
    long n = 0;
  };
  std::vector<VarBin> bins(n_bins);
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& tr = trajectories[i];
    for (std::size_t s = 0; s + 1 < tr.size(); ++s) {
      const double z = tr[s].z;
      const double resid = tr[s + 1].z - z - rates.omega * tr[s].y * dt;
      auto b = static_cast<long>((std::clamp(z, -1.0, 1.0) + 1.0) / delta);
      if (b < 0) b = 0;
      if (b >= static_cast<long>(n_bins)) b = static_cast<long>(n_bins) - 1;
      VarBin& vb = bins[static_cast<std::size_t>(b)];
      vb.se += resid;
      vb.se2 += resid * resid;
      const double one_m_z2 = 1.0 - z * z;
      vb.su += one_m_z2 * one_m_z2 * dt;
      ++vb.n;
    }
  }

  double num = 0.0, den = 0.0, var_num = 0.0;
  long used = 0;
  for (const auto& vb : bins) {
    if (vb.n < 10) continue;
    const double nb = static_cast<double>(vb.n);
    const double mean_e = vb.se / nb;
    const double var_b = vb.se2 / nb - mean_e * mean_e;
    const double u_b = vb.su / nb;
    num += nb * var_b * u_b;
    den += nb * u_b * u_b;
    var_num += nb * nb * u_b * u_b * (2.0 * var_b * var_b / std::max<double>(vb.n - 1, 1));
    ++used;
  }
  if (!(den > 0.0))
    throw FitSingular("variance regression has no usable bins");
  const double slope = num / den;
  res.eta = std::clamp(slope / rates.gamma, 0.0, 1.0);
  res.eta_err = std::sqrt(var_num) / den / rates.gamma;
  res.bins_used = used;
  return res;
}

CoarseStudyReport coarse_study(const sme::Dataset& fine,
                               const sme::PhysicalModel& truth,
                               const CoarseStudyConfig& cfg, par::Pool& pool) {
  if (cfg.k_list.empty()) throw InvalidArgument("coarse_study: empty k list");
  std::vector<int> ks = cfg.k_list;
  std::sort(ks.begin(), ks.end());
  if (std::adjacent_find(ks.begin(), ks.end()) != ks.end())
    throw InvalidArgument("coarse_study: duplicate coarse-grain factors");

  const sde::ParamPack true_pack =
      sde::pack_from_model(sde::PackKind::Constrained, truth);
  const auto true_named = sde::named_params(true_pack);
  const sde::SpamModel spam = sde::ideal_spam();

  CoarseStudyReport rep;
  for (const int k : ks) {
    const sme::Dataset coarse = sme::coarse_grain_dataset(fine, k);
    const auto val_idx = coarse.indices_of(sme::Split::Validation);

    sde::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.train.seed, static_cast<std::uint64_t>(k));
    const sde::TrainReport tr = sde::train_sde(coarse, cfg.kind, tc, pool);

    CoarseRow row;
    row.dt = coarse.meta.dt;
    row.true_ce = sde::dataset_ce(truth, spam, coarse, val_idx, pool);
    row.learned_ce = tr.best_metric();

    const auto learned = sde::named_params(tr.best_pack());
    auto value_of = [](const std::vector<std::pair<std::string, double>>& kv,
                       const char* name) {
      for (const auto& [k2, v2] : kv) {
        if (k2 == name) return v2;
      }
      throw InvalidArgument("missing named parameter");
    };
    const double tw = value_of(true_named, "omega_r");
    const double tg = value_of(true_named, "gamma_d");
    const double te = value_of(true_named, "eta");
    row.rel_err_omega = std::abs(value_of(learned, "omega_r") - tw) / std::abs(tw);
    row.rel_err_gamma = std::abs(value_of(learned, "gamma_d") - tg) / std::abs(tg);
    row.rel_err_eta = std::abs(value_of(learned, "eta") - te) / std::abs(te);
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace qtraj::eval
