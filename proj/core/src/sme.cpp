#include "qtraj/sme.hpp"

#include <algorithm>
#include <cmath>

namespace qtraj::sme {

namespace {

bool is_multiple(double t, double dt) {
  if (dt <= 0) return false;
  const double k = t / dt;
  return std::abs(k - std::llround(k)) <= 1e-6 * std::max(1.0, std::abs(k));
}

}  // namespace

PhysicalModel rabi_dephasing_model(double omega_r, double gamma_d, double eta,
                                   double gamma_up, double gamma_down) {
  PhysicalModel m;
  m.h = scaled(sigma_x<double>(), 0.5 * omega_r);
  m.l = scaled(sigma_z<double>(), std::sqrt(0.5 * gamma_d));
  m.eta = eta;
  m.gamma_up = gamma_up;
  m.gamma_down = gamma_down;
  m.with_relaxation = gamma_up != 0.0 || gamma_down != 0.0;
  return m;
}

PhysicalModel default_device() { return rabi_dephasing_model(1.395, 1.176, 0.1469); }

void validate_model(const PhysicalModel& m) {
  if (!all_finite(m.h) || !all_finite(m.l))
    throw InvalidState("model operators must be finite");
  if (hermiticity_defect(m.h) > kHermTol)
    throw InvalidState("Hamiltonian must be Hermitian");
  if (!(m.eta >= 0.0 && m.eta <= 1.0))
    throw InvalidState("quantum efficiency must lie in [0, 1]");
  if (m.gamma_up < 0.0 || m.gamma_down < 0.0)
    throw InvalidState("relaxation rates must be nonnegative");
}

std::vector<std::size_t> Dataset::indices_of(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == s) out.push_back(i);
  }
  return out;
}

std::pair<double, double> synth_record(const Complex2x2& rho, double dw_i,
                                       double dw_q, const PhysicalModel& m,
                                       double dt) {
  const auto [si, sq] = record_signals(rho, m);
  const double pref = std::sqrt(m.eta * 0.5);
  return {pref * si * dt + dw_i, pref * sq * dt + dw_q};
}

TrajectoryRecord generate_trajectory(int prep, Axis axis,
                                     const PhysicalModel& m, double total_t,
                                     double dt_fine, std::uint64_t seed,
                                     StepStats* stats) {
  if (dt_fine <= 0) throw InvalidArgument("dt_fine must be positive");
  if (total_t < 0 || !is_multiple(total_t, dt_fine))
    throw InvalidArgument("total time must be a nonnegative multiple of dt_fine");
  const auto n = static_cast<std::size_t>(std::llround(total_t / dt_fine));

  TrajectoryRecord shot;
  shot.prep = static_cast<std::uint8_t>(prep);
  shot.axis = axis;
  shot.record.dt = dt_fine;
  shot.record.dm_i.reserve(n);
  shot.record.dm_q.reserve(n);
  shot.truth.reserve(n + 1);

  SplitMix64 rng(seed);
  const double sq_dt = std::sqrt(dt_fine);
  const Channels<double> ch = make_channels(m);
  const double pref = std::sqrt(m.eta * 0.5);
  Complex2x2 rho = rho_from_bloch(prep_bloch(prep));
  shot.truth.push_back(bloch_from_rho(rho));

  for (std::size_t t = 0; t < n; ++t) {
    const auto [z1, z2] = rng.gauss_pair();
    const double dwi = z1 * sq_dt;
    const double dwq = z2 * sq_dt;
    const Complex2x2 lrho = ch.ci * rho;
    const Complex2x2 rho_ld = rho * ch.ci_dag;
    const Complex2x2 qrho = ch.cq * rho;
    const Complex2x2 rho_qd = rho * ch.cq_dag;
    const double s_i = trace_re(lrho) + trace_re(rho_ld);
    const double s_q = trace_re(qrho) + trace_re(rho_qd);
    shot.record.dm_i.push_back(pref * s_i * dt_fine + dwi);
    shot.record.dm_q.push_back(pref * s_q * dt_fine + dwq);
    rho = detail::milstein_core(rho, dwi, dwq, m, ch, dt_fine, stats, lrho,
                                rho_ld, qrho, rho_qd, s_i, s_q);
    shot.truth.push_back(bloch_from_rho(rho));
  }

  const double comp = axis_component(shot.truth.back(), axis);
  const double born = 0.5 * (1.0 + std::clamp(comp, -1.0, 1.0));
  shot.outcome = rng.uniform() < born ? int8_t{1} : int8_t{-1};
  return shot;
}

WeakRecord coarse_grain(const WeakRecord& rec, int k) {
  if (k < 1) throw InvalidArgument("coarse-grain factor must be >= 1");
  if (rec.steps() % static_cast<std::size_t>(k) != 0)
    throw InvalidArgument("coarse-grain factor must divide the step count");
  if (k == 1) return rec;
  WeakRecord out;
  out.dt = rec.dt * k;
  const std::size_t m = rec.steps() / k;
  out.dm_i.resize(m);
  out.dm_q.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    double si = 0.0, sq = 0.0;
    for (std::size_t u = j * k; u < (j + 1) * k; ++u) {
      si += rec.dm_i[u];
      sq += rec.dm_q[u];
    }
    out.dm_i[j] = si;
    out.dm_q[j] = sq;
  }
  return out;
}

std::vector<BlochVector> coarse_grain_truth(const std::vector<BlochVector>& t,
                                            int k) {
  if (t.empty()) return {};
  if (k < 1 || (t.size() - 1) % static_cast<std::size_t>(k) != 0)
    throw InvalidArgument("coarse-grain factor must divide the step count");
  std::vector<BlochVector> out;
  out.reserve((t.size() - 1) / k + 1);
  for (std::size_t i = 0; i < t.size(); i += k) out.push_back(t[i]);
  return out;
}

Dataset coarse_grain_dataset(const Dataset& d, int k) {
  Dataset out;
  out.meta = d.meta;
  out.meta.dt = d.meta.dt * k;
  out.split = d.split;
  out.shots.reserve(d.shots.size());
  for (const auto& s : d.shots) {
    TrajectoryRecord r;
    r.prep = s.prep;
    r.axis = s.axis;
    r.outcome = s.outcome;
    r.record = coarse_grain(s.record, k);
    r.truth = coarse_grain_truth(s.truth, k);
    out.shots.push_back(std::move(r));
  }
  return out;
}

Dataset generate_dataset(const DatasetMeta& meta, par::Pool& pool,
                         StepStats* stats) {
  if (!meta.generator) throw InvalidArgument("dataset meta needs a generator model");
  validate_model(*meta.generator);
  if (meta.shots_per_cell <= 0)
    throw InvalidArgument("shots_per_cell must be positive");
  if (meta.t_grid.empty()) throw InvalidArgument("t_grid must not be empty");
  if (!is_multiple(meta.dt, meta.dt_fine))
    throw InvalidArgument("dt must be a multiple of dt_fine");
  const int k = static_cast<int>(std::llround(meta.dt / meta.dt_fine));
  for (double t : meta.t_grid) {
    if (t < 0 || !is_multiple(t, meta.dt))
      throw InvalidArgument("every T must be a nonnegative multiple of dt");
  }
  const double frac_sum = meta.split_fractions[0] + meta.split_fractions[1] +
                          meta.split_fractions[2];
  if (std::abs(frac_sum - 1.0) > 1e-9)
    throw InvalidArgument("split fractions must sum to 1");

  struct ShotPlan {
    std::uint8_t prep;
    Axis axis;
    double total_t;
  };
  const int n_cell = meta.shots_per_cell;
  std::vector<ShotPlan> plan;
  plan.reserve(meta.t_grid.size() * kNumPreps * 3 * n_cell);
  std::size_t cell_idx = 0;
  for (double total_t : meta.t_grid) {
    for (int prep = 0; prep < kNumPreps; ++prep, ++cell_idx) {
      // Exactly n_cell shots per axis within the (prep, T) cell, in a
      // seeded random order.
      std::vector<Axis> axes(3 * n_cell);
      for (int a = 0; a < 3; ++a)
        std::fill_n(axes.begin() + a * n_cell, n_cell, static_cast<Axis>(a));
      SplitMix64 rng(
          derive_seed(derive_seed(meta.master_seed, seed_tag::kAxisPlan),
                      cell_idx));
      for (std::size_t i = axes.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.next() % i);
        std::swap(axes[i - 1], axes[j]);
      }
      for (Axis a : axes)
        plan.push_back({static_cast<std::uint8_t>(prep), a, total_t});
    }
  }

  Dataset out;
  out.meta = meta;
  out.shots.resize(plan.size());
  out.split.resize(plan.size());
  const PhysicalModel model = *meta.generator;

  std::vector<StepStats> chunk_stats;
  const std::size_t chunk = 64;
  chunk_stats.resize((plan.size() + chunk - 1) / chunk);

  pool.for_chunks(plan.size(), chunk,
                  [&](std::size_t ci, std::size_t b, std::size_t e) {
                    for (std::size_t i = b; i < e; ++i) {
                      const ShotPlan& p = plan[i];
                      const std::uint64_t seed = derive_seed(
                          derive_seed(meta.master_seed, seed_tag::kShot), i);
                      TrajectoryRecord fine = generate_trajectory(
                          p.prep, p.axis, model, p.total_t, meta.dt_fine, seed,
                          &chunk_stats[ci]);
                      TrajectoryRecord shot;
                      shot.prep = fine.prep;
                      shot.axis = fine.axis;
                      shot.outcome = fine.outcome;
                      shot.record = coarse_grain(fine.record, k);
                      shot.truth = coarse_grain_truth(fine.truth, k);
                      out.shots[i] = std::move(shot);

                      const double u =
                          stream_for(meta.master_seed, seed_tag::kSplit, i)
                              .uniform();
                      out.split[i] = u < meta.split_fractions[0]
                                         ? Split::Train
                                         : (u < meta.split_fractions[0] +
                                                    meta.split_fractions[1]
                                                ? Split::Validation
                                                : Split::Test);
                    }
                  });

  if (stats) {
    for (const auto& cs : chunk_stats) {
      stats->clips += cs.clips;
      stats->beyond_tol += cs.beyond_tol;
      stats->max_excess = std::max(stats->max_excess, cs.max_excess);
    }
  }
  return out;
}

std::vector<BlochVector> integrate_me(const BlochVector& r0,
                                      const PhysicalModel& m, double total_t,
                                      double store_dt, int substeps) {
  return integrate_me_t(r0, m, total_t, store_dt, substeps);
}

}  // namespace qtraj::sme
