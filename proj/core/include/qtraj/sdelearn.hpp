#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qtraj/autodiff.hpp"
#include "qtraj/parallel.hpp"
#include "qtraj/sme.hpp"

// Trainable stochastic-master-equation model: the integrator consumes the
// observed record increments, inverts them into Wiener increments,
//   dW^q = dM^q - sqrt(eta/2) Tr[rho (c^q + c^q+)] dt,
// steps the state, and predicts the terminal measurement probability.
// Every free parameter lives in an unconstrained vector u and is squashed
// into its physical range when the model is materialized, so gradients
// can be taken freely.
namespace qtraj::sde {

inline constexpr double kProbClip = 1e-6;

enum class PackKind { Constrained, Operator, Extended };

/// Number of unconstrained parameters: 3, 12 or 14.
int pack_width(PackKind kind);
const char* pack_name(PackKind kind);

/// Unconstrained parameter vector of one model.
///  Constrained: {omega_r, softplus^-1(gamma_d), logit(eta)}
///  Operator:    {hx, hy, hz, Re/Im of the four L entries, logit(eta)}
///  Extended:    Operator + {softplus^-1(gamma_up), softplus^-1(gamma_down)}
struct ParamPack {
  PackKind kind = PackKind::Constrained;
  std::vector<double> u;
};

template <class T>
sme::ModelT<T> materialize(PackKind kind, std::span<const T> u) {
  sme::ModelT<T> m;
  switch (kind) {
    case PackKind::Constrained: {
      const T gamma_d = softplus(u[1]);
      m.h = scaled(sigma_x<T>(), u[0] * 0.5);
      m.l = scaled(sigma_z<T>(), sqrt(gamma_d * 0.5));
      m.eta = logistic(u[2]);
      return m;
    }
    case PackKind::Operator:
    case PackKind::Extended: {
      m.h = scaled(sigma_x<T>(), u[0]) + scaled(sigma_y<T>(), u[1]) +
            scaled(sigma_z<T>(), u[2]);
      m.l = Mat2<T>{Cx<T>{u[3], u[4]}, Cx<T>{u[5], u[6]}, Cx<T>{u[7], u[8]},
                    Cx<T>{u[9], u[10]}};
      m.eta = logistic(u[11]);
      if (kind == PackKind::Extended) {
        m.gamma_up = softplus(u[12]);
        m.gamma_down = softplus(u[13]);
        m.with_relaxation = true;
      }
      return m;
    }
  }
  throw InvalidArgument("unknown parameter pack kind");
}

inline sme::PhysicalModel materialize(const ParamPack& p) {
  return materialize<double>(p.kind, std::span<const double>(p.u));
}

/// Inverse of materialize for models expressible by the pack.
ParamPack pack_from_model(PackKind kind, const sme::PhysicalModel& m);

/// Physical values by name (omega_r, gamma_d, eta, ... depending on kind).
std::vector<std::pair<std::string, double>> named_params(const ParamPack& p);

// ---------------------------------------------------------------------------
// State preparation and measurement model
// ---------------------------------------------------------------------------

struct SpamModel {
  std::array<BlochVector, kNumPreps> r0;
  std::array<double, 3> readout_visibility{1.0, 1.0, 1.0};
};

SpamModel ideal_spam();

/// Probability of outcome +1 along `axis`, clipped away from 0 and 1 so
/// log-likelihoods stay finite.
double predict_outcome_prob(const BlochVector& r, Axis axis,
                            const SpamModel& spam);

/// Initial-state tomography on the zero-duration shots: each component of
/// r0[prep] is the empirical outcome mean of its (prep, axis) cell, then
/// the vector is clipped into the unit ball.  With fit_readout set, the
/// per-axis visibilities are the likelihood-maximizing contrasts against
/// the ideal cardinal preparations and the means are deconvolved by them.
SpamModel fit_spam(const sme::Dataset& data, bool fit_readout = false);

// ---------------------------------------------------------------------------
// Differentiable filtering core
// ---------------------------------------------------------------------------

template <class T>
inline Vec3<T> promote3(const BlochVector& r) {
  return {T(r.x), T(r.y), T(r.z)};
}

template <class T>
T outcome_ce_t(const Vec3<T>& r, Axis axis, int outcome,
               const SpamModel& spam) {
  const double f = spam.readout_visibility[static_cast<int>(axis)];
  T pi = (axis_component(r, axis) * f + 1.0) * 0.5;
  if (val(pi) < kProbClip) {
    pi = T(kProbClip);
  } else if (val(pi) > 1.0 - kProbClip) {
    pi = T(1.0 - kProbClip);
  }
  return outcome > 0 ? -log(pi) : -log(1.0 - pi);
}

/// Runs the record-conditioned filter and returns the terminal state.
template <class T>
Vec3<T> filtered_terminal_t(const sme::ModelT<T>& m,
                            const sme::Channels<T>& ch, const BlochVector& r0,
                            const sme::WeakRecord& rec,
                            sme::StepStats* stats = nullptr) {
  Mat2<T> rho = rho_from_bloch(promote3<T>(r0));
  const double dt = rec.dt;
  const T pref = sqrt(m.eta * 0.5);
  const std::size_t n = rec.steps();
  for (std::size_t t = 0; t < n; ++t) {
    rho = sme::conditioned_step(rho, rec.dm_i[t], rec.dm_q[t], m, ch, pref, dt,
                                stats);
  }
  return bloch_from_rho(rho);
}

template <class T>
Vec3<T> filtered_terminal_t(const sme::ModelT<T>& m, const BlochVector& r0,
                            const sme::WeakRecord& rec,
                            sme::StepStats* stats = nullptr) {
  return filtered_terminal_t(m, sme::make_channels(m), r0, rec, stats);
}

/// Same filter, returning the whole state series (steps()+1 entries).
template <class T>
std::vector<Vec3<T>> filtered_series_t(const sme::ModelT<T>& m,
                                       const BlochVector& r0,
                                       const sme::WeakRecord& rec) {
  std::vector<Vec3<T>> out;
  out.reserve(rec.steps() + 1);
  Mat2<T> rho = rho_from_bloch(promote3<T>(r0));
  out.push_back(bloch_from_rho(rho));
  const double dt = rec.dt;
  const sme::Channels<T> ch = sme::make_channels(m);
  const T pref = sqrt(m.eta * 0.5);
  for (std::size_t t = 0; t < rec.steps(); ++t) {
    rho = sme::conditioned_step(rho, rec.dm_i[t], rec.dm_q[t], m, ch, pref, dt);
    out.push_back(bloch_from_rho(rho));
  }
  return out;
}

/// Cross entropy of one shot as a function of the unconstrained
/// parameters; the quantity training differentiates.
template <class T>
T shot_ce_t(PackKind kind, std::span<const T> u, const SpamModel& spam,
            const sme::TrajectoryRecord& shot,
            sme::StepStats* stats = nullptr) {
  const sme::ModelT<T> m = materialize<T>(kind, u);
  const Vec3<T> r =
      filtered_terminal_t(m, spam.r0[shot.prep], shot.record, stats);
  return outcome_ce_t(r, shot.axis, shot.outcome, spam);
}

/// Sum of squared Bloch distances between the filtered series and a
/// target series, for trajectory distillation.
template <class T>
T shot_sq_dist_t(const sme::ModelT<T>& m, const SpamModel& spam,
                 const sme::TrajectoryRecord& shot,
                 std::span<const RawBloch> target) {
  const std::vector<Vec3<T>> series =
      filtered_series_t(m, spam.r0[shot.prep], shot.record);
  if (series.size() != target.size())
    throw InvalidArgument("distillation target length mismatch");
  T acc(0.0);
  for (std::size_t t = 0; t < series.size(); ++t) {
    const T dx = series[t].x - target[t].x;
    const T dy = series[t].y - target[t].y;
    const T dz = series[t].z - target[t].z;
    acc += dx * dx + dy * dy + dz * dz;
  }
  return acc;
}

/// Record-conditioned state reconstruction with fixed parameters.
std::vector<BlochVector> infer_trajectory(const sme::PhysicalModel& m,
                                          const SpamModel& spam,
                                          const sme::TrajectoryRecord& shot);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr = 1e-3;
  int batch = 1024;
  int epochs = 200;
  int patience = 10;
  int ensemble = 32;
  std::uint64_t seed = 1;
  bool use_spam_fit = false;
  bool fit_readout = false;
  /// Log-uniform multiplicative half-range around the rate init centers.
  double init_spread = 3.0;
  double eta_init_lo = 0.02;
  double eta_init_hi = 0.6;
  double relax_init_lo = 0.005;
  double relax_init_hi = 0.1;
  /// Gaussian sigma for the operator entries not fixed by the
  /// constrained backbone.
  double operator_init_sigma = 0.05;
  /// Init centers for (omega_r, gamma_d); values <= 0 request a rough
  /// fit of the outcome means before training.
  double init_omega = 0.0;
  double init_gamma = 0.0;
};

struct EpochPoint {
  double train = 0.0;
  double val = 0.0;
};

struct MemberResult {
  std::uint64_t seed = 0;
  ParamPack init;
  ParamPack best;
  double init_val = 0.0;
  double best_val = 0.0;
  std::vector<EpochPoint> curve;
  long skipped_shots = 0;
};

struct TrainReport {
  PackKind kind = PackKind::Constrained;
  std::string objective = "ce";  // "ce" or "mse"
  std::vector<MemberResult> members;
  int best_member = 0;
  double wallclock_s = 0.0;
  std::uint64_t seed = 0;

  const ParamPack& best_pack() const { return members[best_member].best; }
  double best_metric() const { return members[best_member].best_val; }
};

/// Mini-batch Adam on the outcome cross entropy over the training split,
/// early-stopped on the validation split, over an ensemble of
/// independently initialized members.  Deterministic given cfg.seed.
TrainReport train_sde(const sme::Dataset& data, PackKind kind,
                      const TrainConfig& cfg, par::Pool& pool);

/// Fits the model by mean squared distance between its filtered
/// trajectories and externally supplied target trajectories (one target
/// series per shot, aligned with data.shots).
TrainReport distill(const std::vector<std::vector<RawBloch>>& targets,
                    const sme::Dataset& data, PackKind kind,
                    const TrainConfig& cfg, par::Pool& pool);

/// Mean cross entropy of a fixed model over the given shots.  Shots whose
/// update degenerates are skipped and counted.
double dataset_ce(const sme::PhysicalModel& m, const SpamModel& spam,
                  const sme::Dataset& data, std::span<const std::size_t> idx,
                  par::Pool& pool, long* skipped = nullptr);

/// Cross entropy of the record-blind deterministic evolution (the same
/// model with the stochastic terms dropped), the natural baseline every
/// record-aware model must beat.
double me_baseline_ce(const sme::PhysicalModel& m, const SpamModel& spam,
                      const sme::Dataset& data, std::span<const std::size_t> idx,
                      int substeps = 40);

// ---------------------------------------------------------------------------
// Model selection
// ---------------------------------------------------------------------------

struct ModelComparison {
  std::string smaller;
  std::string larger;
  double delta_ce = 0.0;  // ce(smaller) - ce(larger)
  double lr_stat = 0.0;   // 2 N delta_ce
  int dof = 0;
};

struct SelectionReport {
  std::vector<std::string> names;
  std::vector<int> n_params;
  std::vector<double> test_ce;
  std::vector<ModelComparison> comparisons;
  std::size_t n_test = 0;
};

/// Evaluates nested fits on the test split of `data` (all shots when the
/// dataset carries no test split) and reports likelihood-ratio statistics
/// between consecutive models.
SelectionReport model_select(const std::vector<TrainReport>& nested,
                             const sme::Dataset& data, const SpamModel& spam,
                             par::Pool& pool);

// ---------------------------------------------------------------------------
// Rate estimation from mean curves (shared with the binning baseline)
// ---------------------------------------------------------------------------

struct MeanTarget {
  std::uint8_t prep = 0;
  Axis comp = Axis::Z;
  double t = 0.0;
  double value = 0.0;
  double weight = 1.0;
};

struct RateEstimate {
  double omega = 0.0;
  double gamma = 0.0;
  double omega_err = 0.0;
  double gamma_err = 0.0;
  double sse = 0.0;
};

/// Weighted least-squares fit of (omega_r, gamma_d) in the deterministic
/// model to observed component means.  Times must be multiples of
/// grid_dt; the model curves are integrated with `substeps` RK4 steps per
/// grid interval.  Throws FitSingular on a rank-deficient normal matrix.
RateEstimate fit_rates_to_means(std::span<const MeanTarget> targets,
                                double grid_dt, int substeps = 10,
                                double omega_init = 0.0,
                                double gamma_init = 0.0);

/// Rough (omega_r, gamma_d) from the per-(prep, axis, T) outcome means of
/// the training split; centers the ensemble initialization.
RateEstimate estimate_rates(const sme::Dataset& data);

}  // namespace qtraj::sde
