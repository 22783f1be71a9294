#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qtraj/rnn.hpp"
#include "qtraj/sdelearn.hpp"

// Evaluation metrics and the non-differentiable parameter-extraction
// baselines: calibration against final outcomes, trajectory error against
// synthetic truth, moment fits of binned trajectories, and the
// coarse-graining study.
namespace qtraj::eval {

/// Same quantity as rnn::ce_loss (one implementation, two call sites).
inline double ce_metric(std::span<const double> pi,
                        std::span<const std::int8_t> y) {
  return rnn::ce_loss(pi, y);
}

// ---------------------------------------------------------------------------
// Calibration of predicted probabilities against observed outcomes
// ---------------------------------------------------------------------------

struct SelfConsistencyReport {
  double delta = 0.04;
  std::vector<double> bin_center;
  std::vector<double> predicted_mean;
  std::vector<double> empirical_mean;
  std::vector<long> count;
  /// Count-weighted RMS distance between predicted and empirical bin means.
  double epsilon = 0.0;
  /// Count-weighted least-squares slope of empirical vs predicted means.
  double slope = 0.0;
  std::size_t n_shots = 0;
};

SelfConsistencyReport self_consistency(std::span<const double> pi,
                                       std::span<const std::int8_t> y,
                                       double delta = 0.04);

// ---------------------------------------------------------------------------
// Trajectory error against synthetic truth
// ---------------------------------------------------------------------------

struct MseReport {
  std::vector<double> per_time;  // mean over shots and components per step
  std::vector<long> count;       // shots contributing at each step
  double total = 0.0;            // mean over shots, steps and components
};

MseReport mse_vs_truth(const std::vector<std::vector<RawBloch>>& predicted,
                       const std::vector<std::vector<BlochVector>>& truth);

std::vector<std::vector<RawBloch>> to_raw(
    const std::vector<std::vector<BlochVector>>& series);

// ---------------------------------------------------------------------------
// Binning baseline
// ---------------------------------------------------------------------------

struct BinFitResult {
  double omega = 0.0;
  double gamma = 0.0;
  double eta = 0.0;
  double omega_err = 0.0;
  double gamma_err = 0.0;
  double eta_err = 0.0;
  long bins_used = 0;
};

/// Moment fit of Bloch-trajectory collections against the drive-plus-
/// dephasing model: (omega, gamma) from a least-squares fit of the
/// per-preparation ensemble means, eta from a weighted regression of the
/// one-step conditional variance of z (drift-subtracted, binned in z with
/// width delta) on (1 - z^2)^2 dt, whose coefficient is eta*gamma.
BinFitResult bin_fit(const std::vector<std::vector<RawBloch>>& trajectories,
                     std::span<const std::uint8_t> preps, double dt,
                     double delta = 0.04, int substeps = 10);

// ---------------------------------------------------------------------------
// Coarse-graining study
// ---------------------------------------------------------------------------

struct CoarseRow {
  double dt = 0.0;
  double rel_err_omega = 0.0;
  double rel_err_gamma = 0.0;
  double rel_err_eta = 0.0;
  double learned_ce = 0.0;
  double true_ce = 0.0;
};

struct CoarseStudyReport {
  std::vector<CoarseRow> rows;
};

struct CoarseStudyConfig {
  std::vector<int> k_list{1, 2, 4, 10, 20, 40, 100, 200};
  sde::PackKind kind = sde::PackKind::Constrained;
  sde::TrainConfig train;
};

/// Coarse-grains the fine dataset by every factor in k_list, trains one
/// model per level, and compares the learned parameters and validation
/// cross entropy against the true-parameter model at the same level.
/// `truth` must be expressible by the constrained pack.
CoarseStudyReport coarse_study(const sme::Dataset& fine,
                               const sme::PhysicalModel& truth,
                               const CoarseStudyConfig& cfg, par::Pool& pool);

}  // namespace qtraj::eval
