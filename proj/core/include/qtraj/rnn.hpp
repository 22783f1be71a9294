#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qtraj/parallel.hpp"
#include "qtraj/sdelearn.hpp"
#include "qtraj/sme.hpp"

// Gated recurrent unit with an encode layer (one-hot preparation -> initial
// hidden state) and a decode layer (hidden state -> 3 Bloch components plus
// a prediction of the next record increment on both quadratures).  Trained
// by backpropagation through time on
//
//   L = L_CE + w_posit L_posit + w_prep L_prep + w_dm L_dM.
//
// Record increments are standardized by sqrt(dt) at the network boundary;
// the inverse scaling is applied to the prediction head before the
// prediction loss, which therefore acts in recorded units.
namespace qtraj::rnn {

struct GruModel {
  static constexpr int kInput = 2;
  static constexpr int kPrep = 6;
  static constexpr int kOut = 5;

  int hidden = 16;
  std::vector<double> theta;

  std::size_t n_params() const { return theta.size(); }
};

/// Offsets of the named parameter blocks inside GruModel::theta.
/// Matrices are column-major.
struct GruLayout {
  int h = 0;
  std::size_t we, be;
  std::size_t w_mr, w_hr, b_mr, b_hr;
  std::size_t w_mz, w_hz, b_mz, b_hz;
  std::size_t w_mn, w_hn, b_mn, b_hn;
  std::size_t wd, bd;
  std::size_t total = 0;
};

GruLayout gru_layout(int hidden);

/// All weights and biases uniform in +-1/sqrt(hidden), seed-controlled.
GruModel init_gru(int hidden, std::uint64_t seed);

/// One cell update on plain vectors (reference implementation):
///   r = sigmoid(W_Mr x + b_Mr + W_hr h + b_hr)
///   z = sigmoid(W_Mz x + b_Mz + W_hz h + b_hz)
///   n = tanh(W_Mn x + b_Mn + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
std::vector<double> gru_cell(const GruModel& m, std::span<const double> h,
                             std::span<const double> x);

struct ForwardResult {
  std::vector<RawBloch> r;                     // steps()+1 decoded states
  std::vector<std::array<double, 2>> dm_pred;  // steps() predicted increments
};

/// Unrolls the network over one shot (scalar path).
ForwardResult forward(const GruModel& m, const sme::TrajectoryRecord& shot);

/// Batched unroll over many shots, grouped by record length internally.
/// Output order matches idx; results are identical to forward().
std::vector<ForwardResult> forward_all(const GruModel& m,
                                       const sme::Dataset& data,
                                       std::span<const std::size_t> idx,
                                       par::Pool& pool);

/// Decoded state series for every shot of the dataset.
std::vector<std::vector<RawBloch>> trajectories(const GruModel& m,
                                                const sme::Dataset& data,
                                                par::Pool& pool);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Binary cross entropy between outcome probabilities and observed
/// outcomes; the single implementation behind training and metrics.
double ce_loss(std::span<const double> pi, std::span<const std::int8_t> y);

/// Mean over all states of ReLU(|r|^2 - 1).
double posit_loss(std::span<const std::vector<RawBloch>> series_batch);

/// Mean squared initial-state error against the preparation targets.
double prep_loss(std::span<const RawBloch> r0_batch,
                 std::span<const BlochVector> targets);

/// Mean squared error over aligned prediction/record entries.
double pred_loss(std::span<const double> predicted,
                 std::span<const double> actual);

struct LossWeights {
  double posit = 0.36;
  double prep = 1.7;
  double dm = 2.1;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct RnnTrainConfig {
  int hidden = 16;
  double lr = 1e-3;
  int batch = 1024;
  int epochs = 100;
  int patience = 10;
  std::uint64_t seed = 1;
  bool use_spam_fit = false;
  bool fit_readout = false;
};

struct RnnEpoch {
  double train_total = 0.0;
  double train_ce = 0.0;
  double val_ce = 0.0;
};

struct RnnReport {
  std::vector<RnnEpoch> curve;
  int best_epoch = 0;  // 0 = initialization
  double init_val_ce = 0.0;
  double best_val_ce = 0.0;
  double wallclock_s = 0.0;
  std::uint64_t seed = 0;
  LossWeights weights;
};

/// Mini-batch Adam with full backpropagation through the unrolled
/// sequence.  Batches are grouped by record length so every batch has a
/// uniform horizon.  Weights (0,0,0) reduce the objective to the bare
/// cross entropy.  Deterministic given cfg.seed; aborts with
/// TrainingDiverged if the loss becomes non-finite.
std::pair<GruModel, RnnReport> train_rnn(const sme::Dataset& data,
                                         const LossWeights& w,
                                         const RnnTrainConfig& cfg,
                                         par::Pool& pool);

/// Loss components of one uniform-length batch and, when grad is
/// non-empty, the full-parameter gradient (exposed for gradient checks).
struct BatchLoss {
  double total = 0.0;
  double ce = 0.0;
  double posit = 0.0;
  double prep = 0.0;
  double pred = 0.0;
};

BatchLoss batch_loss(const GruModel& m, const sme::Dataset& data,
                     std::span<const std::size_t> idx, const LossWeights& w,
                     const sde::SpamModel& spam, par::Pool& pool,
                     std::span<double> grad = {});

/// Outcome probabilities of the decoded terminal states.
std::vector<double> outcome_probs(const GruModel& m, const sme::Dataset& data,
                                  std::span<const std::size_t> idx,
                                  const sde::SpamModel& spam, par::Pool& pool);

}  // namespace qtraj::rnn
