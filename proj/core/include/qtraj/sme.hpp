#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "qtraj/parallel.hpp"
#include "qtraj/qcore.hpp"
#include "qtraj/rng.hpp"

// Heterodyne weak-monitoring of a driven qubit:
//
//   d rho = -i[H, rho] dt + D[L] rho dt
//           + sqrt(eta/2) ( H[c_I] rho dW_I + H[c_Q] rho dW_Q ),
//   c_I = L,  c_Q = -i L^+,
//
// with optional excitation/relaxation dissipators g_up D[s+] + g_down D[s-]
// added to the deterministic part.  The observed record increments are
//
//   dM^q = sqrt(eta/2) Tr[rho (c^q + c^q+)] dt + dW^q.
//
// Units: time in us, H entries in rad/us, L entries in us^(-1/2), record
// increments in sqrt(us).
namespace qtraj::sme {

template <class T>
struct ModelT {
  Mat2<T> h;
  Mat2<T> l;
  T eta{};
  T gamma_up{};
  T gamma_down{};
  bool with_relaxation = false;

  Mat2<T> c_i() const { return l; }
  Mat2<T> c_q() const { return neg_i_times(dagger(l)); }
};

using PhysicalModel = ModelT<double>;

/// H = (omega_r/2) sx, L = sqrt(gamma_d/2) sz, the drive-plus-monitoring
/// model every study here starts from.
PhysicalModel rabi_dephasing_model(double omega_r, double gamma_d, double eta,
                                   double gamma_up = 0.0,
                                   double gamma_down = 0.0);

/// Default device parameters for synthetic studies: Rabi rate 1.395 rad/us
/// (0.222 MHz), dephasing 1.176 /us, detection efficiency 0.1469.
PhysicalModel default_device();

void validate_model(const PhysicalModel& m);

struct WeakRecord {
  std::vector<double> dm_i;
  std::vector<double> dm_q;
  double dt = 0.0;

  std::size_t steps() const { return dm_i.size(); }
};

struct TrajectoryRecord {
  std::uint8_t prep = 0;
  Axis axis = Axis::Z;
  std::int8_t outcome = 1;
  WeakRecord record;
  /// Simulator states at the record grid (steps()+1 entries); empty when
  /// the ground truth is not carried along.
  std::vector<BlochVector> truth;
};

enum class Split : std::uint8_t { Train = 0, Validation = 1, Test = 2 };

struct DatasetMeta {
  double dt = 0.04;
  double dt_fine = 0.001;
  std::vector<double> t_grid;
  int shots_per_cell = 0;  // per (prep, axis, T) cell
  std::uint64_t master_seed = 1;
  std::optional<PhysicalModel> generator;
  // Cavity pull and linewidth of the modeled readout chain (rad/us).
  // Recorded for provenance only; the cavity is never simulated.
  double chi = -2.9531;
  double kappa = 9.8018;
  std::array<double, 3> split_fractions{2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0};
};

struct Dataset {
  DatasetMeta meta;
  std::vector<TrajectoryRecord> shots;
  std::vector<Split> split;

  std::vector<std::size_t> indices_of(Split s) const;
};

struct StepStats {
  long clips = 0;          // steps where |r| > 1 was rescaled back
  long beyond_tol = 0;     // of those, steps with |r| > 1 + 1e-6
  double max_excess = 0.0; // max |r| - 1 seen before rescaling
};

// ---------------------------------------------------------------------------
// Generator pieces
// ---------------------------------------------------------------------------

/// Deterministic generator A(rho): Hamiltonian, monitored dissipator and,
/// when enabled, the excitation/relaxation dissipators.
template <class T>
inline Mat2<T> drift(const Mat2<T>& rho, const ModelT<T>& m) {
  Mat2<T> out = neg_i_commutator(m.h, rho) + dissipator(m.l, rho);
  if (m.with_relaxation) {
    out = out + scaled(dissipator(sigma_plus<T>(), rho), m.gamma_up) +
          scaled(dissipator(sigma_minus<T>(), rho), m.gamma_down);
  }
  return out;
}

/// Tr[rho (c^q + c^q+)] for both channels, shared between record synthesis
/// and the record inversion so the two sides agree arithmetically.
template <class T>
inline std::pair<T, T> record_signals(const Mat2<T>& rho, const ModelT<T>& m) {
  const Mat2<T> ci = m.l;
  const Mat2<T> cq = m.c_q();
  return {trace_re(rho * (ci + dagger(ci))), trace_re(rho * (cq + dagger(cq)))};
}

/// Re Tr(a b) from the diagonal of the product.
template <class T>
inline T trace_re_prod(const Mat2<T>& a, const Mat2<T>& b) {
  auto re_mul = [](const Cx<T>& x, const Cx<T>& y) {
    return x.re * y.re - x.im * y.im;
  };
  return re_mul(a.m00, b.m00) + re_mul(a.m01, b.m10) + re_mul(a.m10, b.m01) +
         re_mul(a.m11, b.m11);
}

/// Model-constant operator products, hoisted out of the stepping loops.
template <class T>
struct Channels {
  Mat2<T> ci, ci_dag, cq, cq_dag;
  Mat2<T> cpc_i, cpc_q;  // c + c^+
  Mat2<T> ldl;           // L^+ L
};

template <class T>
Channels<T> make_channels(const ModelT<T>& m) {
  Channels<T> ch;
  ch.ci = m.l;
  ch.ci_dag = dagger(m.l);
  ch.cq = neg_i_times(ch.ci_dag);
  ch.cq_dag = dagger(ch.cq);
  ch.cpc_i = ch.ci + ch.ci_dag;
  ch.cpc_q = ch.cq + ch.cq_dag;
  ch.ldl = ch.ci_dag * ch.ci;
  return ch;
}

namespace detail {

/// Shared body of the Milstein update given the per-state channel
/// products.  Diagonal second-order corrections only; the cross-channel
/// iterated integrals are dropped.  The result is re-hermitized,
/// renormalized to unit trace and, when the Bloch vector leaves the unit
/// ball, rescaled onto it (counted in stats).
template <class T>
Mat2<T> milstein_core(const Mat2<T>& rho, const T& dw_i, const T& dw_q,
                      const ModelT<T>& m, const Channels<T>& ch, double dt,
                      StepStats* stats, const Mat2<T>& lrho,
                      const Mat2<T>& rho_ld, const Mat2<T>& qrho,
                      const Mat2<T>& rho_qd, const T& s_i, const T& s_q) {
  Mat2<T> a = neg_i_commutator(m.h, rho) + lrho * ch.ci_dag -
              scaled(ch.ldl * rho + rho * ch.ldl, 0.5);
  if (m.with_relaxation) {
    a = a + scaled(dissipator(sigma_plus<T>(), rho), m.gamma_up) +
        scaled(dissipator(sigma_minus<T>(), rho), m.gamma_down);
  }

  const Mat2<T> h_i = lrho + rho_ld - scaled(rho, s_i);
  const Mat2<T> h_q = qrho + rho_qd - scaled(rho, s_q);
  // With B_q = sqrt(eta/2) H[c_q], the Milstein term is
  //   (1/2) D_{B_q} B_q (dW^2 - dt) = (eta/4) D_{H[c_q] rho} H[c_q] (dW^2 - dt)
  // and, H being quadratic, the directional derivative is exact:
  //   D_B H[c] = cB + Bc^+ - B Tr[rho(c+c^+)] - rho Tr[B(c+c^+)].
  const Mat2<T> g_i = ch.ci * h_i + h_i * ch.ci_dag - scaled(h_i, s_i) -
                      scaled(rho, trace_re_prod(h_i, ch.cpc_i));
  const Mat2<T> g_q = ch.cq * h_q + h_q * ch.cq_dag - scaled(h_q, s_q) -
                      scaled(rho, trace_re_prod(h_q, ch.cpc_q));

  const T pref = sqrt(m.eta * 0.5);
  const T eta_quarter = m.eta * 0.25;
  Mat2<T> next = rho + scaled(a, dt) + scaled(h_i, pref * dw_i) +
                 scaled(h_q, pref * dw_q) +
                 scaled(g_i, eta_quarter * (dw_i * dw_i - dt)) +
                 scaled(g_q, eta_quarter * (dw_q * dw_q - dt));

  next = hermitized(next);
  const T tr = trace_re(next);
  if (!(val(tr) > 1e-12)) {
    throw DegenerateState("state trace collapsed during a Milstein update");
  }
  next = scaled(next, 1.0 / tr);

  Vec3<T> r = bloch_from_rho(next);
  const T n2 = bloch_norm2(r);
  if (val(n2) > 1.0) {
    if (stats) {
      const double norm = std::sqrt(val(n2));
      ++stats->clips;
      if (norm > 1.0 + 1e-6) ++stats->beyond_tol;
      if (norm - 1.0 > stats->max_excess) stats->max_excess = norm - 1.0;
    }
    const T inv = 1.0 / sqrt(n2);
    r = {r.x * inv, r.y * inv, r.z * inv};
    next = rho_from_bloch(r);
  }
  return next;
}

}  // namespace detail

/// One Milstein update with precomputed channel constants.
template <class T>
Mat2<T> milstein_step(const Mat2<T>& rho, const T& dw_i, const T& dw_q,
                      const ModelT<T>& m, const Channels<T>& ch, double dt,
                      StepStats* stats = nullptr) {
  const Mat2<T> lrho = ch.ci * rho;
  const Mat2<T> rho_ld = rho * ch.ci_dag;
  const Mat2<T> qrho = ch.cq * rho;
  const Mat2<T> rho_qd = rho * ch.cq_dag;
  const T s_i = trace_re(lrho) + trace_re(rho_ld);
  const T s_q = trace_re(qrho) + trace_re(rho_qd);
  return detail::milstein_core(rho, dw_i, dw_q, m, ch, dt, stats, lrho, rho_ld,
                               qrho, rho_qd, s_i, s_q);
}

template <class T>
Mat2<T> milstein_step(const Mat2<T>& rho, const T& dw_i, const T& dw_q,
                      const ModelT<T>& m, double dt,
                      StepStats* stats = nullptr) {
  return milstein_step(rho, dw_i, dw_q, m, make_channels(m), dt, stats);
}

/// One filter update: inverts the observed increments into Wiener
/// increments using the current state's channel signals,
///   dW^q = dM^q - pref Tr[rho (c^q + c^q+)] dt,  pref = sqrt(eta/2),
/// then applies the Milstein update with them.
template <class T>
Mat2<T> conditioned_step(const Mat2<T>& rho, double dm_i, double dm_q,
                         const ModelT<T>& m, const Channels<T>& ch,
                         const T& pref, double dt, StepStats* stats = nullptr) {
  const Mat2<T> lrho = ch.ci * rho;
  const Mat2<T> rho_ld = rho * ch.ci_dag;
  const Mat2<T> qrho = ch.cq * rho;
  const Mat2<T> rho_qd = rho * ch.cq_dag;
  const T s_i = trace_re(lrho) + trace_re(rho_ld);
  const T s_q = trace_re(qrho) + trace_re(rho_qd);
  const T dw_i = dm_i - pref * s_i * dt;
  const T dw_q = dm_q - pref * s_q * dt;
  return detail::milstein_core(rho, dw_i, dw_q, m, ch, dt, stats, lrho, rho_ld,
                               qrho, rho_qd, s_i, s_q);
}

/// Record increments for one step given the Wiener increments.
std::pair<double, double> synth_record(const Complex2x2& rho, double dw_i,
                                       double dw_q, const PhysicalModel& m,
                                       double dt);

// ---------------------------------------------------------------------------
// Trajectory and dataset generation
// ---------------------------------------------------------------------------

/// Simulates one shot: state evolution at dt_fine, the two record
/// channels, and the terminal projective outcome along `axis`.  The draw
/// order (one Gaussian pair per step, then one uniform) is fixed, so a
/// shot is a pure function of its seed.
TrajectoryRecord generate_trajectory(int prep, Axis axis,
                                     const PhysicalModel& m, double total_t,
                                     double dt_fine, std::uint64_t seed,
                                     StepStats* stats = nullptr);

/// Sums consecutive increments in blocks of k; dt scales by k.
WeakRecord coarse_grain(const WeakRecord& rec, int k);
/// Keeps every k-th state (endpoints included).
std::vector<BlochVector> coarse_grain_truth(const std::vector<BlochVector>& t,
                                            int k);
/// Applies both to every shot and rescales meta.dt.
Dataset coarse_grain_dataset(const Dataset& d, int k);

/// Generates meta.shots_per_cell shots for every (prep, axis, T) cell,
/// integrating at meta.dt_fine and coarse-graining records and truth to
/// meta.dt.  Per-shot seeds and split labels are derived from
/// (master seed, shot index), so the result is independent of the worker
/// count and of execution order.
Dataset generate_dataset(const DatasetMeta& meta, par::Pool& pool,
                         StepStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Deterministic master equation (the record-blind baseline)
// ---------------------------------------------------------------------------

template <class T>
Mat2<T> me_step_rk4(const Mat2<T>& rho, const ModelT<T>& m, double dt) {
  const Mat2<T> k1 = drift(rho, m);
  const Mat2<T> k2 = drift(rho + scaled(k1, 0.5 * dt), m);
  const Mat2<T> k3 = drift(rho + scaled(k2, 0.5 * dt), m);
  const Mat2<T> k4 = drift(rho + scaled(k3, dt), m);
  return rho + scaled(k1 + scaled(k2 + k3, 2.0) + k4, dt / 6.0);
}

/// States on the grid {0, store_dt, ..., total_t}, each stored interval
/// integrated with `substeps` RK4 steps.
template <class T>
std::vector<Vec3<T>> integrate_me_t(const Vec3<T>& r0, const ModelT<T>& m,
                                    double total_t, double store_dt,
                                    int substeps = 1);

std::vector<BlochVector> integrate_me(const BlochVector& r0,
                                      const PhysicalModel& m, double total_t,
                                      double store_dt, int substeps = 1);

// ---- implementation of the template ---------------------------------------

template <class T>
std::vector<Vec3<T>> integrate_me_t(const Vec3<T>& r0, const ModelT<T>& m,
                                    double total_t, double store_dt,
                                    int substeps) {
  if (store_dt <= 0 || substeps < 1)
    throw InvalidArgument("integrate_me needs store_dt > 0, substeps >= 1");
  const auto n = static_cast<std::size_t>(std::llround(total_t / store_dt));
  const double sub_dt = store_dt / substeps;
  std::vector<Vec3<T>> out;
  out.reserve(n + 1);
  Mat2<T> rho = rho_from_bloch(r0);
  out.push_back(bloch_from_rho(rho));
  for (std::size_t i = 0; i < n; ++i) {
    for (int s = 0; s < substeps; ++s) rho = me_step_rk4(rho, m, sub_dt);
    rho = hermitized(rho);
    rho = scaled(rho, 1.0 / trace_re(rho));
    out.push_back(bloch_from_rho(rho));
  }
  return out;
}

}  // namespace qtraj::sme
