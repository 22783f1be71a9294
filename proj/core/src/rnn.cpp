#include "qtraj/rnn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

namespace qtraj::rnn {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using CMapM = Eigen::Map<const MatrixXd>;
using CMapV = Eigen::Map<const VectorXd>;
using MapM = Eigen::Map<MatrixXd>;
using MapV = Eigen::Map<VectorXd>;

constexpr std::size_t kCols = 64;  // shots per work chunk

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Views {
  CMapM we;
  CMapV be;
  CMapM w_mr, w_hr;
  CMapV b_mr, b_hr;
  CMapM w_mz, w_hz;
  CMapV b_mz, b_hz;
  CMapM w_mn, w_hn;
  CMapV b_mn, b_hn;
  CMapM wd;
  CMapV bd;
};

Views make_views(const GruLayout& lay, const double* p) {
  const int h = lay.h;
  return Views{CMapM(p + lay.we, h, GruModel::kPrep),
               CMapV(p + lay.be, h),
               CMapM(p + lay.w_mr, h, GruModel::kInput),
               CMapM(p + lay.w_hr, h, h),
               CMapV(p + lay.b_mr, h),
               CMapV(p + lay.b_hr, h),
               CMapM(p + lay.w_mz, h, GruModel::kInput),
               CMapM(p + lay.w_hz, h, h),
               CMapV(p + lay.b_mz, h),
               CMapV(p + lay.b_hz, h),
               CMapM(p + lay.w_mn, h, GruModel::kInput),
               CMapM(p + lay.w_hn, h, h),
               CMapV(p + lay.b_mn, h),
               CMapV(p + lay.b_hn, h),
               CMapM(p + lay.wd, GruModel::kOut, h),
               CMapV(p + lay.bd, GruModel::kOut)};
}

struct GradViews {
  MapM we;
  MapV be;
  MapM w_mr, w_hr;
  MapV b_mr, b_hr;
  MapM w_mz, w_hz;
  MapV b_mz, b_hz;
  MapM w_mn, w_hn;
  MapV b_mn, b_hn;
  MapM wd;
  MapV bd;
};

GradViews make_grad_views(const GruLayout& lay, double* p) {
  const int h = lay.h;
  return GradViews{MapM(p + lay.we, h, GruModel::kPrep),
                   MapV(p + lay.be, h),
                   MapM(p + lay.w_mr, h, GruModel::kInput),
                   MapM(p + lay.w_hr, h, h),
                   MapV(p + lay.b_mr, h),
                   MapV(p + lay.b_hr, h),
                   MapM(p + lay.w_mz, h, GruModel::kInput),
                   MapM(p + lay.w_hz, h, h),
                   MapV(p + lay.b_mz, h),
                   MapV(p + lay.b_hz, h),
                   MapM(p + lay.w_mn, h, GruModel::kInput),
                   MapM(p + lay.w_hn, h, h),
                   MapV(p + lay.b_mn, h),
                   MapV(p + lay.b_hn, h),
                   MapM(p + lay.wd, GruModel::kOut, h),
                   MapV(p + lay.bd, GruModel::kOut)};
}

/// Forward pass over a uniform-length block of shots.
struct BlockActivations {
  std::vector<MatrixXd> x;   // n inputs, 2 x c, standardized
  std::vector<MatrixXd> h;   // n+1 hidden states, H x c
  std::vector<MatrixXd> r, z, nn, a;  // n gate values each, H x c
  std::vector<MatrixXd> d;   // n+1 decoded outputs, 5 x c
};

void forward_block(const Views& v, const sme::Dataset& data,
                   std::span<const std::size_t> shots, bool keep_gates,
                   BlockActivations& act) {
  const auto c = static_cast<Eigen::Index>(shots.size());
  const std::size_t n = data.shots[shots[0]].record.steps();
  const double dt = data.shots[shots[0]].record.dt;
  const double inv_sq_dt = n > 0 ? 1.0 / std::sqrt(dt) : 0.0;
  const auto h = v.be.size();

  act.x.assign(n, MatrixXd(2, c));
  for (std::size_t t = 0; t < n; ++t) {
    for (Eigen::Index j = 0; j < c; ++j) {
      const auto& rec = data.shots[shots[j]].record;
      act.x[t](0, j) = rec.dm_i[t] * inv_sq_dt;
      act.x[t](1, j) = rec.dm_q[t] * inv_sq_dt;
    }
  }

  act.h.assign(n + 1, MatrixXd());
  act.d.assign(n + 1, MatrixXd());
  if (keep_gates) {
    act.r.assign(n, MatrixXd());
    act.z.assign(n, MatrixXd());
    act.nn.assign(n, MatrixXd());
    act.a.assign(n, MatrixXd());
  }

  MatrixXd h0(h, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    h0.col(j) = v.we.col(data.shots[shots[j]].prep) + v.be;
  }
  act.h[0] = h0.unaryExpr([](double u) { return std::tanh(u); });

  const VectorXd br = v.b_mr + v.b_hr;
  const VectorXd bz = v.b_mz + v.b_hz;
  for (std::size_t t = 0; t < n; ++t) {
    const MatrixXd& ht = act.h[t];
    MatrixXd pre_r = (v.w_mr * act.x[t] + v.w_hr * ht).colwise() + br;
    MatrixXd pre_z = (v.w_mz * act.x[t] + v.w_hz * ht).colwise() + bz;
    MatrixXd rr = pre_r.unaryExpr([](double u) { return sigmoid(u); });
    MatrixXd zz = pre_z.unaryExpr([](double u) { return sigmoid(u); });
    MatrixXd aa = (v.w_hn * ht).colwise() + v.b_hn;
    MatrixXd pre_n =
        ((v.w_mn * act.x[t]).colwise() + v.b_mn) + rr.cwiseProduct(aa);
    MatrixXd ntv = pre_n.unaryExpr([](double u) { return std::tanh(u); });
    act.h[t + 1] =
        (1.0 - zz.array()).matrix().cwiseProduct(ntv) + zz.cwiseProduct(ht);
    if (keep_gates) {
      act.r[t] = std::move(rr);
      act.z[t] = std::move(zz);
      act.nn[t] = std::move(ntv);
      act.a[t] = std::move(aa);
    }
  }
  for (std::size_t t = 0; t <= n; ++t) {
    act.d[t] = (v.wd * act.h[t]).colwise() + v.bd;
  }
}

double clamped_prob(double comp, double visibility) {
  const double pi = 0.5 * (1.0 + visibility * comp);
  return std::clamp(pi, sde::kProbClip, 1.0 - sde::kProbClip);
}

/// Groups indices by record length; group order is ascending length.
std::map<std::size_t, std::vector<std::size_t>> group_by_steps(
    const sme::Dataset& data, std::span<const std::size_t> idx) {
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (const std::size_t i : idx) groups[data.shots[i].record.steps()].push_back(i);
  return groups;
}

void shuffle_vec(std::vector<std::size_t>& v, SplitMix64 rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

GruLayout gru_layout(int hidden) {
  if (hidden < 1) throw InvalidArgument("hidden width must be positive");
  GruLayout L;
  L.h = hidden;
  const auto h = static_cast<std::size_t>(hidden);
  std::size_t off = 0;
  auto take = [&off](std::size_t count) {
    const std::size_t at = off;
    off += count;
    return at;
  };
  L.we = take(h * GruModel::kPrep);
  L.be = take(h);
  L.w_mr = take(h * GruModel::kInput);
  L.w_hr = take(h * h);
  L.b_mr = take(h);
  L.b_hr = take(h);
  L.w_mz = take(h * GruModel::kInput);
  L.w_hz = take(h * h);
  L.b_mz = take(h);
  L.b_hz = take(h);
  L.w_mn = take(h * GruModel::kInput);
  L.w_hn = take(h * h);
  L.b_mn = take(h);
  L.b_hn = take(h);
  L.wd = take(static_cast<std::size_t>(GruModel::kOut) * h);
  L.bd = take(GruModel::kOut);
  L.total = off;
  return L;
}

GruModel init_gru(int hidden, std::uint64_t seed) {
  const GruLayout lay = gru_layout(hidden);
  GruModel m;
  m.hidden = hidden;
  m.theta.resize(lay.total);
  SplitMix64 rng(derive_seed(seed, seed_tag::kInit));
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (auto& t : m.theta) t = bound * (2.0 * rng.uniform() - 1.0);
  return m;
}

std::vector<double> gru_cell(const GruModel& m, std::span<const double> h,
                             std::span<const double> x) {
  const GruLayout lay = gru_layout(m.hidden);
  const int hh = m.hidden;
  if (h.size() != static_cast<std::size_t>(hh) ||
      x.size() != static_cast<std::size_t>(GruModel::kInput))
    throw InvalidArgument("gru_cell: dimension mismatch");
  const double* p = m.theta.data();
  auto mat = [&](std::size_t off, int r, int c) { return p[off + static_cast<std::size_t>(c) * hh + r]; };

  std::vector<double> out(hh);
  for (int i = 0; i < hh; ++i) {
    double pr = p[lay.b_mr + i] + p[lay.b_hr + i];
    double pz = p[lay.b_mz + i] + p[lay.b_hz + i];
    double pa = p[lay.b_hn + i];
    double pm = p[lay.b_mn + i];
    for (int c = 0; c < GruModel::kInput; ++c) {
      pr += mat(lay.w_mr, i, c) * x[c];
      pz += mat(lay.w_mz, i, c) * x[c];
      pm += mat(lay.w_mn, i, c) * x[c];
    }
    for (int c = 0; c < hh; ++c) {
      pr += mat(lay.w_hr, i, c) * h[c];
      pz += mat(lay.w_hz, i, c) * h[c];
      pa += mat(lay.w_hn, i, c) * h[c];
    }
    const double r = sigmoid(pr);
    const double z = sigmoid(pz);
    const double n = std::tanh(pm + r * pa);
    out[i] = (1.0 - z) * n + z * h[i];
  }
  return out;
}

ForwardResult forward(const GruModel& m, const sme::TrajectoryRecord& shot) {
  const GruLayout lay = gru_layout(m.hidden);
  const int hh = m.hidden;
  const double* p = m.theta.data();
  const std::size_t n = shot.record.steps();
  const double sq_dt = std::sqrt(shot.record.dt);

  std::vector<double> h(hh);
  for (int i = 0; i < hh; ++i) {
    h[i] = std::tanh(p[lay.we + static_cast<std::size_t>(shot.prep) * hh + i] +
                     p[lay.be + i]);
  }

  auto decode = [&](const std::vector<double>& hv) {
    std::array<double, GruModel::kOut> d{};
    for (int o = 0; o < GruModel::kOut; ++o) {
      double acc = p[lay.bd + o];
      for (int c = 0; c < hh; ++c)
        acc += p[lay.wd + static_cast<std::size_t>(c) * GruModel::kOut + o] * hv[c];
      d[o] = acc;
    }
    return d;
  };

  ForwardResult res;
  res.r.reserve(n + 1);
  res.dm_pred.reserve(n);
  auto d0 = decode(h);
  res.r.push_back({d0[0], d0[1], d0[2]});
  for (std::size_t t = 0; t < n; ++t) {
    res.dm_pred.push_back({d0[3] * sq_dt, d0[4] * sq_dt});
    const std::array<double, 2> x{shot.record.dm_i[t] / sq_dt,
                                  shot.record.dm_q[t] / sq_dt};
    h = gru_cell(m, h, x);
    d0 = decode(h);
    res.r.push_back({d0[0], d0[1], d0[2]});
  }
  return res;
}

std::vector<ForwardResult> forward_all(const GruModel& m,
                                       const sme::Dataset& data,
                                       std::span<const std::size_t> idx,
                                       par::Pool& pool) {
  const GruLayout lay = gru_layout(m.hidden);
  const Views v = make_views(lay, m.theta.data());
  std::vector<ForwardResult> out(idx.size());

  // position of each shot in the output
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t k = 0; k < idx.size(); ++k)
    groups[data.shots[idx[k]].record.steps()].push_back(k);

  for (const auto& [steps, positions] : groups) {
    pool.for_chunks(positions.size(), kCols,
                    [&, steps = steps, &positions = positions](
                        std::size_t, std::size_t b, std::size_t e) {
                      std::vector<std::size_t> shots(e - b);
                      for (std::size_t k = b; k < e; ++k)
                        shots[k - b] = idx[positions[k]];
                      BlockActivations act;
                      forward_block(v, data, shots, false, act);
                      const double sq_dt =
                          std::sqrt(data.shots[shots[0]].record.dt);
                      for (std::size_t k = b; k < e; ++k) {
                        const auto j = static_cast<Eigen::Index>(k - b);
                        ForwardResult& fr = out[positions[k]];
                        fr.r.resize(steps + 1);
                        fr.dm_pred.resize(steps);
                        for (std::size_t t = 0; t <= steps; ++t) {
                          fr.r[t] = {act.d[t](0, j), act.d[t](1, j),
                                     act.d[t](2, j)};
                          if (t < steps)
                            fr.dm_pred[t] = {act.d[t](3, j) * sq_dt,
                                             act.d[t](4, j) * sq_dt};
                        }
                      }
                    });
  }
  return out;
}

std::vector<std::vector<RawBloch>> trajectories(const GruModel& m,
                                                const sme::Dataset& data,
                                                par::Pool& pool) {
  std::vector<std::size_t> idx(data.shots.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto fw = forward_all(m, data, idx, pool);
  std::vector<std::vector<RawBloch>> out(fw.size());
  for (std::size_t i = 0; i < fw.size(); ++i) out[i] = std::move(fw[i].r);
  return out;
}

double ce_loss(std::span<const double> pi, std::span<const std::int8_t> y) {
  if (pi.size() != y.size()) throw InvalidArgument("ce_loss: length mismatch");
  if (pi.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    const double p = std::clamp(pi[i], sde::kProbClip, 1.0 - sde::kProbClip);
    acc -= y[i] > 0 ? std::log(p) : std::log(1.0 - p);
  }
  return acc / static_cast<double>(pi.size());
}

double posit_loss(std::span<const std::vector<RawBloch>> series_batch) {
  double acc = 0.0;
  std::size_t count = 0;
  for (const auto& series : series_batch) {
    for (const auto& r : series) {
      const double s = r.x * r.x + r.y * r.y + r.z * r.z - 1.0;
      if (s > 0.0) acc += s;
      ++count;
    }
  }
  return count ? acc / static_cast<double>(count) : 0.0;
}

double prep_loss(std::span<const RawBloch> r0_batch,
                 std::span<const BlochVector> targets) {
  if (r0_batch.size() != targets.size())
    throw InvalidArgument("prep_loss: length mismatch");
  if (r0_batch.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < r0_batch.size(); ++i) {
    const double dx = r0_batch[i].x - targets[i].x;
    const double dy = r0_batch[i].y - targets[i].y;
    const double dz = r0_batch[i].z - targets[i].z;
    acc += dx * dx + dy * dy + dz * dz;
  }
  return acc / static_cast<double>(r0_batch.size());
}

double pred_loss(std::span<const double> predicted,
                 std::span<const double> actual) {
  if (predicted.size() != actual.size())
    throw InvalidArgument("pred_loss: length mismatch");
  if (predicted.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted[i] - actual[i];
    acc += e * e;
  }
  return acc / static_cast<double>(predicted.size());
}

BatchLoss batch_loss(const GruModel& m, const sme::Dataset& data,
                     std::span<const std::size_t> idx, const LossWeights& w,
                     const sde::SpamModel& spam, par::Pool& pool,
                     std::span<double> grad) {
  if (idx.empty()) return {};
  const GruLayout lay = gru_layout(m.hidden);
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != lay.total)
    throw InvalidArgument("batch_loss: gradient buffer size mismatch");

  const std::size_t n = data.shots[idx[0]].record.steps();
  for (const std::size_t i : idx) {
    if (data.shots[i].record.steps() != n)
      throw InvalidArgument("batch_loss: shots must share one record length");
  }
  const double dt = data.shots[idx[0]].record.dt;
  const double sq_dt = std::sqrt(dt);
  const auto bsz = static_cast<double>(idx.size());

  const double f_ce = 1.0 / bsz;
  const double f_posit = w.posit / (bsz * static_cast<double>(n + 1));
  const double f_prep = w.prep / bsz;
  const double f_pred = n > 0 ? w.dm / (bsz * static_cast<double>(n) * 2.0) : 0.0;

  const Views v = make_views(lay, m.theta.data());

  struct Slot {
    BatchLoss loss;
    std::vector<double> grad;
  };
  const std::size_t n_chunks = (idx.size() + kCols - 1) / kCols;
  std::vector<Slot> slots(n_chunks);

  pool.for_chunks(idx.size(), kCols, [&](std::size_t ci, std::size_t b,
                                         std::size_t e) {
    Slot& slot = slots[ci];
    if (want_grad) slot.grad.assign(lay.total, 0.0);
    const std::span<const std::size_t> shots = idx.subspan(b, e - b);
    const auto c = static_cast<Eigen::Index>(shots.size());

    BlockActivations act;
    forward_block(v, data, shots, want_grad, act);

    // Decode-level deltas, filled while accumulating the loss pieces.
    std::vector<MatrixXd> dd;
    if (want_grad) dd.assign(n + 1, MatrixXd::Zero(GruModel::kOut, c));

    for (std::size_t t = 0; t <= n; ++t) {
      for (Eigen::Index j = 0; j < c; ++j) {
        const double rx = act.d[t](0, j);
        const double ry = act.d[t](1, j);
        const double rz = act.d[t](2, j);
        const double s = rx * rx + ry * ry + rz * rz - 1.0;
        if (s > 0.0) {
          slot.loss.posit += f_posit * s;
          if (want_grad) {
            dd[t](0, j) += f_posit * 2.0 * rx;
            dd[t](1, j) += f_posit * 2.0 * ry;
            dd[t](2, j) += f_posit * 2.0 * rz;
          }
        }
      }
    }

    for (Eigen::Index j = 0; j < c; ++j) {
      const auto& shot = data.shots[shots[j]];
      // preparation anchor at t = 0
      const BlochVector& tgt = spam.r0[shot.prep];
      const double ex = act.d[0](0, j) - tgt.x;
      const double ey = act.d[0](1, j) - tgt.y;
      const double ez = act.d[0](2, j) - tgt.z;
      slot.loss.prep += f_prep * (ex * ex + ey * ey + ez * ez);
      if (want_grad) {
        dd[0](0, j) += f_prep * 2.0 * ex;
        dd[0](1, j) += f_prep * 2.0 * ey;
        dd[0](2, j) += f_prep * 2.0 * ez;
      }

      // terminal cross entropy
      const int arow = static_cast<int>(shot.axis);
      const double comp = act.d[n](arow, j);
      const double vis = spam.readout_visibility[arow];
      const double pi_raw = 0.5 * (1.0 + vis * comp);
      const double pi = std::clamp(pi_raw, sde::kProbClip, 1.0 - sde::kProbClip);
      slot.loss.ce += f_ce * (shot.outcome > 0 ? -std::log(pi) : -std::log(1.0 - pi));
      if (want_grad && pi_raw > sde::kProbClip && pi_raw < 1.0 - sde::kProbClip) {
        const double dce_dpi = shot.outcome > 0 ? -1.0 / pi : 1.0 / (1.0 - pi);
        dd[n](arow, j) += f_ce * dce_dpi * 0.5 * vis;
      }

      // record prediction head (original units)
      for (std::size_t t = 0; t < n; ++t) {
        const double pi_i = act.d[t](3, j) * sq_dt - shot.record.dm_i[t];
        const double pi_q = act.d[t](4, j) * sq_dt - shot.record.dm_q[t];
        slot.loss.pred += f_pred * (pi_i * pi_i + pi_q * pi_q);
        if (want_grad) {
          dd[t](3, j) += f_pred * 2.0 * pi_i * sq_dt;
          dd[t](4, j) += f_pred * 2.0 * pi_q * sq_dt;
        }
      }
    }

    if (!want_grad) return;
    GradViews g = make_grad_views(lay, slot.grad.data());

    MatrixXd delta_h = v.wd.transpose() * dd[n];
    g.wd += dd[n] * act.h[n].transpose();
    g.bd += dd[n].rowwise().sum();

    for (std::size_t t = n; t-- > 0;) {
      // delta_h holds d loss / d h_{t+1}
      const MatrixXd& rr = act.r[t];
      const MatrixXd& zz = act.z[t];
      const MatrixXd& ntv = act.nn[t];
      const MatrixXd& aa = act.a[t];
      const MatrixXd& ht = act.h[t];

      const MatrixXd dn = delta_h.cwiseProduct((1.0 - zz.array()).matrix());
      const MatrixXd dz = delta_h.cwiseProduct(ht - ntv);
      MatrixXd dh_prev = delta_h.cwiseProduct(zz);

      const MatrixXd dpre_n =
          dn.cwiseProduct((1.0 - ntv.array().square()).matrix());
      g.w_mn += dpre_n * act.x[t].transpose();
      g.b_mn += dpre_n.rowwise().sum();
      const MatrixXd dr = dpre_n.cwiseProduct(aa);
      const MatrixXd da = dpre_n.cwiseProduct(rr);
      g.w_hn += da * ht.transpose();
      g.b_hn += da.rowwise().sum();
      dh_prev += v.w_hn.transpose() * da;

      const MatrixXd dpre_r =
          dr.cwiseProduct(rr.cwiseProduct((1.0 - rr.array()).matrix()));
      g.w_mr += dpre_r * act.x[t].transpose();
      g.b_mr += dpre_r.rowwise().sum();
      g.w_hr += dpre_r * ht.transpose();
      g.b_hr += dpre_r.rowwise().sum();
      dh_prev += v.w_hr.transpose() * dpre_r;

      const MatrixXd dpre_z =
          dz.cwiseProduct(zz.cwiseProduct((1.0 - zz.array()).matrix()));
      g.w_mz += dpre_z * act.x[t].transpose();
      g.b_mz += dpre_z.rowwise().sum();
      g.w_hz += dpre_z * ht.transpose();
      g.b_hz += dpre_z.rowwise().sum();
      dh_prev += v.w_hz.transpose() * dpre_z;

      // decode contribution of the state at step t
      dh_prev += v.wd.transpose() * dd[t];
      g.wd += dd[t] * ht.transpose();
      g.bd += dd[t].rowwise().sum();

      delta_h = std::move(dh_prev);
    }

    const MatrixXd dpre0 =
        delta_h.cwiseProduct((1.0 - act.h[0].array().square()).matrix());
    for (Eigen::Index j = 0; j < c; ++j) {
      g.we.col(data.shots[shots[j]].prep) += dpre0.col(j);
    }
    g.be += dpre0.rowwise().sum();
  });

  BatchLoss total;
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
  par::tree_reduce(std::span<Slot>(slots), [&](Slot& a, const Slot& b) {
    a.loss.ce += b.loss.ce;
    a.loss.posit += b.loss.posit;
    a.loss.prep += b.loss.prep;
    a.loss.pred += b.loss.pred;
    if (want_grad) {
      if (a.grad.empty()) a.grad.assign(lay.total, 0.0);
      if (!b.grad.empty()) {
        for (std::size_t i = 0; i < lay.total; ++i) a.grad[i] += b.grad[i];
      }
    }
  });
  total = slots[0].loss;
  if (want_grad && !slots[0].grad.empty())
    std::copy(slots[0].grad.begin(), slots[0].grad.end(), grad.begin());
  total.total = total.ce + total.posit + total.prep + total.pred;
  return total;
}

std::vector<double> outcome_probs(const GruModel& m, const sme::Dataset& data,
                                  std::span<const std::size_t> idx,
                                  const sde::SpamModel& spam, par::Pool& pool) {
  auto fw = forward_all(m, data, idx, pool);
  std::vector<double> pi(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& shot = data.shots[idx[k]];
    const RawBloch& r = fw[k].r.back();
    const double comp = shot.axis == Axis::X   ? r.x
                        : shot.axis == Axis::Y ? r.y
                                               : r.z;
    pi[k] = clamped_prob(comp, spam.readout_visibility[static_cast<int>(shot.axis)]);
  }
  return pi;
}

std::pair<GruModel, RnnReport> train_rnn(const sme::Dataset& data,
                                         const LossWeights& w,
                                         const RnnTrainConfig& cfg,
                                         par::Pool& pool) {
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& s : data.shots) {
    if (std::abs(s.record.dt - data.meta.dt) > 1e-12)
      throw InvalidArgument("shot dt does not match the dataset dt");
  }
  const sde::SpamModel spam =
      cfg.use_spam_fit ? sde::fit_spam(data, cfg.fit_readout) : sde::ideal_spam();
  const auto train_idx = data.indices_of(sme::Split::Train);
  const auto val_idx = data.indices_of(sme::Split::Validation);
  if (train_idx.empty() || val_idx.empty())
    throw InvalidArgument("training needs non-empty train and validation splits");

  GruModel model = init_gru(cfg.hidden, cfg.seed);
  const GruLayout lay = gru_layout(cfg.hidden);
  ad::AdamState adam(lay.total, cfg.lr);
  std::vector<double> grad(lay.total, 0.0);

  auto val_ce = [&](const GruModel& mm) {
    const auto pi = outcome_probs(mm, data, val_idx, spam, pool);
    std::vector<std::int8_t> y(val_idx.size());
    for (std::size_t k = 0; k < val_idx.size(); ++k)
      y[k] = data.shots[val_idx[k]].outcome;
    return ce_loss(pi, y);
  };

  RnnReport rep;
  rep.seed = cfg.seed;
  rep.weights = w;
  rep.init_val_ce = val_ce(model);
  rep.best_val_ce = rep.init_val_ce;
  std::vector<double> best_theta = model.theta;

  auto groups = group_by_steps(data, train_idx);
  const auto batch_size = static_cast<std::size_t>(std::max(cfg.batch, 1));

  int stale = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::uint64_t epoch_seed =
        derive_seed(derive_seed(cfg.seed, seed_tag::kShuffle),
                    static_cast<std::uint64_t>(epoch));
    std::vector<std::vector<std::size_t>> batches;
    std::size_t ordinal = 1;
    for (auto& [steps, members] : groups) {
      shuffle_vec(members, SplitMix64(derive_seed(epoch_seed, ordinal++)));
      for (std::size_t b = 0; b < members.size(); b += batch_size) {
        const std::size_t e = std::min(members.size(), b + batch_size);
        batches.emplace_back(members.begin() + b, members.begin() + e);
      }
    }
    {  // mix batches of different horizons
      SplitMix64 rng(derive_seed(epoch_seed, 0));
      for (std::size_t i = batches.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.next() % i);
        std::swap(batches[i - 1], batches[j]);
      }
    }

    double total_sum = 0.0, ce_sum = 0.0;
    for (const auto& b : batches) {
      const BatchLoss bl = batch_loss(model, data, b, w, spam, pool, grad);
      if (!std::isfinite(bl.total))
        throw TrainingDiverged("loss became non-finite at epoch " +
                               std::to_string(epoch));
      ad::adam_step(adam, model.theta, grad);
      total_sum += bl.total;
      ce_sum += bl.ce;
    }
    const double v = val_ce(model);
    rep.curve.push_back({batches.empty() ? 0.0 : total_sum / batches.size(),
                         batches.empty() ? 0.0 : ce_sum / batches.size(), v});
    if (v < rep.best_val_ce) {
      rep.best_val_ce = v;
      rep.best_epoch = epoch;
      best_theta = model.theta;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }

  model.theta = std::move(best_theta);
  rep.wallclock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return {std::move(model), std::move(rep)};
}

}  // namespace qtraj::rnn
