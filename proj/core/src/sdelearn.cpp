#include "qtraj/sdelearn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <tuple>

namespace qtraj::sde {

namespace {

constexpr std::size_t kChunk = 64;

void shuffle_indices(std::vector<std::size_t>& idx, SplitMix64 rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

void check_uniform_dt(const sme::Dataset& data) {
  for (const auto& s : data.shots) {
    if (std::abs(s.record.dt - data.meta.dt) > 1e-12)
      throw InvalidArgument("shot dt does not match the dataset dt");
  }
}

struct BatchOut {
  double value = 0.0;
  std::vector<double> grad;
  long skipped = 0;
};

template <int W>
struct GradSlot {
  double sum = 0.0;
  std::array<double, W> g{};
  double terms = 0.0;
  long skipped = 0;
};

/// Batched CE value+gradient at unconstrained parameters u.
template <int W>
BatchOut ce_value_grad(PackKind kind, std::span<const double> u,
                       const SpamModel& spam, const sme::Dataset& data,
                       std::span<const std::size_t> idx, par::Pool& pool) {
  using D = ad::Dual<W>;
  std::vector<D> du(u.size());
  for (int i = 0; i < W; ++i) du[i] = D::seeded(u[i], i);
  const sme::ModelT<D> model = materialize<D>(kind, std::span<const D>(du));
  const sme::Channels<D> channels = sme::make_channels(model);

  const std::size_t n_chunks = (idx.size() + kChunk - 1) / kChunk;
  std::vector<GradSlot<W>> slots(n_chunks);
  pool.for_chunks(idx.size(), kChunk,
                  [&](std::size_t ci, std::size_t b, std::size_t e) {
                    auto& s = slots[ci];
                    for (std::size_t i = b; i < e; ++i) {
                      const auto& shot = data.shots[idx[i]];
                      try {
                        const D ce = outcome_ce_t(
                            filtered_terminal_t(model, channels,
                                                spam.r0[shot.prep],
                                                shot.record),
                            shot.axis, shot.outcome, spam);
                        s.sum += ce.v;
                        for (int w = 0; w < W; ++w) s.g[w] += ce.d[w];
                        s.terms += 1.0;
                      } catch (const DegenerateState&) {
                        ++s.skipped;
                      }
                    }
                  });

  GradSlot<W> total =
      par::tree_reduce(std::span<GradSlot<W>>(slots),
                       [](GradSlot<W>& a, const GradSlot<W>& b) {
                         a.sum += b.sum;
                         for (int w = 0; w < W; ++w) a.g[w] += b.g[w];
                         a.terms += b.terms;
                         a.skipped += b.skipped;
                       });
  BatchOut out;
  out.skipped = total.skipped;
  const double inv = total.terms > 0 ? 1.0 / total.terms : 0.0;
  out.value = total.sum * inv;
  out.grad.resize(u.size());
  for (int w = 0; w < W; ++w) out.grad[w] = total.g[w] * inv;
  return out;
}

/// Batched distillation MSE value+gradient (mean over all states).
template <int W>
BatchOut mse_value_grad(PackKind kind, std::span<const double> u,
                        const SpamModel& spam, const sme::Dataset& data,
                        const std::vector<std::vector<RawBloch>>& targets,
                        std::span<const std::size_t> idx, par::Pool& pool) {
  using D = ad::Dual<W>;
  std::vector<D> du(u.size());
  for (int i = 0; i < W; ++i) du[i] = D::seeded(u[i], i);
  const sme::ModelT<D> model = materialize<D>(kind, std::span<const D>(du));

  const std::size_t n_chunks = (idx.size() + kChunk - 1) / kChunk;
  std::vector<GradSlot<W>> slots(n_chunks);
  pool.for_chunks(
      idx.size(), kChunk, [&](std::size_t ci, std::size_t b, std::size_t e) {
        auto& s = slots[ci];
        for (std::size_t i = b; i < e; ++i) {
          const auto& shot = data.shots[idx[i]];
          const auto& tgt = targets[idx[i]];
          try {
            const D sq = shot_sq_dist_t(model, spam, shot,
                                        std::span<const RawBloch>(tgt));
            s.sum += sq.v;
            for (int w = 0; w < W; ++w) s.g[w] += sq.d[w];
            s.terms += static_cast<double>(tgt.size());
          } catch (const DegenerateState&) {
            ++s.skipped;
          }
        }
      });

  GradSlot<W> total =
      par::tree_reduce(std::span<GradSlot<W>>(slots),
                       [](GradSlot<W>& a, const GradSlot<W>& b) {
                         a.sum += b.sum;
                         for (int w = 0; w < W; ++w) a.g[w] += b.g[w];
                         a.terms += b.terms;
                         a.skipped += b.skipped;
                       });
  BatchOut out;
  out.skipped = total.skipped;
  const double inv = total.terms > 0 ? 1.0 / total.terms : 0.0;
  out.value = total.sum * inv;
  out.grad.resize(u.size());
  for (int w = 0; w < W; ++w) out.grad[w] = total.g[w] * inv;
  return out;
}

double mse_eval(const sme::PhysicalModel& m, const SpamModel& spam,
                const sme::Dataset& data,
                const std::vector<std::vector<RawBloch>>& targets,
                std::span<const std::size_t> idx, par::Pool& pool,
                long* skipped = nullptr) {
  struct Slot {
    double sum = 0.0;
    double terms = 0.0;
    long skipped = 0;
  };
  const std::size_t n_chunks = (idx.size() + kChunk - 1) / kChunk;
  std::vector<Slot> slots(n_chunks);
  pool.for_chunks(idx.size(), kChunk,
                  [&](std::size_t ci, std::size_t b, std::size_t e) {
                    auto& s = slots[ci];
                    for (std::size_t i = b; i < e; ++i) {
                      const auto& shot = data.shots[idx[i]];
                      const auto& tgt = targets[idx[i]];
                      try {
                        const double sq = shot_sq_dist_t<double>(
                            m, spam, shot, std::span<const RawBloch>(tgt));
                        s.sum += sq;
                        s.terms += static_cast<double>(tgt.size());
                      } catch (const DegenerateState&) {
                        ++s.skipped;
                      }
                    }
                  });
  Slot total = par::tree_reduce(std::span<Slot>(slots),
                                [](Slot& a, const Slot& b) {
                                  a.sum += b.sum;
                                  a.terms += b.terms;
                                  a.skipped += b.skipped;
                                });
  if (skipped) *skipped += total.skipped;
  return total.terms > 0 ? total.sum / total.terms : 0.0;
}

ParamPack random_init(PackKind kind, const TrainConfig& cfg, double omega0,
                      double gamma0, std::uint64_t seed) {
  SplitMix64 rng(seed);
  auto log_uniform = [&](double lo, double hi) {
    return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * rng.uniform());
  };
  const double spread = std::log(cfg.init_spread);
  const double omega = omega0 * std::exp(spread * (2.0 * rng.uniform() - 1.0));
  const double gamma = gamma0 * std::exp(spread * (2.0 * rng.uniform() - 1.0));
  const double eta = log_uniform(cfg.eta_init_lo, cfg.eta_init_hi);

  ParamPack p;
  p.kind = kind;
  if (kind == PackKind::Constrained) {
    p.u = {omega, inv_softplus(gamma), logit(eta)};
    return p;
  }
  std::vector<double> u(12, 0.0);
  u[0] = 0.5 * omega;
  u[3] = std::sqrt(0.5 * gamma);
  u[9] = -std::sqrt(0.5 * gamma);
  u[11] = logit(eta);
  for (int i : {1, 2, 4, 5, 6, 7, 8, 10}) {
    u[i] = cfg.operator_init_sigma * rng.gauss_pair().first;
  }
  if (kind == PackKind::Extended) {
    u.push_back(inv_softplus(log_uniform(cfg.relax_init_lo, cfg.relax_init_hi)));
    u.push_back(inv_softplus(log_uniform(cfg.relax_init_lo, cfg.relax_init_hi)));
  }
  p.u = std::move(u);
  return p;
}

template <class Fn>
auto with_width(PackKind kind, Fn&& fn) {
  switch (kind) {
    case PackKind::Constrained:
      return fn(std::integral_constant<int, 3>{});
    case PackKind::Operator:
      return fn(std::integral_constant<int, 12>{});
    case PackKind::Extended:
      return fn(std::integral_constant<int, 14>{});
  }
  throw InvalidArgument("unknown parameter pack kind");
}

template <class GradFn, class EvalFn>
MemberResult run_member(const ParamPack& init, const TrainConfig& cfg,
                        std::vector<std::size_t> train_idx,
                        std::uint64_t member_seed, GradFn&& grad_fn,
                        EvalFn&& eval_fn) {
  MemberResult res;
  res.seed = member_seed;
  res.init = init;
  ParamPack cur = init;
  ad::AdamState adam(cur.u.size(), cfg.lr);

  res.init_val = eval_fn(cur);
  res.best = cur;
  res.best_val = res.init_val;

  int stale = 0;
  const auto batch = static_cast<std::size_t>(std::max(cfg.batch, 1));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_indices(train_idx,
                    stream_for(member_seed, seed_tag::kShuffle,
                               static_cast<std::uint64_t>(epoch)));
    double train_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t b = 0; b < train_idx.size(); b += batch) {
      const std::size_t len = std::min(batch, train_idx.size() - b);
      BatchOut out = grad_fn(cur, std::span<const std::size_t>(
                                      train_idx.data() + b, len));
      res.skipped_shots += out.skipped;
      if (!std::isfinite(out.value))
        throw TrainingDiverged("objective became non-finite");
      ad::adam_step(adam, cur.u, out.grad);
      train_sum += out.value;
      ++n_batches;
    }
    const double v = eval_fn(cur);
    res.curve.push_back({n_batches ? train_sum / n_batches : 0.0, v});
    if (v < res.best_val) {
      res.best_val = v;
      res.best = cur;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return res;
}

int best_member_index(const std::vector<MemberResult>& members) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(members.size()); ++i) {
    if (members[i].best_val < members[best].best_val) best = i;
  }
  return best;
}

}  // namespace

int pack_width(PackKind kind) {
  switch (kind) {
    case PackKind::Constrained: return 3;
    case PackKind::Operator: return 12;
    case PackKind::Extended: return 14;
  }
  throw InvalidArgument("unknown parameter pack kind");
}

const char* pack_name(PackKind kind) {
  switch (kind) {
    case PackKind::Constrained: return "constrained";
    case PackKind::Operator: return "operator";
    case PackKind::Extended: return "extended";
  }
  throw InvalidArgument("unknown parameter pack kind");
}

ParamPack pack_from_model(PackKind kind, const sme::PhysicalModel& m) {
  ParamPack p;
  p.kind = kind;
  const double eta_raw = logit(std::clamp(m.eta, 1e-12, 1.0 - 1e-12));
  if (kind == PackKind::Constrained) {
    const double omega = 2.0 * m.h.m01.re;
    const double gamma = 2.0 * m.l.m00.re * m.l.m00.re;
    p.u = {omega, inv_softplus(std::max(gamma, 1e-12)), eta_raw};
    return p;
  }
  std::vector<double> u = {
      m.h.m01.re,  -m.h.m01.im, m.h.m00.re,  m.l.m00.re,
      m.l.m00.im,  m.l.m01.re,  m.l.m01.im,  m.l.m10.re,
      m.l.m10.im,  m.l.m11.re,  m.l.m11.im,  eta_raw};
  if (kind == PackKind::Extended) {
    u.push_back(inv_softplus(std::max(m.gamma_up, 1e-12)));
    u.push_back(inv_softplus(std::max(m.gamma_down, 1e-12)));
  }
  p.u = std::move(u);
  return p;
}

std::vector<std::pair<std::string, double>> named_params(const ParamPack& p) {
  std::vector<std::pair<std::string, double>> out;
  const sme::PhysicalModel m = materialize(p);
  if (p.kind == PackKind::Constrained) {
    out.emplace_back("omega_r", p.u[0]);
    out.emplace_back("gamma_d", softplus(p.u[1]));
    out.emplace_back("eta", logistic(p.u[2]));
    return out;
  }
  out.emplace_back("h_x", p.u[0]);
  out.emplace_back("h_y", p.u[1]);
  out.emplace_back("h_z", p.u[2]);
  const char* names[8] = {"l_00_re", "l_00_im", "l_01_re", "l_01_im",
                          "l_10_re", "l_10_im", "l_11_re", "l_11_im"};
  for (int i = 0; i < 8; ++i) out.emplace_back(names[i], p.u[3 + i]);
  out.emplace_back("eta", logistic(p.u[11]));
  // Derived comparison values: the sx component of H and the sz component
  // of L carry the drive rate and the dephasing rate.
  const double lz_re = 0.5 * (p.u[3] - p.u[9]);
  const double lz_im = 0.5 * (p.u[4] - p.u[10]);
  out.emplace_back("omega_r", 2.0 * p.u[0]);
  out.emplace_back("gamma_d", 2.0 * (lz_re * lz_re + lz_im * lz_im));
  if (p.kind == PackKind::Extended) {
    out.emplace_back("gamma_up", m.gamma_up);
    out.emplace_back("gamma_down", m.gamma_down);
  }
  return out;
}

SpamModel ideal_spam() {
  SpamModel s;
  for (int p = 0; p < kNumPreps; ++p) s.r0[p] = prep_bloch(p);
  return s;
}

double predict_outcome_prob(const BlochVector& r, Axis axis,
                            const SpamModel& spam) {
  const double f = spam.readout_visibility[static_cast<int>(axis)];
  const double pi = 0.5 * (1.0 + f * axis_component(r, axis));
  return std::clamp(pi, kProbClip, 1.0 - kProbClip);
}

SpamModel fit_spam(const sme::Dataset& data, bool fit_readout) {
  double sum[kNumPreps][3] = {};
  long cnt[kNumPreps][3] = {};
  for (const auto& shot : data.shots) {
    if (shot.record.steps() != 0) continue;
    sum[shot.prep][static_cast<int>(shot.axis)] += shot.outcome;
    ++cnt[shot.prep][static_cast<int>(shot.axis)];
  }
  for (int p = 0; p < kNumPreps; ++p) {
    for (int a = 0; a < 3; ++a) {
      if (cnt[p][a] == 0)
        throw MissingCell("no zero-duration shots for preparation " +
                          std::to_string(p) + ", axis " + std::to_string(a));
    }
  }

  SpamModel out;
  if (fit_readout) {
    // Preparations whose ideal component along the axis is +1 / -1.
    const int plus[3] = {2, 4, 0};
    const int minus[3] = {3, 5, 1};
    for (int a = 0; a < 3; ++a) {
      const double num = sum[plus[a]][a] - sum[minus[a]][a];
      const double den =
          static_cast<double>(cnt[plus[a]][a] + cnt[minus[a]][a]);
      out.readout_visibility[a] = std::clamp(num / den, 0.0, 1.0);
    }
  }
  for (int p = 0; p < kNumPreps; ++p) {
    BlochVector r{};
    const double* f = out.readout_visibility.data();
    r.x = sum[p][0] / cnt[p][0] / std::max(f[0], 1e-3);
    r.y = sum[p][1] / cnt[p][1] / std::max(f[1], 1e-3);
    r.z = sum[p][2] / cnt[p][2] / std::max(f[2], 1e-3);
    const double n2 = bloch_norm2(r);
    if (n2 > 1.0) {
      const double s = 1.0 / std::sqrt(n2);
      r = {r.x * s, r.y * s, r.z * s};
    }
    out.r0[p] = r;
  }
  return out;
}

std::vector<BlochVector> infer_trajectory(const sme::PhysicalModel& m,
                                          const SpamModel& spam,
                                          const sme::TrajectoryRecord& shot) {
  return filtered_series_t<double>(m, spam.r0[shot.prep], shot.record);
}

double dataset_ce(const sme::PhysicalModel& m, const SpamModel& spam,
                  const sme::Dataset& data, std::span<const std::size_t> idx,
                  par::Pool& pool, long* skipped) {
  struct Slot {
    double sum = 0.0;
    double terms = 0.0;
    long skipped = 0;
  };
  const sme::Channels<double> channels = sme::make_channels(m);
  const std::size_t n_chunks = (idx.size() + kChunk - 1) / kChunk;
  std::vector<Slot> slots(n_chunks);
  pool.for_chunks(idx.size(), kChunk,
                  [&](std::size_t ci, std::size_t b, std::size_t e) {
                    auto& s = slots[ci];
                    for (std::size_t i = b; i < e; ++i) {
                      const auto& shot = data.shots[idx[i]];
                      try {
                        s.sum += outcome_ce_t<double>(
                            filtered_terminal_t<double>(
                                m, channels, spam.r0[shot.prep], shot.record),
                            shot.axis, shot.outcome, spam);
                        s.terms += 1.0;
                      } catch (const DegenerateState&) {
                        ++s.skipped;
                      }
                    }
                  });
  Slot total = par::tree_reduce(std::span<Slot>(slots),
                                [](Slot& a, const Slot& b) {
                                  a.sum += b.sum;
                                  a.terms += b.terms;
                                  a.skipped += b.skipped;
                                });
  if (skipped) *skipped += total.skipped;
  return total.terms > 0 ? total.sum / total.terms : 0.0;
}

double me_baseline_ce(const sme::PhysicalModel& m, const SpamModel& spam,
                      const sme::Dataset& data,
                      std::span<const std::size_t> idx, int substeps) {
  const double dt = data.meta.dt;
  std::map<std::pair<int, std::size_t>, BlochVector> cache;
  double sum = 0.0;
  double terms = 0.0;
  for (const std::size_t i : idx) {
    const auto& shot = data.shots[i];
    const std::pair<int, std::size_t> key{shot.prep, shot.record.steps()};
    auto it = cache.find(key);
    if (it == cache.end()) {
      const auto series =
          sme::integrate_me(spam.r0[shot.prep], m,
                            static_cast<double>(key.second) * dt, dt, substeps);
      it = cache.emplace(key, series.back()).first;
    }
    sum += outcome_ce_t<double>(promote3<double>(it->second), shot.axis,
                                shot.outcome, spam);
    terms += 1.0;
  }
  return terms > 0 ? sum / terms : 0.0;
}

TrainReport train_sde(const sme::Dataset& data, PackKind kind,
                      const TrainConfig& cfg, par::Pool& pool) {
  const auto t0 = std::chrono::steady_clock::now();
  check_uniform_dt(data);
  const SpamModel spam =
      cfg.use_spam_fit ? fit_spam(data, cfg.fit_readout) : ideal_spam();
  const auto train_idx = data.indices_of(sme::Split::Train);
  const auto val_idx = data.indices_of(sme::Split::Validation);
  if (train_idx.empty() || val_idx.empty())
    throw InvalidArgument("training needs non-empty train and validation splits");

  double omega0 = cfg.init_omega;
  double gamma0 = cfg.init_gamma;
  if (omega0 <= 0.0 || gamma0 <= 0.0) {
    const RateEstimate est = estimate_rates(data);
    if (omega0 <= 0.0) omega0 = est.omega;
    if (gamma0 <= 0.0) gamma0 = est.gamma;
  }

  TrainReport rep;
  rep.kind = kind;
  rep.objective = "ce";
  rep.seed = cfg.seed;
  for (int k = 0; k < cfg.ensemble; ++k) {
    const std::uint64_t mseed = derive_seed(
        derive_seed(cfg.seed, seed_tag::kInit), static_cast<std::uint64_t>(k));
    const ParamPack init = random_init(kind, cfg, omega0, gamma0, mseed);
    MemberResult mr = with_width(kind, [&](auto wc) {
      constexpr int W = decltype(wc)::value;
      auto grad_fn = [&](const ParamPack& p, std::span<const std::size_t> b) {
        return ce_value_grad<W>(kind, p.u, spam, data, b, pool);
      };
      auto eval_fn = [&](const ParamPack& p) {
        return dataset_ce(materialize(p), spam, data, val_idx, pool);
      };
      return run_member(init, cfg, train_idx, mseed, grad_fn, eval_fn);
    });
    rep.members.push_back(std::move(mr));
  }
  rep.best_member = best_member_index(rep.members);
  rep.wallclock_s = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
  return rep;
}

TrainReport distill(const std::vector<std::vector<RawBloch>>& targets,
                    const sme::Dataset& data, PackKind kind,
                    const TrainConfig& cfg, par::Pool& pool) {
  const auto t0 = std::chrono::steady_clock::now();
  check_uniform_dt(data);
  if (targets.size() != data.shots.size())
    throw InvalidArgument("one target series per shot is required");
  const SpamModel spam =
      cfg.use_spam_fit ? fit_spam(data, cfg.fit_readout) : ideal_spam();
  const auto train_idx = data.indices_of(sme::Split::Train);
  const auto val_idx = data.indices_of(sme::Split::Validation);
  if (train_idx.empty() || val_idx.empty())
    throw InvalidArgument("training needs non-empty train and validation splits");

  double omega0 = cfg.init_omega;
  double gamma0 = cfg.init_gamma;
  if (omega0 <= 0.0 || gamma0 <= 0.0) {
    const RateEstimate est = estimate_rates(data);
    if (omega0 <= 0.0) omega0 = est.omega;
    if (gamma0 <= 0.0) gamma0 = est.gamma;
  }

  TrainReport rep;
  rep.kind = kind;
  rep.objective = "mse";
  rep.seed = cfg.seed;
  for (int k = 0; k < cfg.ensemble; ++k) {
    const std::uint64_t mseed = derive_seed(
        derive_seed(cfg.seed, seed_tag::kInit), static_cast<std::uint64_t>(k));
    const ParamPack init = random_init(kind, cfg, omega0, gamma0, mseed);
    MemberResult mr = with_width(kind, [&](auto wc) {
      constexpr int W = decltype(wc)::value;
      auto grad_fn = [&](const ParamPack& p, std::span<const std::size_t> b) {
        return mse_value_grad<W>(kind, p.u, spam, data, targets, b, pool);
      };
      auto eval_fn = [&](const ParamPack& p) {
        return mse_eval(materialize(p), spam, data, targets, val_idx, pool);
      };
      return run_member(init, cfg, train_idx, mseed, grad_fn, eval_fn);
    });
    rep.members.push_back(std::move(mr));
  }
  rep.best_member = best_member_index(rep.members);
  rep.wallclock_s = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
  return rep;
}

SelectionReport model_select(const std::vector<TrainReport>& nested,
                             const sme::Dataset& data, const SpamModel& spam,
                             par::Pool& pool) {
  if (nested.empty()) throw InvalidArgument("no models to select from");
  auto idx = data.indices_of(sme::Split::Test);
  if (idx.empty()) {
    idx.resize(data.shots.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  }

  SelectionReport rep;
  rep.n_test = idx.size();
  for (const auto& r : nested) {
    const ParamPack& p = r.best_pack();
    rep.names.emplace_back(pack_name(p.kind));
    rep.n_params.push_back(static_cast<int>(p.u.size()));
    rep.test_ce.push_back(dataset_ce(materialize(p), spam, data, idx, pool));
  }
  for (std::size_t i = 1; i < nested.size(); ++i) {
    if (rep.n_params[i] < rep.n_params[i - 1])
      throw InvalidArgument("models must be ordered by parameter count");
    ModelComparison c;
    c.smaller = rep.names[i - 1];
    c.larger = rep.names[i];
    c.delta_ce = rep.test_ce[i - 1] - rep.test_ce[i];
    c.lr_stat = 2.0 * static_cast<double>(rep.n_test) * c.delta_ce;
    c.dof = rep.n_params[i] - rep.n_params[i - 1];
    rep.comparisons.push_back(std::move(c));
  }
  return rep;
}

namespace {

/// Model curves for the rate fit: H = (omega/2) sx, L = sqrt(gamma/2) sz,
/// parameterized by q = (log omega, log gamma) for positivity.
template <class T>
sme::ModelT<T> rate_model(const T& q_omega, const T& q_gamma) {
  sme::ModelT<T> m;
  m.h = scaled(sigma_x<T>(), exp(q_omega) * 0.5);
  m.l = scaled(sigma_z<T>(), sqrt(exp(q_gamma) * 0.5));
  m.eta = T(0.0);
  return m;
}

struct PrepTargets {
  std::size_t max_step = 0;
  std::vector<std::tuple<std::size_t, Axis, double, double>> entries;
};

double rate_fit_sse(const std::map<int, PrepTargets>& by_prep, double grid_dt,
                    int substeps, double omega, double gamma) {
  const auto m = rate_model<double>(std::log(omega), std::log(gamma));
  double sse = 0.0;
  for (const auto& [prep, pt] : by_prep) {
    const auto series = sme::integrate_me_t<double>(
        promote3<double>(prep_bloch(prep)), m,
        static_cast<double>(pt.max_step) * grid_dt, grid_dt, substeps);
    for (const auto& [step, comp, value, weight] : pt.entries) {
      const double r = axis_component(series[step], comp) - value;
      sse += weight * r * r;
    }
  }
  return sse;
}

}  // namespace

RateEstimate fit_rates_to_means(std::span<const MeanTarget> targets,
                                double grid_dt, int substeps,
                                double omega_init, double gamma_init) {
  if (targets.empty()) throw InvalidArgument("rate fit needs targets");
  if (grid_dt <= 0 || substeps < 1)
    throw InvalidArgument("rate fit needs grid_dt > 0 and substeps >= 1");

  std::map<int, PrepTargets> by_prep;
  std::size_t n_dynamic = 0;
  for (const auto& t : targets) {
    const auto step = static_cast<std::size_t>(std::llround(t.t / grid_dt));
    if (std::abs(step * grid_dt - t.t) > 1e-6 * std::max(1.0, t.t))
      throw InvalidArgument("target times must be multiples of grid_dt");
    auto& pt = by_prep[t.prep];
    pt.max_step = std::max(pt.max_step, step);
    pt.entries.emplace_back(step, t.comp, t.value, t.weight);
    if (step > 0) ++n_dynamic;
  }
  if (n_dynamic == 0)
    throw FitSingular("rates are unidentifiable from zero-duration targets");

  double omega = omega_init;
  double gamma = gamma_init;
  if (omega <= 0.0 || gamma <= 0.0) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 18; ++i) {
      const double om = 0.05 * std::pow(30.0 / 0.05, i / 17.0);
      for (int j = 0; j < 18; ++j) {
        const double ga = 0.02 * std::pow(20.0 / 0.02, j / 17.0);
        const double sse = rate_fit_sse(by_prep, grid_dt, substeps, om, ga);
        if (sse < best) {
          best = sse;
          omega = om;
          gamma = ga;
        }
      }
    }
  }

  using D2 = ad::Dual<2>;
  double q[2] = {std::log(omega), std::log(gamma)};
  double lambda = 1e-3;
  double sse = rate_fit_sse(by_prep, grid_dt, substeps, std::exp(q[0]),
                            std::exp(q[1]));
  double jtj[3] = {0, 0, 0};  // (00, 01, 11)

  for (int iter = 0; iter < 60; ++iter) {
    const auto m = rate_model<D2>(D2::seeded(q[0], 0), D2::seeded(q[1], 1));
    double jtr[2] = {0, 0};
    jtj[0] = jtj[1] = jtj[2] = 0;
    double cur_sse = 0.0;
    for (const auto& [prep, pt] : by_prep) {
      const auto series = sme::integrate_me_t<D2>(
          promote3<D2>(prep_bloch(prep)), m,
          static_cast<double>(pt.max_step) * grid_dt, grid_dt, substeps);
      for (const auto& [step, comp, value, weight] : pt.entries) {
        const D2 r = axis_component(series[step], comp) - value;
        const double w = weight;
        cur_sse += w * r.v * r.v;
        jtr[0] += w * r.v * r.d[0];
        jtr[1] += w * r.v * r.d[1];
        jtj[0] += w * r.d[0] * r.d[0];
        jtj[1] += w * r.d[0] * r.d[1];
        jtj[2] += w * r.d[1] * r.d[1];
      }
    }
    sse = cur_sse;
    const double scale = std::max(jtj[0], jtj[2]);
    if (!(scale > 0) || jtj[0] * jtj[2] - jtj[1] * jtj[1] <= 1e-14 * scale * scale)
      throw FitSingular("rate-fit normal matrix is rank deficient");

    bool stepped = false;
    for (int tries = 0; tries < 12 && !stepped; ++tries) {
      const double a = jtj[0] * (1.0 + lambda);
      const double c = jtj[2] * (1.0 + lambda);
      const double det = a * c - jtj[1] * jtj[1];
      const double dq0 = (-jtr[0] * c + jtr[1] * jtj[1]) / det;
      const double dq1 = (-jtr[1] * a + jtr[0] * jtj[1]) / det;
      const double nsse = rate_fit_sse(by_prep, grid_dt, substeps,
                                       std::exp(q[0] + dq0),
                                       std::exp(q[1] + dq1));
      if (nsse <= sse) {
        q[0] += dq0;
        q[1] += dq1;
        sse = nsse;
        lambda = std::max(lambda / 3.0, 1e-12);
        stepped = true;
        if (std::abs(dq0) + std::abs(dq1) < 1e-12) iter = 60;
      } else {
        lambda *= 10.0;
      }
    }
    if (!stepped) break;
  }

  RateEstimate est;
  est.omega = std::exp(q[0]);
  est.gamma = std::exp(q[1]);
  est.sse = sse;
  const double dof = std::max<double>(1.0, static_cast<double>(targets.size()) - 2.0);
  const double sigma2 = sse / dof;
  const double det = jtj[0] * jtj[2] - jtj[1] * jtj[1];
  if (det > 0) {
    est.omega_err = est.omega * std::sqrt(std::max(0.0, sigma2 * jtj[2] / det));
    est.gamma_err = est.gamma * std::sqrt(std::max(0.0, sigma2 * jtj[0] / det));
  }
  return est;
}

RateEstimate estimate_rates(const sme::Dataset& data) {
  std::map<std::tuple<int, int, std::size_t>, std::pair<double, long>> cells;
  for (std::size_t i = 0; i < data.shots.size(); ++i) {
    if (data.split[i] != sme::Split::Train) continue;
    const auto& s = data.shots[i];
    auto& c = cells[{s.prep, static_cast<int>(s.axis), s.record.steps()}];
    c.first += s.outcome;
    c.second += 1;
  }
  if (cells.empty()) throw InvalidArgument("no training shots to estimate from");
  std::vector<MeanTarget> targets;
  targets.reserve(cells.size());
  for (const auto& [key, agg] : cells) {
    MeanTarget t;
    t.prep = static_cast<std::uint8_t>(std::get<0>(key));
    t.comp = static_cast<Axis>(std::get<1>(key));
    t.t = static_cast<double>(std::get<2>(key)) * data.meta.dt;
    t.value = agg.first / agg.second;
    t.weight = static_cast<double>(agg.second);
    targets.push_back(t);
  }
  const int substeps =
      std::max(1, static_cast<int>(std::llround(data.meta.dt / 0.004)));
  return fit_rates_to_means(targets, data.meta.dt, substeps);
}

}  // namespace qtraj::sde
