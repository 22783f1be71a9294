#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "json.hpp"
#include "qtraj/dataio.hpp"
#include "qtraj/eval.hpp"
#include "qtraj/parallel.hpp"
#include "qtraj/rnn.hpp"
#include "qtraj/sdelearn.hpp"
#include "qtraj/sme.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qtraj;

namespace {

struct Args {
  std::string config;
  std::string out;
  std::string in;
  std::string rnn_model;
  std::string sde_report;
  int threads = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, Args& a, bool needs_config = true) {
  auto* copt = cmd->add_option("--config", a.config, "run configuration JSON");
  if (needs_config) copt->required();
  cmd->add_option("--out", a.out, "output directory")->required();
  cmd->add_option("--threads", a.threads,
                  "worker count (0 = hardware); results do not depend on it");
  cmd->add_option("--seed", a.seed, "override the command's primary seed")
      ->each([&a](const std::string&) { a.seed_set = true; });
}

json params_json(const sde::ParamPack& p) {
  json out;
  for (const auto& [name, value] : sde::named_params(p)) out[name] = value;
  return out;
}

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

void write_run_info(const fs::path& dir, const std::string& command,
                    double wallclock_s, int threads) {
  json info;
  info["format_version"] = io::kFormatVersion;
  info["kind"] = "run_info";
  info["command"] = command;
  info["wallclock_s"] = wallclock_s;
  info["threads"] = threads;
  io::write_text_file(dir / "run_info.json", info.dump(2) + "\n");
}

io::RunConfig load_cfg(const Args& a) {
  if (a.config.empty()) throw ConfigError("a --config file is required");
  return io::load_config(a.config);
}

sme::Dataset load_data(const io::RunConfig& cfg) {
  if (cfg.data_path.empty())
    throw ConfigError("config data.path must name a dataset directory");
  return io::load_dataset(cfg.data_path);
}

rnn::GruModel load_rnn(const std::string& path) {
  if (path.empty()) throw ConfigError("--rnn must name a gru model JSON file");
  return io::gru_from_json(io::read_text_file(path));
}

std::vector<std::size_t> eval_indices(const sme::Dataset& d) {
  auto idx = d.indices_of(sme::Split::Test);
  if (idx.empty()) {
    idx.resize(d.shots.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  }
  return idx;
}

int run_generate(const Args& a) {
  auto cfg = load_cfg(a);
  if (a.seed_set) cfg.meta.master_seed = a.seed;
  if (!cfg.meta.generator)
    throw ConfigError("generate needs model.truth as the generator");
  par::Pool pool(a.threads);
  const auto t0 = std::chrono::steady_clock::now();
  sme::StepStats stats;
  const sme::Dataset d = sme::generate_dataset(cfg.meta, pool, &stats);
  io::save_dataset(d, a.out);
  write_run_info(a.out, "generate",
                 std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - t0)
                     .count(),
                 pool.size());
  emit({{"status", "ok"},
        {"command", "generate"},
        {"n_shots", d.shots.size()},
        {"clipped_steps", stats.clips},
        {"out", a.out}});
  return 0;
}

int run_train_sde(const Args& a) {
  auto cfg = load_cfg(a);
  if (a.seed_set) cfg.train.seed = a.seed;
  const auto data = load_data(cfg);
  par::Pool pool(a.threads);
  const auto rep = sde::train_sde(data, cfg.pack, cfg.train, pool);
  fs::create_directories(a.out);
  io::write_text_file(fs::path(a.out) / "train_report.json",
                      io::to_json(rep, false));
  write_run_info(a.out, "train-sde", rep.wallclock_s, pool.size());
  emit({{"status", "ok"},
        {"command", "train-sde"},
        {"pack", sde::pack_name(rep.kind)},
        {"best_val_ce", rep.best_metric()},
        {"best_params", params_json(rep.best_pack())},
        {"out", a.out}});
  return 0;
}

rnn::RnnTrainConfig rnn_config(const io::RunConfig& cfg) {
  rnn::RnnTrainConfig rc;
  rc.hidden = cfg.hidden;
  rc.lr = cfg.train.lr;
  rc.batch = cfg.train.batch;
  rc.epochs = cfg.rnn_epochs;
  rc.patience = cfg.train.patience;
  rc.seed = cfg.train.seed;
  rc.use_spam_fit = cfg.train.use_spam_fit;
  rc.fit_readout = cfg.train.fit_readout;
  return rc;
}

int run_train_rnn(const Args& a) {
  auto cfg = load_cfg(a);
  if (a.seed_set) cfg.train.seed = a.seed;
  const auto data = load_data(cfg);
  par::Pool pool(a.threads);
  const auto [model, rep] = rnn::train_rnn(data, cfg.loss, rnn_config(cfg), pool);
  fs::create_directories(a.out);
  io::write_text_file(fs::path(a.out) / "gru.json", io::to_json(model));
  io::write_text_file(fs::path(a.out) / "rnn_report.json",
                      io::to_json(rep, false));
  write_run_info(a.out, "train-rnn", rep.wallclock_s, pool.size());
  emit({{"status", "ok"},
        {"command", "train-rnn"},
        {"hidden", model.hidden},
        {"best_epoch", rep.best_epoch},
        {"best_val_ce", rep.best_val_ce},
        {"init_val_ce", rep.init_val_ce},
        {"out", a.out}});
  return 0;
}

int run_distill(const Args& a) {
  auto cfg = load_cfg(a);
  if (a.seed_set) cfg.train.seed = a.seed;
  const auto data = load_data(cfg);
  const auto model = load_rnn(a.rnn_model);
  par::Pool pool(a.threads);
  const auto targets = rnn::trajectories(model, data, pool);
  const auto rep = sde::distill(targets, data, cfg.pack, cfg.train, pool);
  fs::create_directories(a.out);
  io::write_text_file(fs::path(a.out) / "distill_report.json",
                      io::to_json(rep, false));
  write_run_info(a.out, "distill", rep.wallclock_s, pool.size());
  emit({{"status", "ok"},
        {"command", "distill"},
        {"pack", sde::pack_name(rep.kind)},
        {"final_mse", rep.best_metric()},
        {"best_params", params_json(rep.best_pack())},
        {"out", a.out}});
  return 0;
}

int run_bin_fit(const Args& a) {
  auto cfg = load_cfg(a);
  const auto data = load_data(cfg);
  const auto model = load_rnn(a.rnn_model);
  par::Pool pool(a.threads);
  const auto t0 = std::chrono::steady_clock::now();
  const auto trajs = rnn::trajectories(model, data, pool);
  std::vector<std::uint8_t> preps(data.shots.size());
  for (std::size_t i = 0; i < preps.size(); ++i) preps[i] = data.shots[i].prep;
  const auto fit =
      eval::bin_fit(trajs, preps, data.meta.dt, cfg.delta);
  fs::create_directories(a.out);
  const std::string text = io::to_json(fit);
  io::write_text_file(fs::path(a.out) / "bin_fit.json", text);
  write_run_info(a.out, "bin-fit",
                 std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - t0)
                     .count(),
                 pool.size());
  emit(json::parse(text));
  return 0;
}

int run_spam_tomo(const Args& a) {
  auto cfg = load_cfg(a);
  const auto data = load_data(cfg);
  const auto spam = sde::fit_spam(data, cfg.train.fit_readout);
  fs::create_directories(a.out);
  io::write_text_file(fs::path(a.out) / "spam.json", io::to_json(spam));
  json r0 = json::array();
  for (const auto& r : spam.r0) r0.push_back({r.x, r.y, r.z});
  emit({{"status", "ok"},
        {"command", "spam-tomo"},
        {"r0", r0},
        {"readout_visibility", spam.readout_visibility},
        {"out", a.out}});
  return 0;
}

int run_evaluate(const Args& a) {
  auto cfg = load_cfg(a);
  const auto data = load_data(cfg);
  par::Pool pool(a.threads);
  const auto idx = eval_indices(data);

  std::optional<sme::PhysicalModel> truth = data.meta.generator;
  if (!truth) truth = cfg.truth;
  if (!truth)
    throw ConfigError(
        "evaluate needs generator metadata or model.truth for the baseline");
  const sde::SpamModel spam = cfg.train.use_spam_fit
                                  ? sde::fit_spam(data, cfg.train.fit_readout)
                                  : sde::ideal_spam();

  const bool have_truth_series =
      !data.shots.empty() && !data.shots.front().truth.empty();

  json out;
  out["format_version"] = io::kFormatVersion;
  out["kind"] = "evaluation";
  out["n_eval"] = idx.size();
  out["me_baseline_ce"] = sde::me_baseline_ce(*truth, spam, data, idx);
  out["true_model_ce"] = sde::dataset_ce(*truth, spam, data, idx, pool);

  if (!a.sde_report.empty()) {
    const auto rep =
        io::train_report_from_json(io::read_text_file(a.sde_report));
    const auto model = sde::materialize(rep.best_pack());
    out["sde_ce"] = sde::dataset_ce(model, spam, data, idx, pool);
    out["sde_params"] = params_json(rep.best_pack());
    if (have_truth_series) {
      std::vector<std::vector<RawBloch>> pred(idx.size());
      std::vector<std::vector<BlochVector>> truth_series(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto series =
            sde::infer_trajectory(model, spam, data.shots[idx[k]]);
        pred[k].reserve(series.size());
        for (const auto& r : series) pred[k].push_back({r.x, r.y, r.z});
        truth_series[k] = data.shots[idx[k]].truth;
      }
      out["sde_trajectory_mse"] = eval::mse_vs_truth(pred, truth_series).total;
    }
  }

  if (!a.rnn_model.empty()) {
    const auto model = load_rnn(a.rnn_model);
    const auto pi = rnn::outcome_probs(model, data, idx, spam, pool);
    std::vector<std::int8_t> y(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k)
      y[k] = data.shots[idx[k]].outcome;
    out["rnn_ce"] = eval::ce_metric(pi, y);
    if (have_truth_series) {
      const auto fw = rnn::forward_all(model, data, idx, pool);
      std::vector<std::vector<RawBloch>> pred(idx.size());
      std::vector<std::vector<BlochVector>> truth_series(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        pred[k] = fw[k].r;
        truth_series[k] = data.shots[idx[k]].truth;
      }
      out["rnn_trajectory_mse"] = eval::mse_vs_truth(pred, truth_series).total;
    }
  }

  fs::create_directories(a.out);
  io::write_text_file(fs::path(a.out) / "evaluate.json", out.dump(2) + "\n");
  json summary = out;
  summary["status"] = "ok";
  summary["command"] = "evaluate";
  summary["out"] = a.out;
  emit(summary);
  return 0;
}

int run_coarse_study(const Args& a) {
  auto cfg = load_cfg(a);
  if (a.seed_set) cfg.train.seed = a.seed;
  const auto fine = load_data(cfg);
  if (!fine.meta.generator)
    throw ConfigError("coarse-study needs the generator in the dataset meta");
  par::Pool pool(a.threads);
  const auto t0 = std::chrono::steady_clock::now();
  eval::CoarseStudyConfig scfg;
  scfg.k_list = cfg.k_list;
  scfg.kind = cfg.pack;
  scfg.train = cfg.train;
  const auto rep = eval::coarse_study(fine, *fine.meta.generator, scfg, pool);
  fs::create_directories(a.out);
  const std::string text = io::to_json(rep);
  io::write_text_file(fs::path(a.out) / "coarse_study.json", text);
  io::write_text_file(fs::path(a.out) / "coarse_study.csv",
                      io::report_csv(text));
  write_run_info(a.out, "coarse-study",
                 std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - t0)
                     .count(),
                 pool.size());
  json summary = json::parse(text);
  summary["status"] = "ok";
  summary["command"] = "coarse-study";
  summary["out"] = a.out;
  emit(summary);
  return 0;
}

int run_report(const Args& a) {
  if (a.in.empty()) throw ConfigError("report needs --in");
  const std::string text = io::read_text_file(a.in);
  const std::string csv = io::report_csv(text);
  fs::create_directories(a.out);
  const fs::path out_file =
      fs::path(a.out) / (fs::path(a.in).stem().string() + ".csv");
  io::write_text_file(out_file, csv);
  const auto rows = std::count(csv.begin(), csv.end(), '\n') - 1;
  emit({{"status", "ok"},
        {"command", "report"},
        {"rows", rows},
        {"out", out_file.string()}});
  return 0;
}

const char* error_type(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const TruncatedStream*>(&e)) return "truncated_stream";
  if (dynamic_cast<const ChecksumMismatch*>(&e)) return "checksum_mismatch";
  if (dynamic_cast<const VersionMismatch*>(&e)) return "version_mismatch";
  if (dynamic_cast<const MissingCell*>(&e)) return "missing_cell";
  if (dynamic_cast<const FitSingular*>(&e)) return "fit_singular";
  if (dynamic_cast<const TrainingDiverged*>(&e)) return "training_diverged";
  if (dynamic_cast<const DegenerateState*>(&e)) return "degenerate_state";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  if (dynamic_cast<const InvalidState*>(&e)) return "invalid_state";
  if (dynamic_cast<const InvalidArgument*>(&e)) return "invalid_argument";
  if (dynamic_cast<const Error*>(&e)) return "error";
  return "internal";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monitored-qubit trajectory simulation and characterization"};
  app.require_subcommand(1);

  Args args;
  auto* generate = app.add_subcommand(
      "generate", "synthesize a weak-measurement dataset");
  add_common(generate, args);
  auto* train_sde = app.add_subcommand(
      "train-sde", "fit model parameters by outcome cross entropy");
  add_common(train_sde, args);
  auto* train_rnn = app.add_subcommand(
      "train-rnn", "train the recurrent network on the physics losses");
  add_common(train_rnn, args);
  auto* distill = app.add_subcommand(
      "distill", "fit model parameters to recurrent-network trajectories");
  add_common(distill, args);
  distill->add_option("--rnn", args.rnn_model, "gru model JSON")->required();
  auto* bin_fit = app.add_subcommand(
      "bin-fit", "moment-fit model parameters from binned trajectories");
  add_common(bin_fit, args);
  bin_fit->add_option("--rnn", args.rnn_model, "gru model JSON")->required();
  auto* spam_tomo = app.add_subcommand(
      "spam-tomo", "initial-state tomography from zero-duration shots");
  add_common(spam_tomo, args);
  auto* evaluate = app.add_subcommand(
      "evaluate", "cross entropies of baselines and trained models");
  add_common(evaluate, args);
  evaluate->add_option("--sde", args.sde_report, "train-sde report JSON");
  evaluate->add_option("--rnn", args.rnn_model, "gru model JSON");
  auto* coarse = app.add_subcommand(
      "coarse-study", "parameter accuracy versus record coarse-graining");
  add_common(coarse, args);
  auto* report = app.add_subcommand("report", "render a report JSON as CSV");
  report->add_option("--in", args.in, "report JSON file")->required();
  report->add_option("--out", args.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    emit({{"status", "error"},
          {"error", {{"type", "usage"}, {"message", e.what()}}}});
    return 1;
  }

  try {
    if (generate->parsed()) return run_generate(args);
    if (train_sde->parsed()) return run_train_sde(args);
    if (train_rnn->parsed()) return run_train_rnn(args);
    if (distill->parsed()) return run_distill(args);
    if (bin_fit->parsed()) return run_bin_fit(args);
    if (spam_tomo->parsed()) return run_spam_tomo(args);
    if (evaluate->parsed()) return run_evaluate(args);
    if (coarse->parsed()) return run_coarse_study(args);
    if (report->parsed()) return run_report(args);
    emit({{"status", "error"},
          {"error", {{"type", "usage"}, {"message", "no command"}}}});
    return 1;
  } catch (const std::exception& e) {
    emit({{"status", "error"},
          {"error", {{"type", error_type(e)}, {"message", e.what()}}}});
    return 1;
  }
}
