#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "qtraj/eval.hpp"
#include "qtraj/rnn.hpp"
#include "qtraj/sdelearn.hpp"
#include "qtraj/sme.hpp"

// Persistence layer.  A dataset directory holds
//   meta.json    dataset parameters, format version, split rule
//   records.bin  little-endian shot blocks
//                [prep u8][axis u8][outcome i8][n_steps u32]
//                [n_steps x (f32 dM_I, f32 dM_Q)]
//   truth.bin    optional, per shot [n_steps+1 x (f32 x, f32 y, f32 z)]
// Both binary files carry an 8-byte header (magic + u32 version + u64
// count prefix inside the payload) and a trailing CRC32 footer over
// everything before it.  Values are f32 on disk and f64 in memory, so a
// load/save cycle of an existing file is byte-identical.
namespace qtraj::io {

inline constexpr const char* kFormatVersion = "1.0.0";

void save_dataset(const sme::Dataset& d, const std::filesystem::path& dir);
sme::Dataset load_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// JSON artifacts (schema-versioned; loaders reject unknown majors)
// ---------------------------------------------------------------------------

/// include_timing=false keeps the text a pure function of the numerical
/// results, which the worker-count invariance contract compares.
std::string to_json(const sde::TrainReport& rep, bool include_timing = true);
sde::TrainReport train_report_from_json(const std::string& text);

std::string to_json(const rnn::GruModel& m);
rnn::GruModel gru_from_json(const std::string& text);

std::string to_json(const rnn::RnnReport& rep, bool include_timing = true);

std::string to_json(const sde::SpamModel& spam);
sde::SpamModel spam_from_json(const std::string& text);

std::string to_json(const eval::SelfConsistencyReport& rep);
std::string to_json(const eval::CoarseStudyReport& rep);
std::string to_json(const eval::BinFitResult& rep);
std::string to_json(const sde::SelectionReport& rep);

/// CSV rendering of a JSON report: one row per epoch (training reports),
/// per coarse-graining level, or per calibration bin.
std::string report_csv(const std::string& json_text);

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  // model
  sde::PackKind pack = sde::PackKind::Constrained;
  std::optional<sme::PhysicalModel> truth;
  // data
  std::string data_path;
  sme::DatasetMeta meta;
  // train (shared optimizer settings; `hidden` only concerns the RNN)
  sde::TrainConfig train;
  int hidden = 16;
  int rnn_epochs = 100;
  // loss
  rnn::LossWeights loss;
  // study
  std::vector<int> k_list{1, 2, 4, 10, 20, 40, 100, 200};
  double delta = 0.04;
};

/// Parses and validates a config document; unknown keys are rejected.
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Small file helpers
// ---------------------------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path,
                     const std::string& content);

}  // namespace qtraj::io
