#include "qtraj/dataio.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"

namespace qtraj::io {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "on-disk format is little-endian");

constexpr char kRecordsMagic[4] = {'Q', 'T', 'R', 'D'};
constexpr char kTruthMagic[4] = {'Q', 'T', 'R', 'T'};
constexpr std::uint32_t kBinVersion = 1;
constexpr const char* kSplitRule = "splitmix-hash-v1";

struct Writer {
  std::string buf;

  template <class T>
  void put(T v) {
    char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    buf.append(tmp, sizeof(T));
  }
  void put_magic(const char m[4]) { buf.append(m, 4); }
};

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  std::size_t limit = 0;

  template <class T>
  T get(const std::string& context) {
    if (pos + sizeof(T) > limit)
      throw TruncatedStream("stream ends inside " + context);
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void expect_magic(const char m[4], const std::string& what) {
    if (pos + 4 > limit || std::memcmp(buf.data() + pos, m, 4) != 0)
      throw VersionMismatch("file is not a " + what);
    pos += 4;
  }
};

std::uint32_t crc_of(const std::string& payload) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));
}

void write_with_crc(const std::filesystem::path& path, Writer&& w) {
  const std::uint32_t crc = crc_of(w.buf);
  w.put(crc);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw Error("write failed: " + path.string());
}

std::string read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return data;
}

int parse_major(const std::string& version) {
  return std::atoi(version.c_str());
}

void check_format_version(const json& j, const std::string& what) {
  if (!j.contains("format_version"))
    throw VersionMismatch(what + " lacks a format_version");
  const auto v = j.at("format_version").get<std::string>();
  if (parse_major(v) != parse_major(kFormatVersion))
    throw VersionMismatch(what + " has unsupported major version " + v);
}

std::string fmt(double v) {
  char tmp[40];
  const auto res = std::to_chars(tmp, tmp + sizeof(tmp), v);
  return std::string(tmp, res.ptr);
}

json model_to_json(const sme::PhysicalModel& m) {
  auto mat = [](const Complex2x2& x) {
    return json{{"re", {x.m00.re, x.m01.re, x.m10.re, x.m11.re}},
                {"im", {x.m00.im, x.m01.im, x.m10.im, x.m11.im}}};
  };
  return json{{"h", mat(m.h)},
              {"l", mat(m.l)},
              {"eta", m.eta},
              {"gamma_up", m.gamma_up},
              {"gamma_down", m.gamma_down},
              {"with_relaxation", m.with_relaxation}};
}

sme::PhysicalModel model_from_json(const json& j) {
  auto mat = [](const json& x) {
    const auto re = x.at("re").get<std::vector<double>>();
    const auto im = x.at("im").get<std::vector<double>>();
    if (re.size() != 4 || im.size() != 4)
      throw ConfigError("operator entries must hold 4 values");
    return Complex2x2{{re[0], im[0]}, {re[1], im[1]}, {re[2], im[2]},
                      {re[3], im[3]}};
  };
  sme::PhysicalModel m;
  m.h = mat(j.at("h"));
  m.l = mat(j.at("l"));
  m.eta = j.at("eta").get<double>();
  m.gamma_up = j.at("gamma_up").get<double>();
  m.gamma_down = j.at("gamma_down").get<double>();
  m.with_relaxation = j.at("with_relaxation").get<bool>();
  return m;
}

const char* pack_to_string(sde::PackKind k) { return sde::pack_name(k); }

sde::PackKind pack_from_string(const std::string& s) {
  if (s == "constrained") return sde::PackKind::Constrained;
  if (s == "operator") return sde::PackKind::Operator;
  if (s == "extended") return sde::PackKind::Extended;
  throw ConfigError("unknown pack kind '" + s + "'");
}

void check_keys(const json& j, const std::string& section,
                const std::set<std::string>& allowed) {
  if (!j.is_object())
    throw ConfigError("section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key))
      throw ConfigError("unknown key '" + key + "' in section '" + section +
                        "'");
  }
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  return read_binary_file(path);
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw Error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

void save_dataset(const sme::Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  bool has_truth = !d.shots.empty();
  bool any_truth = false;
  for (const auto& s : d.shots) {
    if (s.truth.empty())
      has_truth = false;
    else
      any_truth = true;
  }
  if (any_truth && !has_truth && !d.shots.empty())
    throw InvalidArgument("dataset mixes shots with and without truth");

  json meta;
  meta["format_version"] = kFormatVersion;
  meta["kind"] = "dataset";
  meta["dt"] = d.meta.dt;
  meta["dt_fine"] = d.meta.dt_fine;
  meta["t_grid"] = d.meta.t_grid;
  meta["shots_per_cell"] = d.meta.shots_per_cell;
  meta["master_seed"] = d.meta.master_seed;
  meta["split_fractions"] = d.meta.split_fractions;
  meta["split_rule"] = kSplitRule;
  meta["chi"] = d.meta.chi;
  meta["kappa"] = d.meta.kappa;
  meta["generator"] =
      d.meta.generator ? model_to_json(*d.meta.generator) : json(nullptr);
  meta["n_shots"] = d.shots.size();
  meta["has_truth"] = has_truth;
  write_text_file(dir / "meta.json", meta.dump(2) + "\n");

  Writer rec;
  rec.put_magic(kRecordsMagic);
  rec.put<std::uint32_t>(kBinVersion);
  rec.put<std::uint64_t>(d.shots.size());
  for (const auto& s : d.shots) {
    rec.put<std::uint8_t>(s.prep);
    rec.put<std::uint8_t>(static_cast<std::uint8_t>(s.axis));
    rec.put<std::int8_t>(s.outcome);
    rec.put<std::uint32_t>(static_cast<std::uint32_t>(s.record.steps()));
    for (std::size_t t = 0; t < s.record.steps(); ++t) {
      rec.put<float>(static_cast<float>(s.record.dm_i[t]));
      rec.put<float>(static_cast<float>(s.record.dm_q[t]));
    }
  }
  write_with_crc(dir / "records.bin", std::move(rec));

  if (has_truth) {
    Writer tw;
    tw.put_magic(kTruthMagic);
    tw.put<std::uint32_t>(kBinVersion);
    tw.put<std::uint64_t>(d.shots.size());
    for (const auto& s : d.shots) {
      for (const auto& r : s.truth) {
        tw.put<float>(static_cast<float>(r.x));
        tw.put<float>(static_cast<float>(r.y));
        tw.put<float>(static_cast<float>(r.z));
      }
    }
    write_with_crc(dir / "truth.bin", std::move(tw));
  } else {
    std::filesystem::remove(dir / "truth.bin");
  }
}

sme::Dataset load_dataset(const std::filesystem::path& dir) {
  json meta;
  try {
    meta = json::parse(read_text_file(dir / "meta.json"));
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse meta.json: " + std::string(e.what()));
  }
  check_format_version(meta, "dataset meta");
  if (meta.value("kind", "") != std::string("dataset"))
    throw VersionMismatch("meta.json does not describe a dataset");
  if (meta.at("split_rule").get<std::string>() != kSplitRule)
    throw VersionMismatch("unknown split assignment rule");

  sme::Dataset d;
  d.meta.dt = meta.at("dt").get<double>();
  d.meta.dt_fine = meta.at("dt_fine").get<double>();
  d.meta.t_grid = meta.at("t_grid").get<std::vector<double>>();
  d.meta.shots_per_cell = meta.at("shots_per_cell").get<int>();
  d.meta.master_seed = meta.at("master_seed").get<std::uint64_t>();
  const auto fr = meta.at("split_fractions").get<std::vector<double>>();
  if (fr.size() != 3) throw ConfigError("split_fractions must hold 3 values");
  d.meta.split_fractions = {fr[0], fr[1], fr[2]};
  d.meta.chi = meta.at("chi").get<double>();
  d.meta.kappa = meta.at("kappa").get<double>();
  if (!meta.at("generator").is_null())
    d.meta.generator = model_from_json(meta.at("generator"));
  const auto n_shots = meta.at("n_shots").get<std::uint64_t>();
  const bool has_truth = meta.at("has_truth").get<bool>();

  std::set<std::uint64_t> valid_steps;
  for (const double t : d.meta.t_grid) {
    valid_steps.insert(
        static_cast<std::uint64_t>(std::llround(t / d.meta.dt)));
  }

  // records: structural parse first (truncation names the failing shot),
  // then the checksum, then semantic validation.
  const std::string rbuf = read_binary_file(dir / "records.bin");
  if (rbuf.size() < 20) throw TruncatedStream("records.bin is too short");
  Reader rr{rbuf, 0, rbuf.size() - 4};
  rr.expect_magic(kRecordsMagic, "record stream");
  if (rr.get<std::uint32_t>("header") != kBinVersion)
    throw VersionMismatch("unsupported record stream version");
  const auto count = rr.get<std::uint64_t>("header");
  if (count != n_shots)
    throw ConfigError("record stream count does not match meta");

  d.shots.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string ctx = "shot " + std::to_string(i);
    auto& s = d.shots[i];
    s.prep = rr.get<std::uint8_t>(ctx);
    const auto axis = rr.get<std::uint8_t>(ctx);
    s.axis = static_cast<Axis>(axis);
    s.outcome = rr.get<std::int8_t>(ctx);
    const auto n = rr.get<std::uint32_t>(ctx);
    s.record.dt = d.meta.dt;
    s.record.dm_i.resize(n);
    s.record.dm_q.resize(n);
    for (std::uint32_t t = 0; t < n; ++t) {
      s.record.dm_i[t] = rr.get<float>(ctx);
      s.record.dm_q[t] = rr.get<float>(ctx);
    }
  }
  if (rr.pos != rr.limit)
    throw ConfigError("trailing bytes in records.bin");
  {
    const std::uint32_t stored = [&] {
      std::uint32_t v;
      std::memcpy(&v, rbuf.data() + rbuf.size() - 4, 4);
      return v;
    }();
    if (stored != crc_of(rbuf.substr(0, rbuf.size() - 4)))
      throw ChecksumMismatch("records.bin checksum failure");
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string ctx = "shot " + std::to_string(i);
    const auto& s = d.shots[i];
    if (s.prep >= kNumPreps) throw ConfigError("invalid preparation in " + ctx);
    if (static_cast<int>(s.axis) > 2) throw ConfigError("invalid axis in " + ctx);
    if (s.outcome != 1 && s.outcome != -1)
      throw ConfigError("invalid outcome in " + ctx);
    if (!valid_steps.empty() && !valid_steps.count(s.record.steps()))
      throw ConfigError("step count inconsistent with the time grid in " + ctx);
  }

  // truth
  if (has_truth) {
    const std::string tbuf = read_binary_file(dir / "truth.bin");
    if (tbuf.size() < 20) throw TruncatedStream("truth.bin is too short");
    Reader tr{tbuf, 0, tbuf.size() - 4};
    tr.expect_magic(kTruthMagic, "truth stream");
    if (tr.get<std::uint32_t>("header") != kBinVersion)
      throw VersionMismatch("unsupported truth stream version");
    if (tr.get<std::uint64_t>("header") != count)
      throw ConfigError("truth stream count does not match meta");
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::string ctx = "truth of shot " + std::to_string(i);
      auto& s = d.shots[i];
      s.truth.resize(s.record.steps() + 1);
      for (auto& r : s.truth) {
        r.x = tr.get<float>(ctx);
        r.y = tr.get<float>(ctx);
        r.z = tr.get<float>(ctx);
      }
    }
    if (tr.pos != tr.limit) throw ConfigError("trailing bytes in truth.bin");
    const std::uint32_t stored = [&] {
      std::uint32_t v;
      std::memcpy(&v, tbuf.data() + tbuf.size() - 4, 4);
      return v;
    }();
    if (stored != crc_of(tbuf.substr(0, tbuf.size() - 4)))
      throw ChecksumMismatch("truth.bin checksum failure");
  }

  // splits re-derived from the documented hash rule
  d.split.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const double u = stream_for(d.meta.master_seed, seed_tag::kSplit, i).uniform();
    d.split[i] = u < d.meta.split_fractions[0]
                     ? sme::Split::Train
                     : (u < d.meta.split_fractions[0] + d.meta.split_fractions[1]
                            ? sme::Split::Validation
                            : sme::Split::Test);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Reports and models
// ---------------------------------------------------------------------------

std::string to_json(const sde::TrainReport& rep, bool include_timing) {
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "train_report";
  j["pack"] = pack_to_string(rep.kind);
  j["objective"] = rep.objective;
  j["seed"] = rep.seed;
  j["best_member"] = rep.best_member;
  json members = json::array();
  for (const auto& m : rep.members) {
    json mj;
    mj["seed"] = m.seed;
    mj["init_u"] = m.init.u;
    mj["best_u"] = m.best.u;
    mj["init_val"] = m.init_val;
    mj["best_val"] = m.best_val;
    mj["skipped_shots"] = m.skipped_shots;
    json tc = json::array(), vc = json::array();
    for (const auto& e : m.curve) {
      tc.push_back(e.train);
      vc.push_back(e.val);
    }
    mj["train_curve"] = tc;
    mj["val_curve"] = vc;
    members.push_back(std::move(mj));
  }
  j["members"] = std::move(members);
  json params;
  for (const auto& [name, value] : sde::named_params(rep.best_pack()))
    params[name] = value;
  j["best_params"] = std::move(params);
  if (include_timing) j["wallclock_s"] = rep.wallclock_s;
  return j.dump(2) + "\n";
}

sde::TrainReport train_report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse train report: " + std::string(e.what()));
  }
  check_format_version(j, "train report");
  if (j.value("kind", "") != std::string("train_report"))
    throw VersionMismatch("document is not a train report");
  sde::TrainReport rep;
  rep.kind = pack_from_string(j.at("pack").get<std::string>());
  rep.objective = j.at("objective").get<std::string>();
  rep.seed = j.at("seed").get<std::uint64_t>();
  rep.best_member = j.at("best_member").get<int>();
  rep.wallclock_s = j.value("wallclock_s", 0.0);
  for (const auto& mj : j.at("members")) {
    sde::MemberResult m;
    m.seed = mj.at("seed").get<std::uint64_t>();
    m.init.kind = rep.kind;
    m.init.u = mj.at("init_u").get<std::vector<double>>();
    m.best.kind = rep.kind;
    m.best.u = mj.at("best_u").get<std::vector<double>>();
    m.init_val = mj.at("init_val").get<double>();
    m.best_val = mj.at("best_val").get<double>();
    m.skipped_shots = mj.at("skipped_shots").get<long>();
    const auto tc = mj.at("train_curve").get<std::vector<double>>();
    const auto vc = mj.at("val_curve").get<std::vector<double>>();
    if (tc.size() != vc.size())
      throw ConfigError("curve lengths disagree in train report");
    for (std::size_t i = 0; i < tc.size(); ++i)
      m.curve.push_back({tc[i], vc[i]});
    rep.members.push_back(std::move(m));
  }
  if (rep.members.empty() || rep.best_member < 0 ||
      rep.best_member >= static_cast<int>(rep.members.size()))
    throw ConfigError("train report has no valid best member");
  return rep;
}

std::string to_json(const rnn::GruModel& m) {
  const rnn::GruLayout lay = rnn::gru_layout(m.hidden);
  auto slice = [&](std::size_t off, std::size_t len) {
    return std::vector<double>(m.theta.begin() + off,
                               m.theta.begin() + off + len);
  };
  const auto h = static_cast<std::size_t>(m.hidden);
  json w;
  w["we"] = slice(lay.we, h * rnn::GruModel::kPrep);
  w["be"] = slice(lay.be, h);
  w["w_mr"] = slice(lay.w_mr, h * rnn::GruModel::kInput);
  w["w_hr"] = slice(lay.w_hr, h * h);
  w["b_mr"] = slice(lay.b_mr, h);
  w["b_hr"] = slice(lay.b_hr, h);
  w["w_mz"] = slice(lay.w_mz, h * rnn::GruModel::kInput);
  w["w_hz"] = slice(lay.w_hz, h * h);
  w["b_mz"] = slice(lay.b_mz, h);
  w["b_hz"] = slice(lay.b_hz, h);
  w["w_mn"] = slice(lay.w_mn, h * rnn::GruModel::kInput);
  w["w_hn"] = slice(lay.w_hn, h * h);
  w["b_mn"] = slice(lay.b_mn, h);
  w["b_hn"] = slice(lay.b_hn, h);
  w["wd"] = slice(lay.wd, static_cast<std::size_t>(rnn::GruModel::kOut) * h);
  w["bd"] = slice(lay.bd, rnn::GruModel::kOut);

  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "gru_model";
  j["hidden"] = m.hidden;
  j["input"] = rnn::GruModel::kInput;
  j["prep"] = rnn::GruModel::kPrep;
  j["out"] = rnn::GruModel::kOut;
  j["weights"] = std::move(w);
  return j.dump(2) + "\n";
}

rnn::GruModel gru_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse model: " + std::string(e.what()));
  }
  check_format_version(j, "model");
  if (j.value("kind", "") != std::string("gru_model"))
    throw VersionMismatch("document is not a recurrent model");
  if (j.at("input").get<int>() != rnn::GruModel::kInput ||
      j.at("prep").get<int>() != rnn::GruModel::kPrep ||
      j.at("out").get<int>() != rnn::GruModel::kOut)
    throw ConfigError("model head dimensions are unsupported");

  rnn::GruModel m;
  m.hidden = j.at("hidden").get<int>();
  const rnn::GruLayout lay = rnn::gru_layout(m.hidden);
  m.theta.assign(lay.total, 0.0);
  const json& w = j.at("weights");
  auto fill = [&](const char* name, std::size_t off, std::size_t len) {
    const auto v = w.at(name).get<std::vector<double>>();
    if (v.size() != len)
      throw ConfigError(std::string("weight block '") + name +
                        "' has the wrong size");
    std::copy(v.begin(), v.end(), m.theta.begin() + off);
  };
  const auto h = static_cast<std::size_t>(m.hidden);
  fill("we", lay.we, h * rnn::GruModel::kPrep);
  fill("be", lay.be, h);
  fill("w_mr", lay.w_mr, h * rnn::GruModel::kInput);
  fill("w_hr", lay.w_hr, h * h);
  fill("b_mr", lay.b_mr, h);
  fill("b_hr", lay.b_hr, h);
  fill("w_mz", lay.w_mz, h * rnn::GruModel::kInput);
  fill("w_hz", lay.w_hz, h * h);
  fill("b_mz", lay.b_mz, h);
  fill("b_hz", lay.b_hz, h);
  fill("w_mn", lay.w_mn, h * rnn::GruModel::kInput);
  fill("w_hn", lay.w_hn, h * h);
  fill("b_mn", lay.b_mn, h);
  fill("b_hn", lay.b_hn, h);
  fill("wd", lay.wd, static_cast<std::size_t>(rnn::GruModel::kOut) * h);
  fill("bd", lay.bd, rnn::GruModel::kOut);
  return m;
}

std::string to_json(const rnn::RnnReport& rep, bool include_timing) {
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "train_report";
  j["pack"] = "gru";
  j["objective"] = "ce+pi";
  j["seed"] = rep.seed;
  j["best_member"] = 0;
  j["best_epoch"] = rep.best_epoch;
  j["init_val_ce"] = rep.init_val_ce;
  j["best_val_ce"] = rep.best_val_ce;
  j["loss_weights"] = {{"w_posit", rep.weights.posit},
                       {"w_prep", rep.weights.prep},
                       {"w_dm", rep.weights.dm}};
  json members = json::array();
  json mj;
  mj["seed"] = rep.seed;
  json tc = json::array(), vc = json::array(), cc = json::array();
  for (const auto& e : rep.curve) {
    tc.push_back(e.train_total);
    cc.push_back(e.train_ce);
    vc.push_back(e.val_ce);
  }
  mj["train_curve"] = tc;
  mj["train_ce_curve"] = cc;
  mj["val_curve"] = vc;
  mj["best_val"] = rep.best_val_ce;
  members.push_back(std::move(mj));
  j["members"] = std::move(members);
  if (include_timing) j["wallclock_s"] = rep.wallclock_s;
  return j.dump(2) + "\n";
}

std::string to_json(const sde::SpamModel& spam) {
  json r0 = json::array();
  for (const auto& r : spam.r0) r0.push_back({r.x, r.y, r.z});
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "spam_model";
  j["r0"] = std::move(r0);
  j["readout_visibility"] = spam.readout_visibility;
  return j.dump(2) + "\n";
}

sde::SpamModel spam_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse spam model: " + std::string(e.what()));
  }
  check_format_version(j, "spam model");
  if (j.value("kind", "") != std::string("spam_model"))
    throw VersionMismatch("document is not a spam model");
  sde::SpamModel s;
  const auto& r0 = j.at("r0");
  if (r0.size() != kNumPreps) throw ConfigError("spam model needs 6 states");
  for (int p = 0; p < kNumPreps; ++p) {
    s.r0[p] = {r0[p].at(0).get<double>(), r0[p].at(1).get<double>(),
               r0[p].at(2).get<double>()};
  }
  const auto f = j.at("readout_visibility").get<std::vector<double>>();
  if (f.size() != 3) throw ConfigError("spam model needs 3 visibilities");
  s.readout_visibility = {f[0], f[1], f[2]};
  return s;
}

std::string to_json(const eval::SelfConsistencyReport& rep) {
  json bins = json::array();
  for (std::size_t b = 0; b < rep.count.size(); ++b) {
    bins.push_back({{"center", rep.bin_center[b]},
                    {"predicted", rep.predicted_mean[b]},
                    {"empirical", rep.empirical_mean[b]},
                    {"count", rep.count[b]}});
  }
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "self_consistency";
  j["delta"] = rep.delta;
  j["epsilon"] = rep.epsilon;
  j["slope"] = rep.slope;
  j["n_shots"] = rep.n_shots;
  j["bins"] = std::move(bins);
  return j.dump(2) + "\n";
}

std::string to_json(const eval::CoarseStudyReport& rep) {
  json rows = json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"dt", r.dt},
                    {"rel_err_omega", r.rel_err_omega},
                    {"rel_err_gamma", r.rel_err_gamma},
                    {"rel_err_eta", r.rel_err_eta},
                    {"learned_ce", r.learned_ce},
                    {"true_ce", r.true_ce}});
  }
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "coarse_study";
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string to_json(const eval::BinFitResult& rep) {
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "bin_fit";
  j["omega_r"] = rep.omega;
  j["gamma_d"] = rep.gamma;
  j["eta"] = rep.eta;
  j["omega_err"] = rep.omega_err;
  j["gamma_err"] = rep.gamma_err;
  j["eta_err"] = rep.eta_err;
  j["bins_used"] = rep.bins_used;
  return j.dump(2) + "\n";
}

std::string to_json(const sde::SelectionReport& rep) {
  json models = json::array();
  for (std::size_t i = 0; i < rep.names.size(); ++i) {
    models.push_back({{"name", rep.names[i]},
                      {"n_params", rep.n_params[i]},
                      {"test_ce", rep.test_ce[i]}});
  }
  json comps = json::array();
  for (const auto& c : rep.comparisons) {
    comps.push_back({{"smaller", c.smaller},
                     {"larger", c.larger},
                     {"delta_ce", c.delta_ce},
                     {"lr_stat", c.lr_stat},
                     {"dof", c.dof}});
  }
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "model_selection";
  j["n_test"] = rep.n_test;
  j["models"] = std::move(models);
  j["comparisons"] = std::move(comps);
  return j.dump(2) + "\n";
}

std::string report_csv(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse report: " + std::string(e.what()));
  }
  check_format_version(j, "report");
  const std::string kind = j.value("kind", "");
  std::string csv;
  if (kind == "train_report") {
    const auto& m = j.at("members").at(j.at("best_member").get<int>());
    const auto tc = m.at("train_curve").get<std::vector<double>>();
    const auto vc = m.at("val_curve").get<std::vector<double>>();
    csv = "epoch,train,val\n";
    for (std::size_t i = 0; i < tc.size(); ++i) {
      csv += std::to_string(i + 1) + "," + fmt(tc[i]) + "," + fmt(vc[i]) + "\n";
    }
  } else if (kind == "coarse_study") {
    csv = "dt,rel_err_omega,rel_err_gamma,rel_err_eta,learned_ce,true_ce\n";
    for (const auto& r : j.at("rows")) {
      csv += fmt(r.at("dt").get<double>()) + "," +
             fmt(r.at("rel_err_omega").get<double>()) + "," +
             fmt(r.at("rel_err_gamma").get<double>()) + "," +
             fmt(r.at("rel_err_eta").get<double>()) + "," +
             fmt(r.at("learned_ce").get<double>()) + "," +
             fmt(r.at("true_ce").get<double>()) + "\n";
    }
  } else if (kind == "self_consistency") {
    csv = "bin_center,predicted_mean,empirical_mean,count\n";
    for (const auto& b : j.at("bins")) {
      csv += fmt(b.at("center").get<double>()) + "," +
             fmt(b.at("predicted").get<double>()) + "," +
             fmt(b.at("empirical").get<double>()) + "," +
             std::to_string(b.at("count").get<long>()) + "\n";
    }
  } else {
    throw ConfigError("no CSV rendering for report kind '" + kind + "'");
  }
  return csv;
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config: " + std::string(e.what()));
  }
  check_keys(j, "(top level)", {"model", "data", "train", "loss", "study"});

  RunConfig cfg;
  try {
    if (j.contains("model")) {
      const json& m = j.at("model");
      check_keys(m, "model", {"pack", "truth"});
      if (m.contains("pack"))
        cfg.pack = pack_from_string(m.at("pack").get<std::string>());
      if (m.contains("truth")) {
        const json& t = m.at("truth");
        check_keys(t, "model.truth",
                   {"omega_r", "gamma_d", "eta", "gamma_up", "gamma_down"});
        cfg.truth = sme::rabi_dephasing_model(
            t.at("omega_r").get<double>(), t.at("gamma_d").get<double>(),
            t.at("eta").get<double>(), t.value("gamma_up", 0.0),
            t.value("gamma_down", 0.0));
      }
    }
    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d, "data",
                 {"path", "dt", "dt_fine", "t_grid", "shots_per_cell", "seed",
                  "splits", "chi", "kappa"});
      cfg.data_path = d.value("path", std::string{});
      cfg.meta.dt = d.value("dt", cfg.meta.dt);
      cfg.meta.dt_fine = d.value("dt_fine", cfg.meta.dt_fine);
      if (d.contains("t_grid"))
        cfg.meta.t_grid = d.at("t_grid").get<std::vector<double>>();
      cfg.meta.shots_per_cell =
          d.value("shots_per_cell", cfg.meta.shots_per_cell);
      cfg.meta.master_seed = d.value("seed", cfg.meta.master_seed);
      if (d.contains("splits")) {
        const auto s = d.at("splits").get<std::vector<double>>();
        if (s.size() != 3) throw ConfigError("data.splits must hold 3 values");
        cfg.meta.split_fractions = {s[0], s[1], s[2]};
      }
      cfg.meta.chi = d.value("chi", cfg.meta.chi);
      cfg.meta.kappa = d.value("kappa", cfg.meta.kappa);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      check_keys(t, "train",
                 {"lr", "batch", "epochs", "patience", "ensemble", "seed",
                  "use_spam_fit", "fit_readout", "init_spread", "eta_init",
                  "relax_init", "operator_init_sigma", "init_omega",
                  "init_gamma", "hidden", "rnn_epochs"});
      cfg.train.lr = t.value("lr", cfg.train.lr);
      cfg.train.batch = t.value("batch", cfg.train.batch);
      cfg.train.epochs = t.value("epochs", cfg.train.epochs);
      cfg.train.patience = t.value("patience", cfg.train.patience);
      cfg.train.ensemble = t.value("ensemble", cfg.train.ensemble);
      cfg.train.seed = t.value("seed", cfg.train.seed);
      cfg.train.use_spam_fit = t.value("use_spam_fit", cfg.train.use_spam_fit);
      cfg.train.fit_readout = t.value("fit_readout", cfg.train.fit_readout);
      cfg.train.init_spread = t.value("init_spread", cfg.train.init_spread);
      if (t.contains("eta_init")) {
        const auto v = t.at("eta_init").get<std::vector<double>>();
        if (v.size() != 2) throw ConfigError("train.eta_init must hold 2 values");
        cfg.train.eta_init_lo = v[0];
        cfg.train.eta_init_hi = v[1];
      }
      if (t.contains("relax_init")) {
        const auto v = t.at("relax_init").get<std::vector<double>>();
        if (v.size() != 2)
          throw ConfigError("train.relax_init must hold 2 values");
        cfg.train.relax_init_lo = v[0];
        cfg.train.relax_init_hi = v[1];
      }
      cfg.train.operator_init_sigma =
          t.value("operator_init_sigma", cfg.train.operator_init_sigma);
      cfg.train.init_omega = t.value("init_omega", cfg.train.init_omega);
      cfg.train.init_gamma = t.value("init_gamma", cfg.train.init_gamma);
      cfg.hidden = t.value("hidden", cfg.hidden);
      cfg.rnn_epochs = t.value("rnn_epochs", cfg.rnn_epochs);
    }
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      check_keys(l, "loss", {"w_posit", "w_prep", "w_dm"});
      cfg.loss.posit = l.value("w_posit", cfg.loss.posit);
      cfg.loss.prep = l.value("w_prep", cfg.loss.prep);
      cfg.loss.dm = l.value("w_dm", cfg.loss.dm);
      if (cfg.loss.posit < 0 || cfg.loss.prep < 0 || cfg.loss.dm < 0)
        throw ConfigError("loss weights must be nonnegative");
    }
    if (j.contains("study")) {
      const json& s = j.at("study");
      check_keys(s, "study", {"k_list", "delta"});
      if (s.contains("k_list"))
        cfg.k_list = s.at("k_list").get<std::vector<int>>();
      cfg.delta = s.value("delta", cfg.delta);
    }
  } catch (const json::exception& e) {
    throw ConfigError("invalid config value: " + std::string(e.what()));
  }
  cfg.meta.generator = cfg.truth;
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  return config_from_json(read_text_file(path));
}

}  // namespace qtraj::io
