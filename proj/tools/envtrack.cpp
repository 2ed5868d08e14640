// envtrack: one binary for the whole experiment loop. Generate or preprocess
// recordings, train the dual-path network under the three scenarios, evaluate
// models into report CSVs, fit the linear decoder baseline, and compare two
// reports with a paired test. Every command is deterministic given its inputs
// and seeds, writes data only to files, and keeps diagnostics on stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "envtrack/baseline.hpp"
#include "envtrack/dataio.hpp"
#include "envtrack/format.hpp"
#include "envtrack/model.hpp"
#include "envtrack/parallel.hpp"
#include "envtrack/prep.hpp"
#include "envtrack/stats.hpp"
#include "envtrack/synthgen.hpp"
#include "envtrack/training.hpp"
#include "envtrack/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace envtrack;

namespace {

// ---------------------------------------------------------------------------
// Config file: one JSON document, sections mirroring the module configs.
// Every field is optional and defaults to the module default; unknown keys
// are rejected so a typo cannot silently run a different experiment.
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  NetworkConfig network;
  TrainConfig training;
  DatasetConfig dataset;
  SynthConfig synth;
  int baseline_lags = 17;
  std::vector<std::string> holdout;
};

json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

double parse_snr(const json& v, const std::string& where) {
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw std::runtime_error(where + ": expected a number, \"inf\" or \"-inf\", got \"" + s +
                             "\"");
  }
  if (!v.is_number()) throw std::runtime_error(where + ": expected a number or \"inf\"");
  return v.get<double>();
}

json snr_json(double v) {
  if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
  return json(v);
}

// Flag form: a plain number, or "inf"/"-inf" since the flag must round-trip
// through the config file and JSON has no infinity literal.
double parse_snr_flag(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) {
    throw std::runtime_error("--snr-db: expected a number, \"inf\" or \"-inf\", got \"" + s +
                             "\"");
  }
  return v;
}

// Reads known fields from one config section and rejects everything else.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw std::runtime_error(where_ + " must be a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    const json* v = claim(key);
    if (!v) return;
    try {
      v->get_to(out);
    } catch (const json::exception&) {
      throw std::runtime_error(where_ + "." + key + ": wrong type");
    }
  }

  void get_snr(const char* key, double& out) {
    const json* v = claim(key);
    if (v) out = parse_snr(*v, where_ + "." + key);
  }

  void get_mode(const char* key, SynthMode& out) {
    std::string s;
    get(key, s);
    if (!s.empty()) out = parse_synth_mode(s);
  }

  void done() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw std::runtime_error(where_ + ": unknown key \"" + k + "\"");
    }
  }

 private:
  const json* claim(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

ExperimentConfig parse_config(const json& root, const std::string& where) {
  if (!root.is_object()) throw std::runtime_error(where + ": config must be a JSON object");
  static const std::set<std::string> known = {"network", "training", "dataset",
                                              "synth",   "baseline", "holdout"};
  for (const auto& [k, v] : root.items()) {
    if (!known.count(k)) throw std::runtime_error(where + ": unknown key \"" + k + "\"");
  }
  ExperimentConfig c;
  if (root.contains("network")) {
    Fields f(root["network"], where + ": network");
    f.get("window_samples", c.network.window_samples);
    f.get("eeg_channels", c.network.eeg_channels);
    f.get("conv_kernel", c.network.conv_kernel);
    f.get("conv_stride", c.network.conv_stride);
    f.get("conv_filters", c.network.conv_filters);
    f.get("dense1_units", c.network.dense1_units);
    f.get("embed_dim", c.network.embed_dim);
    f.get("lstm_hidden", c.network.lstm_hidden);
    f.get("seed", c.network.seed);
    f.done();
  }
  if (root.contains("training")) {
    Fields f(root["training"], where + ": training");
    f.get("learning_rate", c.training.learning_rate);
    f.get("batch_size", c.training.batch_size);
    f.get("max_epochs", c.training.max_epochs);
    f.get("patience", c.training.patience);
    f.get("beta1", c.training.beta1);
    f.get("beta2", c.training.beta2);
    f.get("eps", c.training.eps);
    f.get("seed", c.training.seed);
    f.done();
  }
  if (root.contains("dataset")) {
    Fields f(root["dataset"], where + ": dataset");
    f.get("window_s", c.dataset.window_s);
    f.get("overlap", c.dataset.overlap);
    f.get("gap_samples", c.dataset.gap_samples);
    f.done();
  }
  if (root.contains("synth")) {
    Fields f(root["synth"], where + ": synth");
    f.get("n_subjects", c.synth.n_subjects);
    f.get("minutes", c.synth.minutes);
    f.get_snr("snr_db", c.synth.snr_db);
    f.get_mode("mode", c.synth.mode);
    f.get("seed", c.synth.seed);
    f.done();
  }
  if (root.contains("baseline")) {
    Fields f(root["baseline"], where + ": baseline");
    f.get("lags", c.baseline_lags);
    f.done();
  }
  if (root.contains("holdout")) {
    try {
      root["holdout"].get_to(c.holdout);
    } catch (const json::exception&) {
      throw std::runtime_error(where + ".holdout: expected an array of subject ids");
    }
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : parse_config(load_json_file(path), path);
}

json section_json(const ExperimentConfig& c, const std::string& name) {
  if (name == "network") {
    return {{"window_samples", c.network.window_samples},
            {"eeg_channels", c.network.eeg_channels},
            {"conv_kernel", c.network.conv_kernel},
            {"conv_stride", c.network.conv_stride},
            {"conv_filters", c.network.conv_filters},
            {"dense1_units", c.network.dense1_units},
            {"embed_dim", c.network.embed_dim},
            {"lstm_hidden", c.network.lstm_hidden},
            {"seed", c.network.seed}};
  }
  if (name == "training") {
    return {{"learning_rate", c.training.learning_rate},
            {"batch_size", c.training.batch_size},
            {"max_epochs", c.training.max_epochs},
            {"patience", c.training.patience},
            {"beta1", c.training.beta1},
            {"beta2", c.training.beta2},
            {"eps", c.training.eps},
            {"seed", c.training.seed}};
  }
  if (name == "dataset") {
    return {{"window_s", c.dataset.window_s},
            {"overlap", c.dataset.overlap},
            {"gap_samples", c.dataset.gap_samples}};
  }
  if (name == "synth") {
    return {{"n_subjects", c.synth.n_subjects},
            {"minutes", c.synth.minutes},
            {"snr_db", snr_json(c.synth.snr_db)},
            {"mode", c.synth.mode == SynthMode::kLinear ? "linear" : "nonlinear"},
            {"seed", c.synth.seed}};
  }
  if (name == "baseline") return {{"lags", c.baseline_lags}};
  throw std::logic_error("unknown config section " + name);
}

// The echo is a valid config file: re-running with it reproduces the run.
json echo_json(const ExperimentConfig& c, const std::vector<std::string>& sections) {
  json out = json::object();
  for (const std::string& s : sections) out[s] = section_json(c, s);
  if (!c.holdout.empty()) out["holdout"] = c.holdout;
  return out;
}

void write_text_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << bytes;
  if (!f.good()) throw std::runtime_error("short write to " + path);
}

void write_json_file(const json& j, const std::string& path) {
  write_text_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Paths and manifests
// ---------------------------------------------------------------------------

void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// model.nmw -> model<suffix>; the suffix carries its own extension.
std::string with_suffix(const std::string& path, const char* suffix) {
  fs::path p(path);
  p.replace_extension();
  return p.string() + suffix;
}

// model.nmw + s03 -> model.s03.nmw
std::string subject_variant(const std::string& path, const std::string& subject) {
  fs::path p(path);
  const std::string ext = p.extension().string();
  p.replace_extension();
  return p.string() + "." + subject + ext;
}

struct ManifestEntry {
  std::string path;
  std::string subject_id;
};

std::string resolve_manifest(const std::string& data_arg) {
  if (fs::is_directory(data_arg)) return (fs::path(data_arg) / "manifest.json").string();
  return data_arg;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  const json j = load_json_file(path);
  if (!j.is_object() || !j.contains("recordings")) {
    throw std::runtime_error(path + ": expected {\"recordings\": [...]}");
  }
  for (const auto& [k, v] : j.items()) {
    if (k != "recordings") throw std::runtime_error(path + ": unknown key \"" + k + "\"");
  }
  const json& arr = j["recordings"];
  if (!arr.is_array() || arr.empty()) {
    throw std::runtime_error(path + ": \"recordings\" must be a nonempty array");
  }
  std::vector<ManifestEntry> out;
  for (const json& e : arr) {
    Fields f(e, path + ": recording entry");
    ManifestEntry m;
    f.get("path", m.path);
    f.get("subject_id", m.subject_id);
    f.done();
    if (m.path.empty() || m.subject_id.empty()) {
      throw std::runtime_error(path + ": every recording needs \"path\" and \"subject_id\"");
    }
    out.push_back(std::move(m));
  }
  return out;
}

// Containers store raw values; every consumer normalizes per channel and
// envelope at load time.
std::vector<Recording> load_recordings(const std::string& data_arg) {
  const std::string manifest = resolve_manifest(data_arg);
  const fs::path base = fs::path(manifest).parent_path();
  std::vector<Recording> recs;
  for (const ManifestEntry& e : read_manifest(manifest)) {
    const fs::path p = fs::path(e.path).is_absolute() ? fs::path(e.path) : base / e.path;
    Recording rec = read_recording(p.string());
    if (rec.subject_id != e.subject_id) {
      throw std::runtime_error(p.string() + ": container subject \"" + rec.subject_id +
                               "\" does not match manifest subject \"" + e.subject_id + "\"");
    }
    if (rec.sample_rate != 64) {
      throw std::runtime_error(p.string() + ": sample rate " + std::to_string(rec.sample_rate) +
                               " Hz, models expect preprocessed 64 Hz data (run prep first)");
    }
    normalize_recording(rec);
    recs.push_back(std::move(rec));
  }
  return recs;
}

std::string manifest_bytes(const std::vector<ManifestEntry>& entries) {
  std::string m = "{\"recordings\":[";
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i) m += ",";
    m += "{\"path\":\"" + entries[i].path + "\",\"subject_id\":\"" + entries[i].subject_id +
         "\"}";
  }
  m += "]}\n";
  return m;
}

// ---------------------------------------------------------------------------
// Report CSV input (the writer lives with the training artifacts)
// ---------------------------------------------------------------------------

std::vector<EvalReport> read_report_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "subject_id,n_segments,n_correct,accuracy") {
    throw std::runtime_error(path + ": unexpected header \"" + line + "\"");
  }
  std::vector<EvalReport> out;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      const std::size_t c = line.find(',', pos);
      cells.push_back(line.substr(pos, c - pos));
      if (c == std::string::npos) break;
      pos = c + 1;
    }
    const std::string where = path + ":" + std::to_string(lineno);
    if (cells.size() != 4) {
      throw std::runtime_error(where + ": expected 4 fields, got " +
                               std::to_string(cells.size()));
    }
    EvalReport r;
    r.subject_id = cells[0];
    try {
      r.n_segments = std::stoll(cells[1]);
      r.n_correct = std::stoll(cells[2]);
      r.accuracy = std::stod(cells[3]);
    } catch (const std::exception&) {
      throw std::runtime_error(where + ": malformed number");
    }
    if (r.subject_id.empty() || r.n_segments < 0 || r.n_correct < 0 ||
        r.n_correct > r.n_segments || r.accuracy < 0.0 || r.accuracy > 1.0) {
      throw std::runtime_error(where + ": values out of range");
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw std::runtime_error(path + ": no data rows");
  return out;
}

void check_window_agreement(const ExperimentConfig& cfg, const std::string& who) {
  const auto from_dataset = static_cast<int>(std::llround(cfg.dataset.window_s * 64.0));
  if (from_dataset != cfg.network.window_samples) {
    throw std::runtime_error(who + ": dataset.window_s " + fmt_double(cfg.dataset.window_s) +
                             " s gives " + std::to_string(from_dataset) +
                             " samples but network.window_samples is " +
                             std::to_string(cfg.network.window_samples));
  }
}

// ---------------------------------------------------------------------------
// synth gen
// ---------------------------------------------------------------------------

struct SynthFlags {
  std::optional<int> subjects;
  std::optional<double> minutes;
  std::optional<std::string> mode;
  std::optional<std::string> snr_db;
  std::optional<std::uint64_t> seed;
};

void cmd_synth_gen(const std::string& config_path, const SynthFlags& fl,
                   const std::string& out_dir) {
  ExperimentConfig cfg = load_config(config_path);
  SynthConfig& sc = cfg.synth;
  if (fl.subjects) sc.n_subjects = *fl.subjects;
  if (fl.minutes) sc.minutes = *fl.minutes;
  if (fl.mode) sc.mode = parse_synth_mode(*fl.mode);
  if (fl.seed) sc.seed = *fl.seed;
  if (fl.snr_db) sc.snr_db = parse_snr_flag(*fl.snr_db);
  sc.validate();

  fs::create_directories(out_dir);
  std::vector<Recording> recs(static_cast<std::size_t>(sc.n_subjects));
  parallel_for(sc.n_subjects,
               [&](std::int64_t i) { recs[static_cast<std::size_t>(i)] = synth_subject(sc, static_cast<int>(i)); });

  std::vector<ManifestEntry> entries;
  for (const Recording& rec : recs) {
    const std::string name = rec.subject_id + ".nmm";
    write_recording(rec, (fs::path(out_dir) / name).string());
    entries.push_back({name, rec.subject_id});
    std::fprintf(stderr, "%s: %lld samples x %u channels -> %s\n", rec.subject_id.c_str(),
                 static_cast<long long>(rec.n_samples()), rec.n_channels, name.c_str());
  }
  write_text_file((fs::path(out_dir) / "manifest.json").string(), manifest_bytes(entries));
  write_json_file(echo_json(cfg, {"synth"}), (fs::path(out_dir) / "config.json").string());
  std::fprintf(stderr, "manifest: %s\n", (fs::path(out_dir) / "manifest.json").c_str());
}

// ---------------------------------------------------------------------------
// prep run
// ---------------------------------------------------------------------------

void cmd_prep_run(const std::string& eeg_path, const std::string& audio_path,
                  const std::string& out_path) {
  const Recording raw = read_recording(eeg_path);
  const Waveform audio = read_wav_mono(audio_path);
  const Recording rec = prep_recording(raw, audio);
  ensure_parent_dir(out_path);
  write_recording(rec, out_path);
  std::fprintf(stderr, "%s: %u channels, %lld samples at %u Hz\n", out_path.c_str(),
               rec.n_channels, static_cast<long long>(rec.n_samples()), rec.sample_rate);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void save_model_artifacts(const NetworkParams& params, const TrainHistory& hist,
                          const ExperimentConfig& cfg, const std::string& path,
                          const char* tag) {
  save_network(params, path);
  write_history_csv(hist, with_suffix(path, ".history.csv"));
  write_json_file(echo_json(cfg, {"network", "training", "dataset"}),
                  with_suffix(path, ".config.json"));
  const auto best = static_cast<std::size_t>(hist.best_epoch);
  std::fprintf(stderr, "%s: best epoch %d/%d, val loss %.4f, val acc %.3f -> %s\n", tag,
               hist.best_epoch + 1, hist.epochs(), hist.val_loss[best], hist.val_acc[best],
               path.c_str());
}

void cmd_train(const std::string& scenario_str, const std::string& data,
               const std::string& config_path, const std::string& out,
               const std::string& init_path) {
  std::string up = scenario_str;
  for (char& ch : up) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  const Scenario sc = parse_scenario(up);
  if (sc != Scenario::kTL && !init_path.empty()) {
    throw std::runtime_error("--init only applies to the tl scenario");
  }

  ExperimentConfig cfg = load_config(config_path);
  check_window_agreement(cfg, "train");
  const std::vector<Recording> recordings = load_recordings(data);
  const ScenarioConfig scfg{cfg.network, cfg.training, cfg.dataset, cfg.holdout};
  ensure_parent_dir(out);

  if (sc == Scenario::kTL) {
    if (init_path.empty()) {
      throw std::runtime_error("tl needs --init with the pooled model to fine-tune from");
    }
    if (!cfg.holdout.empty()) throw std::runtime_error("holdout only applies to si training");
    const NetworkParams si_params = load_network(init_path, cfg.network);
    const std::vector<std::string> subjects = subject_order(recordings);
    for (std::size_t si = 0; si < subjects.size(); ++si) {
      const Dataset ds = detail::subject_dataset(recordings, subjects[si], scfg, si);
      TrainConfig tc = cfg.training;
      tc.seed += si;
      const TrainResult res = transfer_finetune(si_params, ds, tc);
      save_model_artifacts(res.params, res.history, cfg, subject_variant(out, subjects[si]),
                           ("tl " + subjects[si]).c_str());
    }
    return;
  }

  const ScenarioResult result = run_scenario(sc, recordings, scfg);
  if (sc == Scenario::kSI) {
    const TrainedModel& m = result.models.front();
    save_model_artifacts(m.params, m.history, cfg, out, "si pooled");
    return;
  }
  for (const TrainedModel& m : result.models) {
    save_model_artifacts(m.params, m.history, cfg, subject_variant(out, m.subject_id),
                         ("sd " + m.subject_id).c_str());
  }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

std::string summary_bytes(const Summary& s) {
  std::string out = "{\"n\":" + std::to_string(s.n);
  out += ",\"mean\":" + fmt_double(s.mean);
  out += ",\"median\":" + fmt_double(s.median);
  out += ",\"q1\":" + fmt_double(s.q1);
  out += ",\"q3\":" + fmt_double(s.q3);
  out += ",\"min\":" + fmt_double(s.min);
  out += ",\"max\":" + fmt_double(s.max);
  out += "}\n";
  return out;
}

void cmd_eval(const std::string& model_path, const std::string& data, const std::string& split,
              std::optional<double> window_flag, const std::string& report_path,
              const std::string& only_subject) {
  if (split != "train" && split != "val" && split != "validation" && split != "test") {
    throw std::runtime_error("--split must be train, val or test, got \"" + split + "\"");
  }
  const std::string sidecar = with_suffix(model_path, ".config.json");
  if (!fs::exists(sidecar)) {
    throw std::runtime_error(sidecar + " not found; models are evaluated with the config echo "
                             "written next to them at training time");
  }
  ExperimentConfig cfg = load_config(sidecar);
  const double window_s = window_flag.value_or(cfg.dataset.window_s);
  const auto requested = static_cast<int>(std::llround(window_s * 64.0));
  if (requested != cfg.network.window_samples) {
    throw std::runtime_error(
        "requested window " + std::to_string(requested) + " samples (" + fmt_double(window_s) +
        " s) does not match the model's " + std::to_string(cfg.network.window_samples) +
        " samples (" + fmt_double(cfg.network.window_samples / 64.0) + " s)");
  }
  cfg.dataset.window_s = window_s;

  const std::vector<Recording> recordings = load_recordings(data);
  const std::vector<std::string> subjects = subject_order(recordings);
  const NetworkParams params = load_network(model_path, cfg.network);
  const ScenarioConfig scfg{cfg.network, cfg.training, cfg.dataset, {}};

  // Per-subject segment streams are tied to the subject's position in the
  // manifest, so a filtered run still sees the same segments.
  std::vector<std::size_t> picked;
  for (std::size_t si = 0; si < subjects.size(); ++si) {
    if (only_subject.empty() || subjects[si] == only_subject) picked.push_back(si);
  }
  if (picked.empty()) {
    throw std::runtime_error("subject \"" + only_subject + "\" is not in the manifest");
  }

  std::vector<EvalReport> reports(picked.size());
  parallel_for(static_cast<std::int64_t>(picked.size()), [&](std::int64_t k) {
    const std::size_t si = picked[static_cast<std::size_t>(k)];
    const Dataset ds = detail::subject_dataset(recordings, subjects[si], scfg, si);
    reports[static_cast<std::size_t>(k)] =
        report_from(evaluate_split(params, ds, ds.split(split)), subjects[si]);
  });

  ensure_parent_dir(report_path);
  write_report_csv(reports, report_path);
  std::vector<double> accs;
  for (const EvalReport& r : reports) {
    accs.push_back(r.accuracy);
    std::fprintf(stderr, "%s: %lld/%lld correct (%.3f)\n", r.subject_id.c_str(),
                 static_cast<long long>(r.n_correct), static_cast<long long>(r.n_segments),
                 r.accuracy);
  }
  write_text_file(with_suffix(report_path, ".summary.json"), summary_bytes(summarize(accs)));
  write_json_file(echo_json(cfg, {"network", "training", "dataset"}),
                  with_suffix(report_path, ".config.json"));
  std::fprintf(stderr, "report: %s\n", report_path.c_str());
}

// ---------------------------------------------------------------------------
// baseline linear
// ---------------------------------------------------------------------------

void cmd_baseline_linear(const std::string& data, const std::string& config_path,
                         const std::string& report_path) {
  const ExperimentConfig cfg = load_config(config_path);
  BaselineConfig bc;
  bc.lags = cfg.baseline_lags;
  bc.dataset = cfg.dataset;
  const std::vector<Recording> recordings = load_recordings(data);
  const std::vector<BaselineSubjectResult> results =
      run_baseline(recordings, bc, cfg.training.seed);

  std::vector<EvalReport> reports;
  for (const BaselineSubjectResult& r : results) {
    reports.push_back(r.report);
    std::fprintf(stderr, "%s: lambda %.3g, val spearman %.3f, theta %.4f, acc %.3f\n",
                 r.report.subject_id.c_str(), r.decoder.lambda, r.val_spearman,
                 r.threshold.theta, r.report.accuracy);
  }
  ensure_parent_dir(report_path);
  write_report_csv(reports, report_path);
  write_json_file(echo_json(cfg, {"baseline", "dataset", "training"}),
                  with_suffix(report_path, ".config.json"));
  std::fprintf(stderr, "report: %s\n", report_path.c_str());
}

// ---------------------------------------------------------------------------
// stats compare
// ---------------------------------------------------------------------------

void cmd_stats_compare(const std::string& a_path, const std::string& b_path,
                       const std::string& out_path) {
  const std::vector<EvalReport> ra = read_report_csv(a_path);
  const std::vector<EvalReport> rb = read_report_csv(b_path);
  std::map<std::string, double> b_acc;
  for (const EvalReport& r : rb) {
    if (!b_acc.emplace(r.subject_id, r.accuracy).second) {
      throw std::runtime_error(b_path + ": duplicate subject \"" + r.subject_id + "\"");
    }
  }
  if (ra.size() != rb.size()) {
    throw std::runtime_error("reports list different subjects (" + std::to_string(ra.size()) +
                             " vs " + std::to_string(rb.size()) + ")");
  }
  std::vector<double> va, vb;
  std::set<std::string> seen;
  for (const EvalReport& r : ra) {
    if (!seen.insert(r.subject_id).second) {
      throw std::runtime_error(a_path + ": duplicate subject \"" + r.subject_id + "\"");
    }
    const auto it = b_acc.find(r.subject_id);
    if (it == b_acc.end()) {
      throw std::runtime_error("subject \"" + r.subject_id + "\" is in " + a_path +
                               " but not in " + b_path);
    }
    va.push_back(r.accuracy);
    vb.push_back(it->second);
  }

  const WilcoxonResult w = wilcoxon_signed_rank(va, vb);
  ensure_parent_dir(out_path);
  write_comparison_json(w, out_path);
  if (w.used_normal_approx) {
    std::fprintf(stderr, "wilcoxon: W=%s n=%d p=%s (normal approximation, z=%.3f)\n",
                 fmt_double(w.W).c_str(), w.n, fmt_double(w.p).c_str(), w.z);
  } else {
    std::fprintf(stderr, "wilcoxon: W=%s n=%d p=%s (exact)\n", fmt_double(w.W).c_str(), w.n,
                 fmt_double(w.p).c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG / speech-envelope match-mismatch experiments"};
  app.require_subcommand(1);

  // synth gen
  auto* synth = app.add_subcommand("synth", "synthetic data");
  synth->require_subcommand(1);
  auto* gen = synth->add_subcommand("gen", "generate synthetic recordings plus a manifest");
  SynthFlags sf;
  int arg_subjects = 1;
  double arg_minutes = 10.0;
  std::string arg_mode = "linear", arg_snr = "inf", arg_config, arg_out;
  std::uint64_t arg_seed = 1;
  auto* o_subjects = gen->add_option("--subjects", arg_subjects, "number of subjects");
  auto* o_minutes = gen->add_option("--minutes", arg_minutes, "minutes per recording");
  auto* o_mode = gen->add_option("--mode", arg_mode, "linear or nonlinear forward model");
  auto* o_snr = gen->add_option("--snr-db", arg_snr, "per-channel SNR in dB, or inf");
  auto* o_seed = gen->add_option("--seed", arg_seed, "base seed");
  gen->add_option("--config", arg_config, "config JSON (flags override its synth section)");
  gen->add_option("--out", arg_out, "output directory")->required();

  // prep run
  auto* prep = app.add_subcommand("prep", "preprocess real recordings");
  prep->require_subcommand(1);
  auto* prep_run = prep->add_subcommand("run", "raw EEG container + stimulus WAV -> 64 Hz container");
  std::string prep_eeg, prep_audio, prep_out;
  prep_run->add_option("--eeg", prep_eeg, "raw EEG container (rate a multiple of 64 Hz)")
      ->required();
  prep_run->add_option("--audio", prep_audio, "stimulus WAV, 16-bit PCM mono")->required();
  prep_run->add_option("--out", prep_out, "output container path")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model under sd, si or tl");
  std::string tr_scenario, tr_data, tr_config, tr_out, tr_init;
  train_cmd->add_option("--scenario", tr_scenario, "sd, si or tl")->required();
  train_cmd->add_option("--data", tr_data, "manifest.json or its directory")->required();
  train_cmd->add_option("--config", tr_config, "config JSON");
  train_cmd->add_option("--out", tr_out,
                        "model path; sd/tl write one model.<subject>.nmw per subject")
      ->required();
  train_cmd->add_option("--init", tr_init, "pooled si model to fine-tune from (tl only)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model into a report CSV");
  std::string ev_model, ev_data, ev_split = "test", ev_report, ev_subject;
  double ev_window = 0.0;
  eval_cmd->add_option("--model", ev_model, "weights container")->required();
  eval_cmd->add_option("--data", ev_data, "manifest.json or its directory")->required();
  eval_cmd->add_option("--split", ev_split, "train, val or test");
  auto* o_window =
      eval_cmd->add_option("--window-s", ev_window,
                           "segment window in seconds (default: the model's training window)");
  eval_cmd->add_option("--report", ev_report, "output CSV path")->required();
  eval_cmd->add_option("--subject", ev_subject, "restrict to one subject id");

  // baseline linear
  auto* baseline_cmd = app.add_subcommand("baseline", "linear decoder baseline");
  baseline_cmd->require_subcommand(1);
  auto* bl_linear = baseline_cmd->add_subcommand("linear", "lagged ridge decoder + threshold");
  std::string bl_data, bl_config, bl_report;
  bl_linear->add_option("--data", bl_data, "manifest.json or its directory")->required();
  bl_linear->add_option("--config", bl_config, "config JSON");
  bl_linear->add_option("--report", bl_report, "output CSV path")->required();

  // stats compare
  auto* stats_cmd = app.add_subcommand("stats", "statistics over reports");
  stats_cmd->require_subcommand(1);
  auto* st_compare = stats_cmd->add_subcommand("compare", "paired Wilcoxon over two reports");
  std::string st_a, st_b, st_out;
  st_compare->add_option("--a", st_a, "first report CSV")->required();
  st_compare->add_option("--b", st_b, "second report CSV")->required();
  st_compare->add_option("--out", st_out, "comparison JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) {
      if (o_subjects->count()) sf.subjects = arg_subjects;
      if (o_minutes->count()) sf.minutes = arg_minutes;
      if (o_mode->count()) sf.mode = arg_mode;
      if (o_snr->count()) sf.snr_db = arg_snr;
      if (o_seed->count()) sf.seed = arg_seed;
      cmd_synth_gen(arg_config, sf, arg_out);
    } else if (prep_run->parsed()) {
      cmd_prep_run(prep_eeg, prep_audio, prep_out);
    } else if (train_cmd->parsed()) {
      cmd_train(tr_scenario, tr_data, tr_config, tr_out, tr_init);
    } else if (eval_cmd->parsed()) {
      cmd_eval(ev_model, ev_data, ev_split,
               o_window->count() ? std::optional<double>(ev_window) : std::nullopt, ev_report,
               ev_subject);
    } else if (bl_linear->parsed()) {
      cmd_baseline_linear(bl_data, bl_config, bl_report);
    } else if (st_compare->parsed()) {
      cmd_stats_compare(st_a, st_b, st_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "envtrack: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
