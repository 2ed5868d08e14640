#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "envtrack/dataio.hpp"
#include "envtrack/format.hpp"
#include "envtrack/model.hpp"
#include "envtrack/rng.hpp"

namespace envtrack {

enum class Scenario { kSD, kSI, kTL };

inline Scenario parse_scenario(const std::string& s) {
  if (s == "SD") return Scenario::kSD;
  if (s == "SI") return Scenario::kSI;
  if (s == "TL") return Scenario::kTL;
  throw std::invalid_argument("scenario must be SD, SI or TL, got '" + s + "'");
}

inline const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::kSD: return "SD";
    case Scenario::kSI: return "SI";
    default: return "TL";
  }
}

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 64;
  int max_epochs = 30;
  int patience = 5;  // 0 disables early stopping
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1;

  void validate() const {
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
    if (patience < 0) throw std::invalid_argument("patience must be >= 0");
    // learning_rate 0 is allowed: it pins the no-op training path in tests.
    if (learning_rate < 0.0 || !std::isfinite(learning_rate)) {
      throw std::invalid_argument("learning_rate must be finite and >= 0");
    }
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw std::invalid_argument("adam betas must lie in [0, 1)");
    }
    if (eps <= 0.0) throw std::invalid_argument("adam eps must be > 0");
  }
};

struct TrainHistory {
  std::vector<double> train_loss, val_loss, val_acc;
  int best_epoch = -1;  // index into the vectors
  bool stopped_early = false;

  int epochs() const { return static_cast<int>(train_loss.size()); }
};

// Gradients averaged over a batch, keyed by parameter name. An ordered map
// keeps every traversal deterministic.
using GradBuffers = std::map<std::string, std::vector<double>>;

struct AdamState {
  std::int64_t step = 0;  // shared across tensors; bias correction uses it
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
};

using FreezePredicate = std::function<bool(const std::string&)>;

inline bool is_eeg_path(const std::string& name) { return name.rfind("eeg_", 0) == 0; }

// One Adam update, in place. Frozen tensors are skipped entirely: no weight
// change and no moment update, so unfreezing later would start cold.
inline void adam_step(NetworkParams& params, const GradBuffers& grads, AdamState& state,
                      const TrainConfig& cfg, const FreezePredicate& frozen = {}) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params.named()) {
    if (frozen && frozen(name)) continue;
    const auto it = grads.find(name);
    if (it == grads.end()) {
      throw std::invalid_argument("adam_step: missing gradient for " + name);
    }
    const std::vector<double>& g = it->second;
    const std::size_t n = static_cast<std::size_t>(t->size());
    if (g.size() != n) {
      throw std::invalid_argument("adam_step: gradient for " + name + " has " +
                                  std::to_string(g.size()) + " values, parameter has " +
                                  std::to_string(n));
    }
    auto& [m, v] = state.moments[name];
    if (m.empty()) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
    std::vector<double>& w = t->mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

struct SplitEval {
  double loss = 0.0;
  double accuracy = 0.0;
  std::int64_t n = 0;
  std::int64_t correct = 0;
};

inline SplitEval evaluate_split(const NetworkParams& params, const Dataset& ds,
                                const std::vector<SegmentPair>& segments) {
  if (segments.empty()) throw std::invalid_argument("evaluate_split: empty split");
  SplitEval ev;
  for (const SegmentPair& seg : segments) {
    const Recording& rec = ds.recordings[static_cast<std::size_t>(seg.rec)];
    Tape tape;
    Tensor scores = forward_scores(tape, params, eeg_window_tensor(rec, seg.eeg_start, ds.window),
                                   env_window_tensor(rec, seg.env_start, ds.window));
    ev.loss += bce_loss(tape, scores, seg.label).item();
    ev.correct += decide(scores).label == seg.label ? 1 : 0;
    ev.n += 1;
  }
  ev.loss /= static_cast<double>(ev.n);
  ev.accuracy = static_cast<double>(ev.correct) / static_cast<double>(ev.n);
  return ev;
}

struct TrainResult {
  NetworkParams params;
  TrainHistory history;
};

// Mini-batch loop with early stopping on validation loss. Returns the
// parameters from the best validation epoch, not the last one. The shuffle
// stream is seed+epoch, so a run is reproducible and individual epochs are
// independently reconstructible.
inline TrainResult train(const NetworkParams& init, const Dataset& ds, const TrainConfig& cfg,
                         const FreezePredicate& frozen = {}) {
  cfg.validate();
  if (ds.train.empty()) throw std::invalid_argument("train: train split is empty");
  if (ds.validation.empty()) throw std::invalid_argument("train: validation split is empty");
  std::int64_t pos = 0;
  for (const auto& s : ds.train) pos += s.label;
  if (pos == 0 || pos == static_cast<std::int64_t>(ds.train.size())) {
    throw std::invalid_argument("train: train split needs both matched and mismatched segments");
  }

  NetworkParams params = init.clone();
  NetworkParams best = params.clone();
  AdamState state;
  TrainHistory hist;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<std::size_t> order(ds.train.size());
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(cfg.seed + static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t bn =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - b0);
      GradBuffers acc;
      for (auto& [name, t] : params.named()) {
        acc.emplace(name, std::vector<double>(static_cast<std::size_t>(t->size()), 0.0));
      }
      for (std::size_t i = 0; i < bn; ++i) {
        const SegmentPair& seg = ds.train[order[b0 + i]];
        const Recording& rec = ds.recordings[static_cast<std::size_t>(seg.rec)];
        Tape tape;
        double lv;
        GradientMap g;
        try {
          Tensor scores =
              forward_scores(tape, params, eeg_window_tensor(rec, seg.eeg_start, ds.window),
                             env_window_tensor(rec, seg.env_start, ds.window));
          Tensor loss = bce_loss(tape, scores, seg.label);
          lv = loss.item();
          g = tape.backward(loss);
        } catch (const std::runtime_error& e) {
          throw std::runtime_error("train: aborted at epoch " + std::to_string(epoch + 1) +
                                   ", batch " + std::to_string(b0 / cfg.batch_size + 1) + ": " +
                                   e.what());
        }
        if (!std::isfinite(lv)) {
          throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                   ", batch " + std::to_string(b0 / cfg.batch_size + 1));
        }
        loss_sum += lv;
        for (auto& [name, t] : params.named()) {
          if (!g.contains(*t)) continue;
          const auto& src = g.at(*t);
          auto& dst = acc[name];
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
      }
      const double inv = 1.0 / static_cast<double>(bn);
      for (auto& [name, buf] : acc) {
        for (auto& v : buf) v *= inv;
      }
      adam_step(params, acc, state, cfg, frozen);
    }

    hist.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    const SplitEval ve = evaluate_split(params, ds, ds.validation);
    hist.val_loss.push_back(ve.loss);
    hist.val_acc.push_back(ve.accuracy);

    if (ve.loss < best_val) {
      best_val = ve.loss;
      hist.best_epoch = epoch;
      best = params.clone();
      since_best = 0;
    } else {
      since_best += 1;
      if (cfg.patience > 0 && since_best >= cfg.patience) {
        hist.stopped_early = true;
        break;
      }
    }
  }
  return {std::move(best), std::move(hist)};
}

// Fine-tune a pooled model on one subject: the envelope path (env_conv and
// the LSTM) stays frozen bit-for-bit, only eeg_* tensors move.
inline TrainResult transfer_finetune(const NetworkParams& si_params, const Dataset& subject_ds,
                                     const TrainConfig& cfg) {
  for (std::size_t i = 1; i < subject_ds.recordings.size(); ++i) {
    if (subject_ds.recordings[i].subject_id != subject_ds.recordings[0].subject_id) {
      throw std::invalid_argument("transfer_finetune: dataset spans multiple subjects ('" +
                                  subject_ds.recordings[0].subject_id + "' and '" +
                                  subject_ds.recordings[i].subject_id + "')");
    }
  }
  return train(si_params, subject_ds, cfg,
               [](const std::string& name) { return !is_eeg_path(name); });
}

// ---------------------------------------------------------------------------
// Scenario orchestration
// ---------------------------------------------------------------------------

struct EvalReport {
  std::string subject_id;
  std::int64_t n_segments = 0;
  std::int64_t n_correct = 0;
  double accuracy = 0.0;
};

inline EvalReport report_from(const SplitEval& ev, const std::string& subject_id) {
  return {subject_id, ev.n, ev.correct, ev.accuracy};
}

struct ScenarioConfig {
  NetworkConfig network;
  TrainConfig training;
  DatasetConfig dataset;
  std::vector<std::string> holdout;  // SI only: subjects excluded from pooled training
};

struct TrainedModel {
  std::string subject_id;  // "pooled" for the SI model
  NetworkParams params;
  TrainHistory history;
};

struct ScenarioResult {
  std::vector<EvalReport> reports;        // one per subject, input order
  std::vector<TrainedModel> models;       // SD/TL: per subject; SI: the pooled model
  std::optional<TrainedModel> si_base;    // TL only: the pooled model before fine-tuning
};

inline std::vector<std::string> subject_order(const std::vector<Recording>& recs) {
  std::vector<std::string> ids;
  for (const Recording& r : recs) {
    if (std::find(ids.begin(), ids.end(), r.subject_id) == ids.end()) ids.push_back(r.subject_id);
  }
  return ids;
}

namespace detail {

// Per-subject data always derives from seed + subject index, for every
// scenario, so SD, TL and per-subject evaluation see identical segments.
inline Dataset subject_dataset(const std::vector<Recording>& recs, const std::string& id,
                               const ScenarioConfig& cfg, std::uint64_t subject_index) {
  std::vector<Recording> own;
  for (const Recording& r : recs) {
    if (r.subject_id == id) own.push_back(r);
  }
  return build_dataset(std::move(own), cfg.dataset, cfg.training.seed + subject_index);
}

}  // namespace detail

// SD: one model per subject from scratch. SI: one pooled model, evaluated on
// every subject (held-out subjects are excluded from pooling but still
// reported). TL: the pooled model fine-tuned per subject. With a single
// subject and the same seeds, SD and SI are the same computation bit for bit.
inline ScenarioResult run_scenario(Scenario sc, const std::vector<Recording>& recordings,
                                   const ScenarioConfig& cfg) {
  if (recordings.empty()) throw std::invalid_argument("run_scenario: no recordings");
  const std::vector<std::string> subjects = subject_order(recordings);
  for (const std::string& h : cfg.holdout) {
    if (std::find(subjects.begin(), subjects.end(), h) == subjects.end()) {
      throw std::invalid_argument("run_scenario: holdout subject '" + h + "' not in the data");
    }
  }
  if (sc != Scenario::kSI && !cfg.holdout.empty()) {
    throw std::invalid_argument("run_scenario: holdout only applies to SI");
  }

  ScenarioResult out;
  if (sc == Scenario::kSD) {
    for (std::size_t si = 0; si < subjects.size(); ++si) {
      Dataset ds = detail::subject_dataset(recordings, subjects[si], cfg, si);
      NetworkConfig nc = cfg.network;
      nc.seed += si;
      TrainConfig tc = cfg.training;
      tc.seed += si;
      TrainResult res = train(build_network(nc), ds, tc);
      out.reports.push_back(report_from(evaluate_split(res.params, ds, ds.test), subjects[si]));
      out.models.push_back({subjects[si], std::move(res.params), std::move(res.history)});
    }
    return out;
  }

  // SI and TL both start from one model trained on the pooled data.
  std::vector<Recording> pooled;
  for (const Recording& r : recordings) {
    if (std::find(cfg.holdout.begin(), cfg.holdout.end(), r.subject_id) == cfg.holdout.end()) {
      pooled.push_back(r);
    }
  }
  if (pooled.empty()) throw std::invalid_argument("run_scenario: every subject is held out");
  Dataset pooled_ds = build_dataset(std::move(pooled), cfg.dataset, cfg.training.seed);
  TrainResult si_res = train(build_network(cfg.network), pooled_ds, cfg.training);

  if (sc == Scenario::kSI) {
    for (std::size_t si = 0; si < subjects.size(); ++si) {
      Dataset ds = detail::subject_dataset(recordings, subjects[si], cfg, si);
      out.reports.push_back(report_from(evaluate_split(si_res.params, ds, ds.test), subjects[si]));
    }
    out.models.push_back({"pooled", std::move(si_res.params), std::move(si_res.history)});
    return out;
  }

  for (std::size_t si = 0; si < subjects.size(); ++si) {
    Dataset ds = detail::subject_dataset(recordings, subjects[si], cfg, si);
    TrainConfig tc = cfg.training;
    tc.seed += si;
    TrainResult res = transfer_finetune(si_res.params, ds, tc);
    out.reports.push_back(report_from(evaluate_split(res.params, ds, ds.test), subjects[si]));
    out.models.push_back({subjects[si], std::move(res.params), std::move(res.history)});
  }
  out.si_base = TrainedModel{"pooled", std::move(si_res.params), std::move(si_res.history)};
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts: weights files, history and report CSVs
// ---------------------------------------------------------------------------

inline void save_network(const NetworkParams& p, const std::string& path) {
  write_weights(p.named(), path);
}

// Rebuilds from config-defined shapes, then requires the file to supply
// exactly the expected tensor set.
inline NetworkParams load_network(const std::string& path, const NetworkConfig& cfg) {
  NetworkParams p = build_network(cfg);
  auto stored = read_weights(path);
  auto want = p.named();
  if (stored.size() != want.size()) {
    throw std::runtime_error(path + ": expected " + std::to_string(want.size()) +
                             " tensors, found " + std::to_string(stored.size()));
  }
  for (auto& [name, t] : want) {
    const auto it =
        std::find_if(stored.begin(), stored.end(), [&](const auto& e) { return e.first == name; });
    if (it == stored.end()) throw std::runtime_error(path + ": missing tensor " + name);
    if (it->second.shape() != t->shape()) {
      throw std::runtime_error(path + ": tensor " + name + " has shape " +
                               shape_str(it->second.shape()) + ", config wants " +
                               shape_str(t->shape()));
    }
    t->mutable_data() = it->second.data();
  }
  return p;
}

inline void write_history_csv(const TrainHistory& hist, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "epoch,train_loss,val_loss,val_acc\n";
  for (int e = 0; e < hist.epochs(); ++e) {
    f << e + 1 << ',' << fmt_double(hist.train_loss[static_cast<std::size_t>(e)]) << ','
      << fmt_double(hist.val_loss[static_cast<std::size_t>(e)]) << ','
      << fmt_double(hist.val_acc[static_cast<std::size_t>(e)]) << '\n';
  }
  if (!f.good()) throw std::runtime_error("short write to " + path);
}

inline void write_report_csv(const std::vector<EvalReport>& reports, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "subject_id,n_segments,n_correct,accuracy\n";
  for (const EvalReport& r : reports) {
    f << r.subject_id << ',' << r.n_segments << ',' << r.n_correct << ','
      << fmt_double(r.accuracy) << '\n';
  }
  if (!f.good()) throw std::runtime_error("short write to " + path);
}

}  // namespace envtrack
