#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "envtrack/dataio.hpp"
#include "envtrack/sigproc.hpp"
#include "envtrack/stats.hpp"
#include "envtrack/training.hpp"

namespace envtrack {

// Lagged ridge decoder: reconstruct the stimulus envelope at time t from
// eeg[ch, t..t+L-1] across all channels, score candidates by Spearman
// correlation, classify matched/mismatched against a tuned threshold.

struct Decoder {
  Eigen::VectorXd w;  // channels * lags, channel-major (lag fastest)
  int n_channels = 0;
  int n_lags = 17;  // 0..16 samples = 0-250 ms at 64 Hz
  double lambda = 0.0;

  void validate() const {
    if (n_lags < 1) throw std::invalid_argument("Decoder: lag count must be >= 1");
    if (w.size() != static_cast<Eigen::Index>(n_channels) * n_lags) {
      throw std::invalid_argument("Decoder: weight size does not match channels * lags");
    }
    if (!w.allFinite()) throw std::invalid_argument("Decoder: non-finite weights");
  }
};

struct ThresholdModel {
  double theta = 0.0;

  void validate() const {
    if (!(theta >= -1.0 && theta <= 1.0)) {
      throw std::invalid_argument("ThresholdModel: theta must lie in [-1, 1]");
    }
  }
};

// Row t holds eeg[ch, t+tau] for every channel (outer) and lag (inner);
// entries past the end of the signal are zero.
inline Eigen::MatrixXd build_lag_matrix(const Eigen::MatrixXd& eeg, int lags) {
  const Eigen::Index c = eeg.rows();
  const Eigen::Index n = eeg.cols();
  if (lags < 1) throw std::invalid_argument("build_lag_matrix: lag count must be >= 1");
  if (n <= lags) {
    throw std::invalid_argument("build_lag_matrix: need more samples (" + std::to_string(n) +
                                ") than lags (" + std::to_string(lags) + ")");
  }
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, c * lags);
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    for (Eigen::Index tau = 0; tau < lags; ++tau) {
      x.col(ch * lags + tau).head(n - tau) = eeg.row(ch).segment(tau, n - tau);
    }
  }
  return x;
}

namespace detail {

inline Eigen::VectorXd solve_ridge_normal(const Eigen::MatrixXd& xtx, const Eigen::VectorXd& xty,
                                          double lambda) {
  Eigen::MatrixXd a = xtx;
  a.diagonal().array() += lambda;
  const Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument(
        "fit_ridge: system is singular; use lambda > 0 to regularize");
  }
  Eigen::VectorXd w = llt.solve(xty);
  if (!w.allFinite()) {
    throw std::invalid_argument(
        "fit_ridge: solve produced non-finite weights; use lambda > 0 to regularize");
  }
  return w;
}

}  // namespace detail

inline Eigen::VectorXd fit_ridge(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                 double lambda) {
  if (x.rows() != y.size()) {
    throw std::invalid_argument("fit_ridge: X has " + std::to_string(x.rows()) + " rows, y has " +
                                std::to_string(y.size()));
  }
  if (lambda < 0.0) throw std::invalid_argument("fit_ridge: lambda must be >= 0");
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  xtx.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  xtx.triangularView<Eigen::Upper>() = xtx.transpose();
  return detail::solve_ridge_normal(xtx, x.transpose() * y, lambda);
}

// Average-rank transform (ties averaged), then Pearson on the ranks.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman: need at least 2 samples");
  auto constant = [](const std::vector<double>& v) {
    return *std::max_element(v.begin(), v.end()) == *std::min_element(v.begin(), v.end());
  };
  if (constant(x) || constant(y)) {
    throw std::invalid_argument("spearman: correlation with a constant input is undefined");
  }
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = rx[i] - mx;
    const double b = ry[i] - my;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  return sxy / std::sqrt(sxx * syy);
}

// Equal-error-rate threshold: candidates are midpoints of consecutive
// distinct sorted scores; pick the smallest |FPR - FNR|, break ties by higher
// accuracy, then by lower theta (the ascending scan keeps the first winner).
inline ThresholdModel tune_threshold(const std::vector<std::pair<double, int>>& scored) {
  std::vector<double> pos, neg, all;
  for (const auto& [score, label] : scored) {
    if (label != 0 && label != 1) {
      throw std::invalid_argument("tune_threshold: labels must be 0 or 1");
    }
    (label == 1 ? pos : neg).push_back(score);
    all.push_back(score);
  }
  if (pos.empty() || neg.empty()) {
    throw std::invalid_argument("tune_threshold: need scores from both classes");
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  std::vector<double> candidates;
  for (std::size_t i = 0; i + 1 < all.size(); ++i) {
    candidates.push_back(0.5 * (all[i] + all[i + 1]));
  }
  if (candidates.empty()) candidates.push_back(all.front());  // all scores equal

  double best_theta = candidates.front();
  double best_diff = std::numeric_limits<double>::infinity();
  double best_acc = -1.0;
  for (const double theta : candidates) {
    std::size_t fp = 0, fn = 0;
    for (double s : neg) fp += s > theta ? 1 : 0;
    for (double s : pos) fn += s <= theta ? 1 : 0;
    const double fpr = static_cast<double>(fp) / static_cast<double>(neg.size());
    const double fnr = static_cast<double>(fn) / static_cast<double>(pos.size());
    const double diff = std::abs(fpr - fnr);
    const double acc = static_cast<double>((pos.size() - fn) + (neg.size() - fp)) /
                       static_cast<double>(scored.size());
    if (diff < best_diff || (diff == best_diff && acc > best_acc)) {
      best_diff = diff;
      best_acc = acc;
      best_theta = theta;
    }
  }
  ThresholdModel m{best_theta};
  m.validate();
  return m;
}

inline Eigen::VectorXd reconstruct(const Decoder& d, const Eigen::MatrixXd& eeg) {
  if (eeg.rows() != d.n_channels) {
    throw std::invalid_argument("reconstruct: expected " + std::to_string(d.n_channels) +
                                " channels, got " + std::to_string(eeg.rows()));
  }
  return build_lag_matrix(eeg, d.n_lags) * d.w;
}

// Matched iff the correlation is strictly above the threshold.
inline int classify_pair(const Decoder& d, const ThresholdModel& m, const Eigen::MatrixXd& eeg,
                         const std::vector<double>& env) {
  const Eigen::VectorXd recon = reconstruct(d, eeg);
  const std::vector<double> rv(recon.data(), recon.data() + recon.size());
  return spearman(rv, env) > m.theta ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Recording plumbing
// ---------------------------------------------------------------------------

inline Eigen::MatrixXd eeg_range_matrix(const Recording& rec, std::int64_t lo, std::int64_t hi) {
  if (lo < 0 || hi <= lo || hi > rec.n_samples()) {
    throw std::out_of_range("eeg_range_matrix: bad range [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + ")");
  }
  const std::int64_t n = rec.n_samples();
  Eigen::MatrixXd m(rec.n_channels, hi - lo);
  for (std::uint32_t c = 0; c < rec.n_channels; ++c) {
    for (std::int64_t t = lo; t < hi; ++t) {
      m(c, t - lo) = rec.eeg[static_cast<std::size_t>(c) * static_cast<std::size_t>(n) +
                             static_cast<std::size_t>(t)];
    }
  }
  return m;
}

inline std::vector<double> env_range_vector(const Recording& rec, std::int64_t lo,
                                            std::int64_t hi) {
  if (lo < 0 || hi <= lo || hi > rec.n_samples()) {
    throw std::out_of_range("env_range_vector: bad range");
  }
  return {rec.envelope.begin() + lo, rec.envelope.begin() + hi};
}

struct BaselineConfig {
  int lags = 17;
  DatasetConfig dataset;
};

// Normal equations accumulated block-wise so the full design matrix of a long
// recording is never materialized. Blocks change nothing numerically: the sum
// order per coefficient is identical.
inline void accumulate_normal_eqs(const Eigen::MatrixXd& eeg, const std::vector<double>& env,
                                  int lags, Eigen::MatrixXd& xtx, Eigen::VectorXd& xty) {
  const Eigen::Index n = eeg.cols();
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(env.data(),
                                                              static_cast<Eigen::Index>(env.size()));
  if (y.size() != n) throw std::invalid_argument("accumulate_normal_eqs: length mismatch");
  const Eigen::Index block = 2048;
  for (Eigen::Index t0 = 0; t0 < n; t0 += block) {
    const Eigen::Index bn = std::min(block, n - t0);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(bn, eeg.rows() * lags);
    for (Eigen::Index ch = 0; ch < eeg.rows(); ++ch) {
      for (Eigen::Index tau = 0; tau < lags; ++tau) {
        const Eigen::Index avail = std::min(bn, n - t0 - tau);
        if (avail > 0) {
          x.col(ch * lags + tau).head(avail) = eeg.row(ch).segment(t0 + tau, avail);
        }
      }
    }
    xtx.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
    xty.noalias() += x.transpose() * y.segment(t0, bn);
  }
}

struct DecoderFit {
  Decoder decoder;
  double val_spearman = 0.0;  // of the winning lambda
};

// Fit on the train ranges of each recording, pick lambda from the log grid
// {1e-3..1e3} * trace(XtX)/d by Spearman between the reconstructed and true
// envelope over the validation ranges.
inline DecoderFit train_decoder(const std::vector<Recording>& recordings, int lags) {
  if (recordings.empty()) throw std::invalid_argument("train_decoder: no recordings");
  const int channels = static_cast<int>(recordings.front().n_channels);
  const Eigen::Index d = static_cast<Eigen::Index>(channels) * lags;
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(d);

  std::vector<double> val_true;
  std::vector<Eigen::MatrixXd> val_designs;
  for (const Recording& rec : recordings) {
    if (static_cast<int>(rec.n_channels) != channels) {
      throw std::invalid_argument("train_decoder: mixed channel counts");
    }
    const SplitSpec split = split_recording(rec.n_samples());
    for (const auto& [lo, hi] : split.train) {
      accumulate_normal_eqs(eeg_range_matrix(rec, lo, hi), env_range_vector(rec, lo, hi), lags,
                            xtx, xty);
    }
    const auto& [vlo, vhi] = split.validation;
    val_designs.push_back(build_lag_matrix(eeg_range_matrix(rec, vlo, vhi), lags));
    const auto env = env_range_vector(rec, vlo, vhi);
    val_true.insert(val_true.end(), env.begin(), env.end());
  }
  xtx.triangularView<Eigen::Upper>() = xtx.transpose();

  const double scale = xtx.trace() / static_cast<double>(d);
  DecoderFit best;
  best.val_spearman = -std::numeric_limits<double>::infinity();
  for (int e = -3; e <= 3; ++e) {
    const double lambda = scale * std::pow(10.0, e);
    const Eigen::VectorXd w = detail::solve_ridge_normal(xtx, xty, lambda);
    std::vector<double> recon;
    recon.reserve(val_true.size());
    for (const auto& x : val_designs) {
      const Eigen::VectorXd r = x * w;
      recon.insert(recon.end(), r.data(), r.data() + r.size());
    }
    const double score = spearman(recon, val_true);
    if (score > best.val_spearman) {
      best.val_spearman = score;
      best.decoder = Decoder{w, channels, lags, lambda};
    }
  }
  best.decoder.validate();
  return best;
}

struct BaselineSubjectResult {
  EvalReport report;
  Decoder decoder;
  ThresholdModel threshold;
  double val_spearman = 0.0;
};

// Full per-subject pipeline on the same segment protocol as the network
// (dataset seed = base + subject index), so the two models are compared on
// identical test segments.
inline std::vector<BaselineSubjectResult> run_baseline(const std::vector<Recording>& recordings,
                                                       const BaselineConfig& cfg,
                                                       std::uint64_t seed) {
  if (recordings.empty()) throw std::invalid_argument("run_baseline: no recordings");
  const std::vector<std::string> subjects = subject_order(recordings);
  std::vector<BaselineSubjectResult> out;
  for (std::size_t si = 0; si < subjects.size(); ++si) {
    std::vector<Recording> own;
    for (const Recording& r : recordings) {
      if (r.subject_id == subjects[si]) own.push_back(r);
    }
    Dataset ds = build_dataset(own, cfg.dataset, seed + si);

    BaselineSubjectResult res;
    const DecoderFit fit = train_decoder(ds.recordings, cfg.lags);
    res.decoder = fit.decoder;
    res.val_spearman = fit.val_spearman;

    std::vector<std::pair<double, int>> scored;
    for (const SegmentPair& seg : ds.validation) {
      const Recording& rec = ds.recordings[static_cast<std::size_t>(seg.rec)];
      const Eigen::VectorXd recon = reconstruct(
          res.decoder, eeg_range_matrix(rec, seg.eeg_start, seg.eeg_start + ds.window));
      const std::vector<double> rv(recon.data(), recon.data() + recon.size());
      const auto env = env_range_vector(rec, seg.env_start, seg.env_start + ds.window);
      scored.emplace_back(spearman(rv, env), seg.label);
    }
    res.threshold = tune_threshold(scored);

    std::int64_t correct = 0;
    for (const SegmentPair& seg : ds.test) {
      const Recording& rec = ds.recordings[static_cast<std::size_t>(seg.rec)];
      const int got = classify_pair(
          res.decoder, res.threshold,
          eeg_range_matrix(rec, seg.eeg_start, seg.eeg_start + ds.window),
          env_range_vector(rec, seg.env_start, seg.env_start + ds.window));
      correct += got == seg.label ? 1 : 0;
    }
    res.report.subject_id = subjects[si];
    res.report.n_segments = static_cast<std::int64_t>(ds.test.size());
    res.report.n_correct = correct;
    res.report.accuracy =
        static_cast<double>(correct) / static_cast<double>(ds.test.size());
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace envtrack
