#pragma once

// Accuracy aggregation and paired significance testing over per-subject
// results. Pure functions; no state, no I/O except the JSON writer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "envtrack/format.hpp"

namespace envtrack {

// 1-based ranks with ties replaced by their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average rank
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double accuracy(const std::vector<int>& labels, const std::vector<int>& predictions) {
  if (labels.empty()) throw std::invalid_argument("accuracy: empty input");
  if (labels.size() != predictions.size()) {
    throw std::invalid_argument("accuracy: length mismatch");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == predictions[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

struct WilcoxonResult {
  double W = 0.0;  // min(sum of positive ranks, sum of negative ranks)
  double p = 1.0;  // two-sided
  int n = 0;       // pairs left after dropping zero differences
  double z = 0.0;  // continuity-corrected normal statistic, informative only for small n
  bool used_normal_approx = false;
};

namespace detail {

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace detail

// Wilcoxon signed-rank test on paired scores. Zero differences are dropped,
// tied magnitudes get average ranks, and the reported statistic is the
// smaller of the two signed rank sums. For n <= 20 the two-sided p comes
// from the exact null distribution: a subset-sum table over doubled ranks
// (doubling makes tied half-ranks integral) counts all 2^n sign assignments
// by their positive-rank sum. Above that, normal approximation with
// continuity correction and the usual tie correction on the variance.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                           const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: length mismatch");
  if (a.empty()) throw std::invalid_argument("wilcoxon: empty input");
  std::vector<double> diffs;
  diffs.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (!std::isfinite(d)) throw std::invalid_argument("wilcoxon: non-finite difference");
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty()) {
    throw std::invalid_argument("wilcoxon: all differences are zero, no information to rank");
  }

  const std::size_t n = diffs.size();
  std::vector<double> mags(n);
  for (std::size_t i = 0; i < n; ++i) mags[i] = std::abs(diffs[i]);
  const std::vector<double> ranks = average_ranks(mags);

  double w_pos = 0.0, w_neg = 0.0;
  for (std::size_t i = 0; i < n; ++i) (diffs[i] > 0.0 ? w_pos : w_neg) += ranks[i];
  const double w = std::min(w_pos, w_neg);

  // Tie-corrected variance of the positive-rank sum under the null.
  const double nd = static_cast<double>(n);
  const double mu = nd * (nd + 1.0) / 4.0;
  double tie_term = 0.0;
  {
    std::vector<double> sorted_mags = mags;
    std::sort(sorted_mags.begin(), sorted_mags.end());
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && sorted_mags[j + 1] == sorted_mags[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double sigma = std::sqrt(nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0);

  WilcoxonResult res;
  res.W = w;
  res.n = static_cast<int>(n);
  res.z = (w - mu + 0.5) / sigma;

  if (n <= 20) {
    // Average ranks are integers or half-integers, exact in floating point,
    // so doubled ranks round to exact integers.
    std::vector<long long> r2(n);
    long long total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      r2[i] = std::llround(2.0 * ranks[i]);
      total2 += r2[i];
    }
    std::vector<std::uint64_t> dist(static_cast<std::size_t>(total2) + 1, 0);
    dist[0] = 1;
    long long reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      reach += r2[i];
      for (long long v = reach; v >= r2[i]; --v) {
        dist[static_cast<std::size_t>(v)] += dist[static_cast<std::size_t>(v - r2[i])];
      }
    }
    const long long w2 = std::llround(2.0 * w);
    std::uint64_t at_or_below = 0;
    for (long long v = 0; v <= w2; ++v) at_or_below += dist[static_cast<std::size_t>(v)];
    const double tail =
        static_cast<double>(at_or_below) / std::ldexp(1.0, static_cast<int>(n));
    res.p = std::min(1.0, 2.0 * tail);
    res.used_normal_approx = false;
  } else {
    res.p = std::min(1.0, 2.0 * detail::std_normal_cdf(res.z));
    res.used_normal_approx = true;
  }
  return res;
}

// One-sided P(X >= correct) under Binomial(total, 1/2). Terms are summed from
// k = total downward, so p(correct) extends p(correct + 1) by one nonnegative
// add and the tail is monotone in `correct` even in floating point.
inline double binomial_above_chance(int correct, int total) {
  if (total < 1) throw std::invalid_argument("binomial_above_chance: total must be >= 1");
  if (correct < 0 || correct > total) {
    throw std::invalid_argument("binomial_above_chance: correct must be in [0, total]");
  }
  if (correct == 0) return 1.0;
  const double log_half_pow = -static_cast<double>(total) * std::log(2.0);
  const double lg_total = std::lgamma(static_cast<double>(total) + 1.0);
  double p = 0.0;
  for (int k = total; k >= correct; --k) {
    const double log_term = lg_total - std::lgamma(static_cast<double>(k) + 1.0) -
                            std::lgamma(static_cast<double>(total - k) + 1.0) + log_half_pow;
    p += std::exp(log_term);
  }
  return std::min(1.0, p);
}

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double min = 0.0;
  double max = 0.0;
};

namespace detail {

// Linear-interpolation quantile on a sorted vector (the numpy default).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double h = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace detail

inline Summary summarize(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("summarize: empty input");
  std::vector<double> sorted = xs;
  std::sort(sorted.begin(), sorted.end());
  Summary s;
  s.n = xs.size();
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  s.median = detail::quantile_sorted(sorted, 0.5);
  s.q1 = detail::quantile_sorted(sorted, 0.25);
  s.q3 = detail::quantile_sorted(sorted, 0.75);
  s.min = sorted.front();
  s.max = sorted.back();
  return s;
}

inline void write_comparison_json(const WilcoxonResult& r, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "{\"test\":\"wilcoxon\",\"W\":" << fmt_double(r.W) << ",\"p\":" << fmt_double(r.p)
    << ",\"n\":" << r.n << "}\n";
  if (!f.good()) throw std::runtime_error("short write to " + path);
}

}  // namespace envtrack
