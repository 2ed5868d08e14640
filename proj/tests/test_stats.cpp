#include "envtrack/stats.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "envtrack/rng.hpp"

using namespace envtrack;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string temp_path(const std::string& stem) {
  return testing::TempDir() + "/" + stem;
}

// Literal enumeration of every sign assignment, the definition the fast
// subset-sum table must reproduce. Doubled ranks keep everything integral.
double brute_force_two_sided_p(const std::vector<double>& diffs) {
  std::vector<double> nz;
  for (double d : diffs) {
    if (d != 0.0) nz.push_back(d);
  }
  const std::size_t n = nz.size();
  std::vector<double> mags(n);
  for (std::size_t i = 0; i < n; ++i) mags[i] = std::abs(nz[i]);
  const std::vector<double> ranks = average_ranks(mags);
  std::vector<long long> r2(n);
  long long w_pos2 = 0, w_neg2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    r2[i] = std::llround(2.0 * ranks[i]);
    (nz[i] > 0.0 ? w_pos2 : w_neg2) += r2[i];
  }
  const long long w2 = std::min(w_pos2, w_neg2);
  std::uint64_t count = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    long long s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if ((mask >> i) & 1u) s += r2[i];
    }
    if (s <= w2) ++count;
  }
  const double tail = static_cast<double>(count) / std::ldexp(1.0, static_cast<int>(n));
  return std::min(1.0, 2.0 * tail);
}

double normal_two_sided_p(double w, double n) {
  const double mu = n * (n + 1.0) / 4.0;
  const double sigma = std::sqrt(n * (n + 1.0) * (2.0 * n + 1.0) / 24.0);
  const double z = (w - mu + 0.5) / sigma;
  return std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
}

}  // namespace

TEST(Accuracy, PinnedFractions) {
  EXPECT_DOUBLE_EQ(accuracy({1, 0, 1}, {1, 0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(accuracy({1, 0, 1}, {0, 1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(accuracy({1, 1, 0, 0}, {1, 1, 0, 1}), 0.75);
}

TEST(Accuracy, Rejections) {
  EXPECT_THROW(accuracy({}, {}), std::invalid_argument);
  EXPECT_THROW(accuracy({1}, {1, 0}), std::invalid_argument);
}

TEST(AverageRanks, TiesGetAverageRank) {
  EXPECT_EQ(average_ranks({10.0, 20.0, 20.0, 30.0}),
            (std::vector<double>{1.0, 2.5, 2.5, 4.0}));
  EXPECT_EQ(average_ranks({3.0, 1.0, 2.0}), (std::vector<double>{3.0, 1.0, 2.0}));
  EXPECT_EQ(average_ranks({5.0, 5.0, 5.0}), (std::vector<double>{2.0, 2.0, 2.0}));
}

TEST(Wilcoxon, PinnedThreePositiveDiffs) {
  const WilcoxonResult r = wilcoxon_signed_rank({1.0, 2.0, 3.0}, {0.0, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(r.W, 0.0);
  EXPECT_DOUBLE_EQ(r.p, 0.25);
  EXPECT_EQ(r.n, 3);
  EXPECT_FALSE(r.used_normal_approx);
}

TEST(Wilcoxon, PinnedTiedSymmetricDiffs) {
  const WilcoxonResult r = wilcoxon_signed_rank({1.0, 0.0}, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(r.W, 1.5);
  EXPECT_DOUBLE_EQ(r.p, 1.0);
  EXPECT_EQ(r.n, 2);
}

TEST(Wilcoxon, ZeroDifferencesAreDropped) {
  const WilcoxonResult r =
      wilcoxon_signed_rank({5.0, 2.0, 3.0, 4.0}, {4.0, 2.0, 3.0, 4.0});
  EXPECT_EQ(r.n, 1);
  EXPECT_DOUBLE_EQ(r.W, 0.0);
  EXPECT_DOUBLE_EQ(r.p, 1.0);  // single pair: both tails have mass 1/2
}

TEST(Wilcoxon, Rejections) {
  EXPECT_THROW(wilcoxon_signed_rank({1.0}, {1.0, 2.0}), std::invalid_argument);
  EXPECT_THROW(wilcoxon_signed_rank({}, {}), std::invalid_argument);
  EXPECT_THROW(wilcoxon_signed_rank({1.0, 2.0}, {1.0, 2.0}), std::invalid_argument);
  const double nan = std::nan("");
  EXPECT_THROW(wilcoxon_signed_rank({nan, 2.0}, {0.0, 0.0}), std::invalid_argument);
}

TEST(Wilcoxon, SwapSymmetry) {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    Rng rng(seed);
    std::vector<double> a(9), b(9);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = static_cast<double>(rng.uniform_int(5));
      b[i] = static_cast<double>(rng.uniform_int(5));
    }
    bool all_zero = true;
    for (std::size_t i = 0; i < a.size(); ++i) all_zero = all_zero && a[i] == b[i];
    if (all_zero) continue;
    const WilcoxonResult ab = wilcoxon_signed_rank(a, b);
    const WilcoxonResult ba = wilcoxon_signed_rank(b, a);
    EXPECT_DOUBLE_EQ(ab.W, ba.W) << "seed " << seed;
    EXPECT_DOUBLE_EQ(ab.p, ba.p) << "seed " << seed;
    EXPECT_EQ(ab.n, ba.n) << "seed " << seed;
  }
}

TEST(Wilcoxon, ExactBranchMatchesBruteForce) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform_int(12));
    std::vector<double> diffs(n);
    bool any_nonzero = false;
    for (std::size_t i = 0; i < n; ++i) {
      diffs[i] = static_cast<double>(rng.uniform_int(7)) - 3.0;  // ties and zeros on purpose
      any_nonzero = any_nonzero || diffs[i] != 0.0;
    }
    if (!any_nonzero) diffs[0] = 1.0;
    const std::vector<double> zeros(n, 0.0);
    const WilcoxonResult r = wilcoxon_signed_rank(diffs, zeros);
    EXPECT_DOUBLE_EQ(r.p, brute_force_two_sided_p(diffs)) << "seed " << seed << " n " << n;
    EXPECT_FALSE(r.used_normal_approx);
  }
}

TEST(Wilcoxon, NormalApproxTracksExactAtModerateN) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    std::vector<double> a(15), b(15);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
    }
    const WilcoxonResult r = wilcoxon_signed_rank(a, b);
    ASSERT_EQ(r.n, 15);
    ASSERT_FALSE(r.used_normal_approx);
    EXPECT_NEAR(r.p, normal_two_sided_p(r.W, 15.0), 0.02) << "seed " << seed;
  }
}

TEST(Wilcoxon, LargeNUsesNormalApprox) {
  std::vector<double> a(25), b(25, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.1 * static_cast<double>(i + 1);
  const WilcoxonResult r = wilcoxon_signed_rank(a, b);
  EXPECT_TRUE(r.used_normal_approx);
  EXPECT_EQ(r.n, 25);
  EXPECT_DOUBLE_EQ(r.W, 0.0);
  const double sigma = std::sqrt(25.0 * 26.0 * 51.0 / 24.0);
  EXPECT_NEAR(r.z, (0.0 - 162.5 + 0.5) / sigma, 1e-12);
  EXPECT_NEAR(r.p, normal_two_sided_p(0.0, 25.0), 1e-15);
  EXPECT_LT(r.p, 1e-4);
}

TEST(Binomial, PinnedTails) {
  EXPECT_NEAR(binomial_above_chance(10, 10), 1.0 / 1024.0, 1e-15);
  EXPECT_NEAR(binomial_above_chance(5, 10), 0.623046875, 1e-12);
  EXPECT_DOUBLE_EQ(binomial_above_chance(0, 10), 1.0);
  EXPECT_NEAR(binomial_above_chance(1, 1), 0.5, 1e-15);
}

TEST(Binomial, MonotoneDecreasingInCorrect) {
  const int total = 137;
  double prev = binomial_above_chance(0, total);
  EXPECT_DOUBLE_EQ(prev, 1.0);
  for (int c = 1; c <= total; ++c) {
    const double p = binomial_above_chance(c, total);
    EXPECT_GE(prev, p) << "correct " << c;
    EXPECT_GT(p, 0.0);
    EXPECT_LE(p, 1.0);
    prev = p;
  }
}

TEST(Binomial, Rejections) {
  EXPECT_THROW(binomial_above_chance(0, 0), std::invalid_argument);
  EXPECT_THROW(binomial_above_chance(11, 10), std::invalid_argument);
  EXPECT_THROW(binomial_above_chance(-1, 10), std::invalid_argument);
}

TEST(Summarize, PinnedAggregates) {
  const Summary one = summarize({0.5});
  EXPECT_DOUBLE_EQ(one.mean, 0.5);
  EXPECT_DOUBLE_EQ(one.median, 0.5);
  EXPECT_DOUBLE_EQ(one.q1, 0.5);
  EXPECT_DOUBLE_EQ(one.q3, 0.5);
  EXPECT_DOUBLE_EQ(one.min, 0.5);
  EXPECT_DOUBLE_EQ(one.max, 0.5);

  const Summary two = summarize({0.0, 1.0});
  EXPECT_DOUBLE_EQ(two.mean, 0.5);
  EXPECT_DOUBLE_EQ(two.median, 0.5);

  const Summary four = summarize({4.0, 1.0, 3.0, 2.0});  // order must not matter
  EXPECT_EQ(four.n, 4u);
  EXPECT_DOUBLE_EQ(four.median, 2.5);
  EXPECT_DOUBLE_EQ(four.q1, 1.75);
  EXPECT_DOUBLE_EQ(four.q3, 3.25);
  EXPECT_DOUBLE_EQ(four.min, 1.0);
  EXPECT_DOUBLE_EQ(four.max, 4.0);
}

TEST(Summarize, EmptyRejected) {
  EXPECT_THROW(summarize({}), std::invalid_argument);
}

TEST(ComparisonJson, ExactBytes) {
  WilcoxonResult r;
  r.W = 9.0;
  r.p = 0.001953125;  // 2^-9, prints without noise
  r.n = 12;
  const std::string path = temp_path("comparison.json");
  write_comparison_json(r, path);
  EXPECT_EQ(slurp(path), "{\"test\":\"wilcoxon\",\"W\":9,\"p\":0.001953125,\"n\":12}\n");
}
