#include <gtest/gtest.h>

#include <random>
#include <set>

#include "gcd/class_count.hpp"
#include "oracles.hpp"

namespace {

struct Counted {
  std::function<double(std::size_t)> f;
  std::vector<std::size_t> calls;

  std::function<double(std::size_t)> fn() {
    return [this](std::size_t k) {
      calls.push_back(k);
      return f(k);
    };
  }
};

void expect_trace_contract(const gcd::KScoreTrace& t, const std::vector<std::size_t>& calls, std::size_t lo,
                           std::size_t hi, std::size_t max_evals) {
  EXPECT_LE(calls.size(), max_evals);
  EXPECT_EQ(calls.size(), t.evaluations.size());
  std::set<std::size_t> distinct(calls.begin(), calls.end());
  EXPECT_EQ(distinct.size(), calls.size()) << "an integer was evaluated twice";
  for (std::size_t k : calls) {
    EXPECT_GE(k, lo);
    EXPECT_LE(k, hi);
  }
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [k, v] : t.evaluations) best = std::max(best, v);
  EXPECT_EQ(t.best_score, best);
}

gcd::GcdDataset separated_fully_labelled(std::size_t classes, std::uint64_t seed) {
  const auto b = gcd::make_blobs(classes, 30, 8, 30.0, 1.0, seed);
  std::vector<std::optional<gcd::Label>> visible(b.labels.begin(), b.labels.end());
  return gcd::GcdDataset(b.features, visible, b.labels);
}

}  // namespace

TEST(BrentMaximize, ExactQuadratic) {
  Counted c{[](std::size_t k) { return -std::pow(static_cast<double>(k) - 37.0, 2); }, {}};
  const auto t = gcd::brent_maximize(c.fn(), 2, 100, 25);
  EXPECT_EQ(t.best_k, 37u);
  EXPECT_EQ(t.best_score, 0.0);
  expect_trace_contract(t, c.calls, 2, 100, 25);
}

TEST(BrentMaximize, ConstantReturnsLowerBound) {
  Counted c{[](std::size_t) { return 0.5; }, {}};
  const auto t = gcd::brent_maximize(c.fn(), 7, 90, 10);
  EXPECT_EQ(t.best_k, 7u);
  expect_trace_contract(t, c.calls, 7, 90, 10);
}

TEST(BrentMaximize, PiecewiseConstantBell) {
  auto bell = [](std::size_t k) {
    const double d = std::abs(static_cast<double>(k) - 20.0);
    return std::floor(10.0 - d / 3.0) + (k == 20 ? 0.5 : 0.0);
  };
  Counted c{bell, {}};
  const auto t = gcd::brent_maximize(c.fn(), 5, 200, 25);
  EXPECT_EQ(t.best_k, oracle::scan_argmax(bell, 5, 200));
  EXPECT_EQ(t.best_k, 20u);
  expect_trace_contract(t, c.calls, 5, 200, 25);
}

TEST(BrentMaximize, MatchesScanOnRandomUnimodalSequences) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t lo = std::uniform_int_distribution<std::size_t>(1, 20)(rng);
    const std::size_t hi = lo + std::uniform_int_distribution<std::size_t>(1, 150)(rng);
    const auto seq = oracle::random_unimodal(lo, hi, rng);
    auto f = [&](std::size_t k) { return seq.at(k); };
    Counted c{f, {}};
    const std::size_t max_evals = 40;
    const auto t = gcd::brent_maximize(c.fn(), lo, hi, max_evals);
    EXPECT_EQ(t.best_k, oracle::scan_argmax(f, lo, hi)) << "range [" << lo << "," << hi << "]";
    expect_trace_contract(t, c.calls, lo, hi, max_evals);
  }
}

TEST(BrentMaximize, DegenerateRangesAndBudget) {
  Counted one{[](std::size_t) { return 1.0; }, {}};
  const auto t = gcd::brent_maximize(one.fn(), 9, 9, 25);
  EXPECT_EQ(t.best_k, 9u);
  EXPECT_EQ(one.calls.size(), 1u);

  Counted two{[](std::size_t k) { return static_cast<double>(k); }, {}};
  EXPECT_EQ(gcd::brent_maximize(two.fn(), 3, 4, 3).best_k, 4u);

  Counted tight{[](std::size_t k) { return -std::abs(static_cast<double>(k) - 70.0); }, {}};
  const auto b = gcd::brent_maximize(tight.fn(), 1, 100, 3);
  expect_trace_contract(b, tight.calls, 1, 100, 3);

  EXPECT_THROW(gcd::brent_maximize(two.fn(), 5, 4, 10), gcd::Error);
  EXPECT_THROW(gcd::brent_maximize(two.fn(), 1, 10, 2), gcd::Error);
}

TEST(ScoreK, PerfectBlobsScoreOne) {
  const auto d = separated_fully_labelled(4, 1);
  EXPECT_EQ(gcd::score_k(d, 4, 3, 0), 1.0);
}

TEST(ScoreK, SingleClusterIsBoundedByLargestShare) {
  const auto b = gcd::make_blobs(3, 10, 2, 10.0, 1.0, 0);
  std::vector<std::optional<gcd::Label>> visible(b.labels.size());
  for (std::size_t i = 0; i < 25; ++i) visible[i] = b.labels[i];  // 10, 10, 5 labelled
  const gcd::GcdDataset d(b.features, visible);
  EXPECT_LE(gcd::score_k(d, 1, 2, 0), 10.0 / 25.0);
}

TEST(ScoreK, Deterministic) {
  const auto b = gcd::make_blobs(6, 20, 4, 3.0, 1.0, 5);
  gcd::SplitSpec spec;
  const auto d = gcd::GcdDataset::from_split(b.features, gcd::generate_split(b.labels, spec), b.labels);
  EXPECT_EQ(gcd::score_k(d, 7, 3, 99), gcd::score_k(d, 7, 3, 99));
  const double s = gcd::score_k(d, 7, 3, 99);
  EXPECT_GE(s, 0.0);
  EXPECT_LE(s, 1.0);
}

TEST(EstimateK, FullyLabelledSeparatedDataFindsTheClassCount) {
  const auto d = separated_fully_labelled(6, 2);
  gcd::KSearchConfig cfg;
  cfg.k_min = 6;
  cfg.k_max = 40;
  const auto t = gcd::estimate_k(d, cfg);
  EXPECT_EQ(t.best_k, 6u);
  EXPECT_EQ(t.best_score, 1.0);
  for (const auto& [k, v] : t.evaluations) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    if (k != 6) {
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(EstimateK, SingleEvaluationWhenRangeIsAPoint) {
  const auto d = separated_fully_labelled(3, 4);
  gcd::KSearchConfig cfg;
  cfg.k_min = cfg.k_max = 5;
  const auto t = gcd::estimate_k(d, cfg);
  EXPECT_EQ(t.evaluations.size(), 1u);
  EXPECT_EQ(t.best_k, 5u);
}

TEST(EstimateK, ConfigErrors) {
  const auto d = separated_fully_labelled(3, 4);
  gcd::KSearchConfig cfg;
  cfg.k_min = 2;  // below |Y_L| = 3
  cfg.k_max = 10;
  EXPECT_THROW(gcd::estimate_k(d, cfg), gcd::Error);
  cfg.k_min = 3;
  cfg.k_max = 1000;  // more than the 90 points
  EXPECT_THROW(gcd::estimate_k(d, cfg), gcd::Error);
  const gcd::GcdDataset blind(d.features(), std::vector<std::optional<gcd::Label>>(d.size()));
  cfg.k_max = 10;
  EXPECT_THROW(gcd::estimate_k(blind, cfg), gcd::Error);
}

TEST(KScoreTrace, Serialisation) {
  gcd::KScoreTrace t;
  t.evaluations = {{12, 0.5}, {3, 0.25}, {7, 0.75}};
  t.best_k = 7;
  t.best_score = 0.75;
  EXPECT_EQ(gcd::trace_to_csv(t), "k,score\n3,0.25\n7,0.75\n12,0.5\n");
  const auto j = gcd::trace_summary(t);
  EXPECT_EQ(j["best_k"], 7);
  EXPECT_EQ(j["evals"].size(), 3u);
  EXPECT_EQ(j["evals"][0]["k"], 12);
}
