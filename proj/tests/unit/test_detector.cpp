#include <gtest/gtest.h>

#include <cmath>

#include "dmark/detector.hpp"
#include "dmark/errors.hpp"
#include "dmark/rng.hpp"
#include "oracles.hpp"

using namespace dmark;

namespace {

// Tokens where each position is green with probability `p_green` given the
// previous token.
std::vector<TokenId> synthetic(const GreenMatrix& m, std::size_t n, double p_green, Rng& rng) {
  const std::size_t vocab = m.vocab_size();
  std::vector<TokenId> out{static_cast<TokenId>(rng.below(vocab))};
  while (out.size() < n) {
    const bool want = rng.uniform() < p_green;
    TokenId v;
    do {
      v = static_cast<TokenId>(rng.below(vocab));
    } while (m.contains(out.back(), v) != want);
    out.push_back(v);
  }
  return out;
}

}  // namespace

TEST(Detector, ZScoreArithmetic) {
  EXPECT_DOUBLE_EQ(z_score(100, 200, 0.5), 0.0);
  EXPECT_NEAR(z_score(129, 200, 0.5), 29.0 / std::sqrt(50.0), 1e-12);
  EXPECT_NEAR(z_score(129, 200, 0.5), 4.1012, 1e-4);
  EXPECT_NEAR(z_score(50, 100, 0.25), 25.0 / std::sqrt(18.75), 1e-12);
  EXPECT_THROW(z_score(0, 0, 0.5), DataError);
}

TEST(Detector, ScoresAgainstForwardLists) {
  const WatermarkKey key(3, 0.5, 2.0);
  const GreenMatrix m = GreenMatrix::build(key, 64);
  const std::vector<TokenId> tokens{5, 9, 9, 63, 0, 17};
  const DetectionReport r = score(key, m, tokens);
  EXPECT_EQ(r.n, 5u);
  std::size_t g = 0;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const bool expect = oracle::green(3, tokens[i - 1], tokens[i], 0.5);
    EXPECT_EQ(r.green_flags[i], expect);
    g += expect ? 1 : 0;
  }
  EXPECT_FALSE(r.green_flags[0]);
  EXPECT_EQ(r.green_count, g);
  EXPECT_DOUBLE_EQ(r.z, z_score(g, 5, 0.5));

  // With a prompt tail the first token is scored too.
  const DetectionReport t = score(key, m, tokens, TokenId{40});
  EXPECT_EQ(t.n, 6u);
  EXPECT_EQ(t.green_flags[0], oracle::green(3, 40, 5, 0.5));
}

TEST(Detector, DegenerateInputs) {
  const WatermarkKey key(3, 0.5, 2.0);
  const GreenMatrix m = GreenMatrix::build(key, 64);
  EXPECT_THROW(score(key, m, std::vector<TokenId>{}), DataError);
  EXPECT_THROW(score(key, m, std::vector<TokenId>{4}), DataError);
  EXPECT_EQ(score(key, m, std::vector<TokenId>{4}, TokenId{1}).n, 1u);
  EXPECT_THROW(score(WatermarkKey(4, 0.5, 2.0), m, std::vector<TokenId>{1, 2}), DataError);
  EXPECT_THROW(score(key, m, std::vector<TokenId>{1, 64}), std::out_of_range);
}

TEST(Detector, NullDistributionIsStandardNormal) {
  for (double gamma : {0.25, 0.5}) {
    const WatermarkKey key(101, gamma, 2.0);
    const GreenMatrix m = GreenMatrix::build(key, 4096);
    Rng rng(8);
    std::vector<double> zs;
    for (int s = 0; s < 1000; ++s) {
      std::vector<TokenId> toks(200);
      for (auto& t : toks) t = static_cast<TokenId>(rng.below(4096));
      zs.push_back(score(key, m, toks).z);
    }
    EXPECT_NEAR(oracle::mean(zs), 0.0, 0.1);
    EXPECT_NEAR(oracle::stddev(zs), 1.0, 0.1);
  }
}

TEST(Detector, CalibrationOrderStatistic) {
  std::vector<double> null;
  for (int i = 500; i >= 1; --i) null.push_back(i);  // 1..500, reversed
  const Calibration cal = calibrate(null, std::vector<double>{0.01, 0.5});
  // ceil(0.99 * 500) = 495th smallest.
  EXPECT_EQ(cal.threshold(0.01), 495.0);
  EXPECT_EQ(cal.threshold(0.5), 250.0);
  EXPECT_TRUE(cal.warnings.empty());
  EXPECT_LE(cal.achieved_fpr(null, 0.01), 0.01);
  EXPECT_DOUBLE_EQ(cal.achieved_fpr(null, 0.01), 5.0 / 500.0);
  EXPECT_THROW(cal.threshold(0.05), DataError);
}

TEST(Detector, AchievedFprNeverExceedsTarget) {
  Rng rng(4);
  for (std::size_t n : {37u, 100u, 999u}) {
    std::vector<double> null(n);
    for (double& z : null) z = rng.normal();
    const Calibration cal = calibrate(null);
    for (double f : kDefaultFprs) EXPECT_LE(cal.achieved_fpr(null, f), f);
  }
}

TEST(Detector, WarnsWhenTooFewNullSamples) {
  const std::vector<double> null{0.1, 0.2, 0.3, 0.4, 0.5};
  const Calibration cal = calibrate(null, std::vector<double>{0.01, 0.5});
  ASSERT_EQ(cal.warnings.size(), 1u);
  EXPECT_NE(cal.warnings[0].find("0.010000"), std::string::npos);
  EXPECT_THROW(calibrate(std::vector<double>{}), DataError);
  EXPECT_THROW(calibrate(null, std::vector<double>{1.0}), ConfigError);
}

TEST(Detector, EvaluateNullAsWatermarkedGivesAtMostFpr) {
  Rng rng(12);
  std::vector<double> null(1000);
  for (double& z : null) z = rng.normal();
  const Calibration cal = calibrate(null);
  const TprTable tpr = evaluate(null, cal);
  for (double f : kDefaultFprs) EXPECT_LE(tpr.at(f), f);
  std::vector<double> high(10, 100.0);
  for (const auto& [f, t] : evaluate(high, cal)) EXPECT_EQ(t, 1.0);
}

TEST(Detector, ThresholdVerdict) {
  DetectionReport r;
  r.z = 3.0;
  apply_threshold(r, 2.5);
  EXPECT_TRUE(r.is_watermarked);
  apply_threshold(r, 3.0);
  EXPECT_FALSE(r.is_watermarked);
  EXPECT_EQ(r.threshold, 3.0);
}

TEST(Detector, MeanZGrowsWithSquareRootOfLength) {
  const WatermarkKey key(55, 0.5, 2.0);
  const GreenMatrix m = GreenMatrix::build(key, 1024);
  Rng rng(3);
  auto mean_z = [&](std::size_t n) {
    std::vector<double> zs;
    for (int s = 0; s < 300; ++s) zs.push_back(score(key, m, synthetic(m, n, 0.65, rng)).z);
    return oracle::mean(zs);
  };
  const double ratio = mean_z(400) / mean_z(100);
  EXPECT_NEAR(ratio, 2.0, 0.15);
}
