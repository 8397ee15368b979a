#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "dmark/errors.hpp"
#include "dmark/keyed_partition.hpp"
#include "oracles.hpp"

using namespace dmark;

TEST(KeyedPartition, AllZeroInputHashesToZero) {
  // The finalizer maps 0 to 0, so two rounds of it do too.
  EXPECT_EQ(hash_context_raw(0, 0), 0u);
}

TEST(KeyedPartition, MatchesIndependentMix) {
  for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 0xFFFFFFFFFFFFFFFFULL, 0x123456789ABCDEFULL}) {
    for (TokenId prev : {0u, 1u, 7u, 4095u, 100000u}) {
      const std::uint64_t h = hash_context_raw(seed, prev);
      EXPECT_EQ(h, oracle::keyed_mix(seed, prev));
      EXPECT_EQ(score_bits(h, prev + 3), oracle::keyed_mix(h, prev + 3));
    }
  }
}

TEST(KeyedPartition, GoldenVectors) {
  const auto vectors = oracle::load_golden(DMARK_TEST_DATA_DIR "/golden_hash_vectors.txt");
  ASSERT_EQ(vectors.size(), 64u);
  for (const auto& g : vectors) {
    EXPECT_EQ(hash_context_raw(g.seed, g.prev), g.hash) << g.seed << " " << g.prev;
    EXPECT_EQ(score_bits(g.hash, g.prev), g.score) << g.seed << " " << g.prev;
  }
}

TEST(KeyedPartition, Seed42Prev7IsTheRecordedValue) {
  const WatermarkKey key(42, 0.5, 2.0);
  EXPECT_EQ(hash_context(key, 7, 8), 16324506874113706562ULL);
}

TEST(KeyedPartition, Deterministic) {
  const WatermarkKey key(9, 0.5, 2.0);
  EXPECT_EQ(hash_context(key, 5, 10), hash_context(key, 5, 10));
  EXPECT_EQ(uniform_score(123, 5), uniform_score(123, 5));
  EXPECT_EQ(is_green(key, 3, 4), is_green(key, 3, 4));
}

TEST(KeyedPartition, OutOfRangeContextThrows) {
  const WatermarkKey key(1, 0.5, 2.0);
  EXPECT_THROW(hash_context(key, 10, 10), std::out_of_range);
  EXPECT_THROW(green_set(key, 64, 64), std::out_of_range);
}

TEST(KeyedPartition, UniformScoreKolmogorovSmirnov) {
  for (std::uint64_t h : {std::uint64_t{0}, std::uint64_t{77}, hash_context_raw(42, 3)}) {
    std::vector<double> s;
    for (TokenId v = 0; v < 4096; ++v) s.push_back(uniform_score(h, v));
    std::sort(s.begin(), s.end());
    double ks = 0.0;
    const double n = static_cast<double>(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      ks = std::max(ks, std::max(static_cast<double>(i + 1) / n - s[i],
                                 s[i] - static_cast<double>(i) / n));
    }
    EXPECT_LT(ks, 0.03);
    const auto below = std::count_if(s.begin(), s.end(), [](double x) { return x < 0.25; });
    EXPECT_NEAR(static_cast<double>(below) / n, 0.25, 0.02);
    for (double x : s) {
      ASSERT_GE(x, 0.0);
      ASSERT_LT(x, 1.0);
    }
  }
}

TEST(KeyedPartition, GammaNearOneMakesEverythingGreen) {
  // 1 - 2^-60 rounds to 1.0 in double and is rejected; the largest double
  // below one is the closest admissible key.
  EXPECT_THROW(WatermarkKey(5, 1.0 - std::ldexp(1.0, -60), 1.0), ConfigError);
  const WatermarkKey key(5, std::nextafter(1.0, 0.0), 1.0);
  for (TokenId prev = 0; prev < 32; ++prev) {
    for (TokenId v = 0; v < 256; ++v) ASSERT_TRUE(is_green(key, prev, v));
  }
}

TEST(KeyedPartition, HalfGammaGreenCount) {
  const WatermarkKey key(42, 0.5, 2.0);
  for (TokenId prev : {0u, 17u, 4095u}) {
    const auto count = green_set(key, prev, 4096).count();
    EXPECT_GE(count, 1900u);
    EXPECT_LE(count, 2200u);
  }
}

TEST(KeyedPartition, GreenSetMatchesOracle) {
  for (double gamma : {0.25, 0.5, 0.75}) {
    const WatermarkKey key(1234, gamma, 1.0);
    for (TokenId prev : {0u, 9u, 300u}) {
      const TokenBitset set = green_set(key, prev, 1000);
      ASSERT_EQ(set.size(), 1000u);
      for (TokenId v = 0; v < 1000; ++v) {
        ASSERT_EQ(set.test(v), oracle::green(1234, prev, v, gamma));
        ASSERT_EQ(set.test(v), is_green(key, prev, v));
      }
      const double sigma = std::sqrt(1000 * gamma * (1 - gamma));
      EXPECT_NEAR(static_cast<double>(set.count()), 1000 * gamma, 3 * sigma);
    }
  }
}

TEST(KeyedPartition, MarginalGreenRate) {
  const WatermarkKey key(77, 0.25, 1.0);
  std::size_t total = 0;
  for (TokenId prev = 0; prev < 256; ++prev) total += green_set(key, prev, 512).count();
  EXPECT_NEAR(static_cast<double>(total) / (256.0 * 512.0), 0.25, 0.005);
}

TEST(KeyedPartition, RejectsInvalidKeys) {
  EXPECT_THROW(WatermarkKey(1, 0.0, 1.0), ConfigError);
  EXPECT_THROW(WatermarkKey(1, 1.0, 1.0), ConfigError);
  EXPECT_THROW(WatermarkKey(1, -0.1, 1.0), ConfigError);
  EXPECT_THROW(WatermarkKey(1, 0.5, -1.0), ConfigError);
  EXPECT_THROW(WatermarkKey(1, 0.5, std::nan("")), ConfigError);
  EXPECT_THROW(WatermarkKey(1, 0.5, 1.0, 2), ConfigError);
}

TEST(KeyedPartition, KeySeparation) {
  const std::size_t v = 4096;
  const double sigma = std::sqrt(v * 0.25);
  for (int bit : {0, 17, 63}) {
    const WatermarkKey a(0xABCDEF, 0.5, 2.0);
    const WatermarkKey b(0xABCDEF ^ (std::uint64_t{1} << bit), 0.5, 2.0);
    const auto d = hamming_distance(green_set(a, 11, v), green_set(b, 11, v));
    EXPECT_NEAR(static_cast<double>(d), v / 2.0, 3 * sigma);
  }
}

TEST(KeyedPartition, FingerprintIgnoresDelta) {
  const WatermarkKey a(3, 0.5, 1.0);
  EXPECT_EQ(a.fingerprint(), a.with_delta(7.0).fingerprint());
  EXPECT_NE(a.fingerprint(), WatermarkKey(4, 0.5, 1.0).fingerprint());
  EXPECT_NE(a.fingerprint(), WatermarkKey(3, 0.25, 1.0).fingerprint());
  EXPECT_EQ(fingerprint_hex(0xABCULL), "0000000000000abc");
}

TEST(KeyedPartition, KeyFileRoundTrip) {
  const WatermarkKey key(0xFFFFFFFFFFFFFFF0ULL, 0.3, 2.5);
  std::stringstream ss;
  write_key(ss, key);
  EXPECT_EQ(read_key(ss), key);
}
