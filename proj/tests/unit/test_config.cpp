#include <gtest/gtest.h>

#include <sstream>

#include "dmark/config.hpp"
#include "dmark/errors.hpp"

using namespace dmark;

TEST(Config, DefaultsValidate) {
  const RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.key().gamma(), 0.5);
  EXPECT_EQ(cfg.schedule().tokens_per_step(), 2u);
}

TEST(Config, WriteReadRoundTrip) {
  RunConfig cfg;
  cfg.vocab_size = 777;
  cfg.gamma = 0.3;
  cfg.delta = 0.1 + 0.2;
  cfg.strategy = Strategy::kBidirectional;
  cfg.attack = AttackKind::kSwap;
  cfg.attack_rate = 0.15;
  cfg.sweep_deltas = {0.5, 1.0 / 3.0};
  cfg.sweep_strategies = {Strategy::kDirect, Strategy::kPredictive};
  cfg.output_dir = "some dir/out";
  std::stringstream ss;
  write_config(ss, cfg);
  EXPECT_EQ(read_config(ss), cfg);
}

TEST(Config, FileFormIgnoresCommentsAndBlankLines) {
  std::stringstream ss("# comment\n\n  gamma = 0.25 \nstrategy=direct\n");
  const RunConfig cfg = read_config(ss);
  EXPECT_EQ(cfg.gamma, 0.25);
  EXPECT_EQ(cfg.strategy, Strategy::kDirect);
}

TEST(Config, Rejections) {
  RunConfig cfg;
  EXPECT_THROW(set_config_value(cfg, "gama", "0.5"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "samples", "-3"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "delta", "lots"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "strategy", "random"), ConfigError);
  std::stringstream missing_eq("gamma 0.5\n");
  EXPECT_THROW(read_config(missing_eq), ConfigError);

  RunConfig bad;
  bad.gamma = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.block_size = 30;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.sweep_gammas.clear();
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/dmark.cfg"), ConfigError);
}

TEST(Config, FormatDoubleRoundTrips) {
  for (double x : {0.1, 1.0 / 3.0, 2.0, 1e-300, 0.30000000000000004}) {
    EXPECT_EQ(std::stod(format_double(x)), x);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}
