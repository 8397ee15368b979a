#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "dmark/errors.hpp"
#include "dmark/green_matrix.hpp"
#include "dmark/strategies.hpp"
#include "dmark/toy_diffusion.hpp"

using namespace dmark;

namespace {

// |V| = 8. Each token p strongly prefers p + 1 (mod 8); token 7 is a common
// unigram choice.
ToyLM hand_model() {
  std::vector<double> unigram(8, 0.0);
  unigram[7] = 3.0;
  std::vector<double> bigram(64, 0.0);
  for (std::size_t p = 0; p < 8; ++p) bigram[p * 8 + (p + 1) % 8] = 4.0;
  bigram[7 * 8 + 0] = 3.5;
  return ToyLM(8, 0.5, unigram, bigram);
}

ToyModelSpec small_spec(std::uint64_t seed) {
  ToyModelSpec s;
  s.vocab_size = 256;
  s.seed = seed;
  return s;
}

// Decode that recomputes the whole frame every step. Reference for the
// library's incremental update.
std::vector<TokenId> reference_decode(const ToyLM& model, const std::vector<TokenId>& prompt,
                                      const DecodeSchedule& sch, Sampler& sampler,
                                      const StrategyBias* biaser) {
  DenoiseState state(prompt, sch);
  const std::size_t k = sch.tokens_per_step();
  while (!state.complete()) {
    const LogitFrame frame = all_position_logits(model, state);
    std::vector<std::pair<std::size_t, TokenId>> chosen;
    for (std::size_t pos : select_unmask_positions(frame, state, k)) {
      std::vector<double> row(frame.row(pos).begin(), frame.row(pos).end());
      if (biaser != nullptr) biaser->apply(neighbor_view(state, frame, pos, biaser->kind()), row);
      chosen.emplace_back(pos, sampler.sample(row));
    }
    for (auto [pos, tok] : chosen) state.finalize(pos, tok);
    state.advance_step();
  }
  return state.output();
}

}  // namespace

TEST(ToyDiffusion, ThreeTermLogitsByHand) {
  const ToyLM model = hand_model();
  std::vector<double> row(8);
  // left = 3, right = 5: unigram + bigram[3][v] + 0.5 * bigram[v][5].
  model.context_logits(TokenId{3}, TokenId{5}, row);
  EXPECT_EQ(row, (std::vector<double>{0, 0, 0, 0, 6, 0, 0, 3}));
  model.context_logits(std::nullopt, std::nullopt, row);
  EXPECT_EQ(row, (std::vector<double>{0, 0, 0, 0, 0, 0, 0, 3}));
  model.context_logits(TokenId{7}, std::nullopt, row);
  EXPECT_EQ(row, (std::vector<double>{3.5, 0, 0, 0, 0, 0, 0, 3}));
}

TEST(ToyDiffusion, FullyMaskedRowsAreUnigram) {
  const ToyLM model = ToyLM::random(small_spec(3));
  DecodeSchedule sch{16, 16, 16};
  DenoiseState state({5, 6}, sch);
  const LogitFrame frame = all_position_logits(model, state);
  for (std::size_t i = 1; i < 16; ++i) {
    const auto row = frame.row(i);
    ASSERT_TRUE(std::equal(row.begin(), row.end(), model.unigram().begin()));
  }
  std::vector<double> first(256);
  model.context_logits(TokenId{6}, std::nullopt, first);
  EXPECT_TRUE(std::equal(first.begin(), first.end(), frame.row(0).begin()));
}

TEST(ToyDiffusion, HandTracedDecode) {
  const ToyLM model = hand_model();
  Sampler greedy(0.0, 0);
  DecodeTrace trace;
  const auto out = decode(model, std::vector<TokenId>{0}, DecodeSchedule{4, 4, 4}, greedy,
                          nullptr, &trace);
  // Step 0 unmasks position 1 (unigram row beats the prompt-conditioned row),
  // step 1 position 3, step 2 position 0, step 3 position 2.
  EXPECT_EQ(out, (std::vector<TokenId>{1, 7, 0, 7}));
  EXPECT_EQ(trace.finalize_step, (std::vector<std::size_t>{2, 0, 3, 1}));
  EXPECT_EQ(trace.steps_used, 4u);
  EXPECT_DOUBLE_EQ(trace.out_of_order_fraction(), 2.0 / 3.0);
}

TEST(ToyDiffusion, SelectUnmaskPositions) {
  DecodeSchedule sch{6, 6, 6};
  DenoiseState state({}, sch);
  LogitFrame frame;
  frame.length = 6;
  frame.vocab_size = 1;
  frame.logits.assign(6, 0.0);
  frame.confidences = {0.1, 0.5, 0.9, 0.5, 0.2, 0.5};
  EXPECT_EQ(select_unmask_positions(frame, state, 1), (std::vector<std::size_t>{2}));
  EXPECT_EQ(select_unmask_positions(frame, state, 3), (std::vector<std::size_t>{2, 1, 3}));
  state.finalize(2, 0);
  EXPECT_EQ(select_unmask_positions(frame, state, 100).size(), 5u);
  frame.confidences.assign(6, 0.3);
  EXPECT_EQ(select_unmask_positions(frame, state, 2), (std::vector<std::size_t>{0, 1}));
  for (std::size_t i : {0, 1, 3, 4, 5}) state.finalize(i, 0);
  EXPECT_TRUE(select_unmask_positions(frame, state, 2).empty());
}

TEST(ToyDiffusion, BlocksGateSelection) {
  DecodeSchedule sch{8, 8, 4};
  DenoiseState state({}, sch);
  LogitFrame frame;
  frame.length = 8;
  frame.vocab_size = 1;
  frame.logits.assign(8, 0.0);
  frame.confidences = {0.1, 0.1, 0.1, 0.1, 0.9, 0.9, 0.9, 0.9};
  EXPECT_EQ(state.active_block_begin(), 0u);
  EXPECT_EQ(state.active_block_end(), 4u);
  EXPECT_EQ(select_unmask_positions(frame, state, 1), (std::vector<std::size_t>{0}));
  for (std::size_t i = 0; i < 4; ++i) state.finalize(i, 0);
  EXPECT_EQ(state.active_block_begin(), 4u);
  EXPECT_EQ(select_unmask_positions(frame, state, 1), (std::vector<std::size_t>{4}));
}

TEST(ToyDiffusion, ScheduleValidation) {
  EXPECT_THROW((DecodeSchedule{200, 200, 30}.validate()), ConfigError);
  EXPECT_THROW((DecodeSchedule{0, 10, 0}.validate()), ConfigError);
  EXPECT_THROW((DecodeSchedule{64, 1, 32}.validate()), ConfigError);
  EXPECT_NO_THROW((DecodeSchedule{200, 200, 200}.validate()));
  EXPECT_NO_THROW((DecodeSchedule{256, 256, 32}.validate()));
  EXPECT_EQ((DecodeSchedule{256, 256, 32}.tokens_per_step()), 1u);
  EXPECT_EQ((DecodeSchedule{200, 100, 200}.tokens_per_step()), 2u);
  EXPECT_EQ((DecodeSchedule{200, 64, 200}.tokens_per_step()), 4u);
}

TEST(ToyDiffusion, GreedyIsDeterministicAndArgmax) {
  const ToyLM model = ToyLM::random(small_spec(5));
  const DecodeSchedule sch{32, 32, 32};
  Sampler a(0.0, 1), b(0.0, 2);
  EXPECT_EQ(decode(model, std::vector<TokenId>{1, 2}, sch, a),
            decode(model, std::vector<TokenId>{1, 2}, sch, b));
  Sampler g(0.0, 0);
  EXPECT_EQ(g.sample(std::vector<double>{1.0, 3.0, 3.0, 2.0}), 1u);
  EXPECT_EQ(argmax_token(std::vector<double>{0.0, 0.0}), 0u);
}

TEST(ToyDiffusion, SamplerConsumesOneDrawPerCall) {
  Sampler a(1.0, 77), b(1.0, 77);
  (void)a.sample(std::vector<double>{0.0, 100.0, 0.0});
  (void)b.sample(std::vector<double>{5.0, -3.0, 1.0, 2.0});
  const std::vector<double> row{0.2, 0.1, 0.3, 0.0};
  EXPECT_EQ(a.sample(row), b.sample(row));
}

TEST(ToyDiffusion, SamplerFollowsSoftmax) {
  Sampler s(1.0, 9);
  const std::vector<double> row{0.0, std::log(3.0)};
  int ones = 0;
  for (int i = 0; i < 20000; ++i) ones += s.sample(row) == 1 ? 1 : 0;
  EXPECT_NEAR(ones / 20000.0, 0.75, 0.015);
}

TEST(ToyDiffusion, ZeroDeltaBiasIsNoOp) {
  const ToyLM model = ToyLM::random(small_spec(8));
  const WatermarkKey key(1, 0.5, 0.0);
  const GreenMatrix m = GreenMatrix::build(key, 256);
  const DecodeSchedule sch{40, 40, 40};
  for (Strategy s : kAllStrategies) {
    const StrategyBias bias(s, key, m);
    Sampler a(1.0, 3), b(1.0, 3);
    EXPECT_EQ(decode(model, std::vector<TokenId>{4}, sch, a, nullptr),
              decode(model, std::vector<TokenId>{4}, sch, b, &bias));
  }
}

TEST(ToyDiffusion, IncrementalFrameMatchesFullRecompute) {
  const ToyLM model = ToyLM::random(small_spec(12));
  const WatermarkKey key(2, 0.5, 2.0);
  const GreenMatrix m = GreenMatrix::build(key, 256);
  for (const DecodeSchedule& sch :
       {DecodeSchedule{48, 48, 48}, DecodeSchedule{48, 24, 48}, DecodeSchedule{48, 12, 16}}) {
    for (Strategy s : kAllStrategies) {
      const StrategyBias bias(s, key, m);
      Sampler a(1.0, 5), b(1.0, 5);
      ASSERT_EQ(decode(model, std::vector<TokenId>{9, 10}, sch, a, &bias),
                reference_decode(model, {9, 10}, sch, b, &bias));
    }
  }
}

TEST(ToyDiffusion, MonotoneFinalization) {
  const ToyLM model = ToyLM::random(small_spec(21));
  DecodeSchedule sch{60, 30, 20};
  Sampler s(1.0, 4);
  DecodeTrace trace;
  const auto out = decode(model, std::vector<TokenId>{3}, sch, s, nullptr, &trace);
  ASSERT_EQ(out.size(), 60u);
  EXPECT_LE(trace.steps_used, 30u);
  // k = 2 per step inside each block: every step finalizes exactly two.
  std::vector<int> per_step(trace.steps_used, 0);
  for (std::size_t st : trace.finalize_step) ++per_step.at(st);
  for (int c : per_step) EXPECT_EQ(c, 2);
  // Blocks finish in order.
  for (std::size_t i = 0; i < 60; ++i) {
    for (std::size_t j = 0; j < 60; ++j) {
      if (i / 20 < j / 20) {
        ASSERT_LT(trace.finalize_step[i], trace.finalize_step[j]);
      }
    }
  }
}

TEST(ToyDiffusion, DenoiseStateContracts) {
  DecodeSchedule sch{4, 4, 4};
  DenoiseState st({8, 9}, sch);
  EXPECT_EQ(st.left_context(0), TokenId{9});
  EXPECT_FALSE(st.left_context(1).has_value());
  st.finalize(2, 5);
  EXPECT_EQ(st.right_context(1), TokenId{5});
  EXPECT_EQ(st.left_context(3), TokenId{5});
  EXPECT_THROW(st.finalize(2, 6), ContractViolation);
  DenoiseState empty({}, sch);
  EXPECT_FALSE(empty.left_context(0).has_value());
}

TEST(ToyDiffusion, OutOfOrderCoverage) {
  // Random toy models must exercise non-sequential unmasking.
  double total = 0.0;
  for (std::uint64_t run = 0; run < 100; ++run) {
    ToyModelSpec spec = small_spec(1000 + run);
    const ToyLM model = ToyLM::random(spec);
    Sampler s(1.0, run);
    const auto prompt = sample_prompt(model, 4, 1.0, 500 + run);
    DecodeTrace trace;
    decode(model, prompt, DecodeSchedule{64, 64, 64}, s, nullptr, &trace);
    total += trace.out_of_order_fraction();
  }
  EXPECT_GT(total / 100.0, 0.10);
}

TEST(ToyDiffusion, ModelSerializationRoundTrip) {
  const ToyLM model = ToyLM::random(small_spec(4));
  std::stringstream ss;
  model.save(ss);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.rfind("dmark-toylm vocab_size=256 backward_weight=0.8", 0), 0u);
  EXPECT_EQ(ToyLM::load(ss), model);
  std::stringstream bad("dmark-toylm vocab_size=256 backward_weight=0.8\nshort");
  EXPECT_THROW(ToyLM::load(bad), DataError);
}

TEST(ToyDiffusion, RandomModelIsReproducibleAndFinite) {
  const ToyLM a = ToyLM::random(small_spec(6));
  const ToyLM b = ToyLM::random(small_spec(6));
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == ToyLM::random(small_spec(7)));
  for (double x : a.unigram()) ASSERT_TRUE(std::isfinite(x));
  for (TokenId u = 0; u < 256; ++u) {
    for (double x : a.bigram_row(u)) ASSERT_TRUE(std::isfinite(x));
    for (TokenId v = 0; v < 256; ++v) ASSERT_EQ(a.bigram_column(v)[u], a.bigram(u, v));
  }
}

TEST(ToyDiffusion, PromptSamplingAndRangeChecks) {
  const ToyLM model = ToyLM::random(small_spec(2));
  const auto p = sample_prompt(model, 12, 1.0, 3);
  EXPECT_EQ(p.size(), 12u);
  EXPECT_EQ(p, sample_prompt(model, 12, 1.0, 3));
  Sampler s(1.0, 1);
  EXPECT_THROW(decode(model, std::vector<TokenId>{999}, DecodeSchedule{4, 4, 4}, s), DataError);
}
