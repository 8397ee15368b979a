#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "dmark/keyed_partition.hpp"
#include "dmark/rng.hpp"

namespace dmark {

class StrategyBias;

// Knobs for drawing a random toy model. Every field is recorded in run
// metadata so a model can be regenerated from its spec alone.
//
// The unigram table is Gaussian noise plus a handful of "common" tokens with
// a large bonus. Common tokens are almost never produced from a left context,
// so they seed the sequence out of order. Bigram rows are Gaussian noise; a
// row is either flat (every common token, plus a `flat_fraction` share of the
// rest) or peaked, with `successors` preferred next tokens boosted by about
// `successor_boost`.
struct ToyModelSpec {
  std::size_t vocab_size = 4096;
  std::uint64_t seed = 1;
  double backward_weight = 0.8;
  double unigram_scale = 0.3;
  std::size_t common_tokens = 4;
  double common_boost = 6.0;
  double bigram_scale = 0.3;
  double flat_fraction = 0.5;
  std::size_t successors = 2;
  double successor_boost = 9.0;
};

// Unigram + bigram language model with right-neighbour mixing. Stands in for
// a masked diffusion LM: the logits of a position depend on its finalized
// left and right neighbours only.
class ToyLM {
 public:
  ToyLM(std::size_t vocab_size, double backward_weight, std::vector<double> unigram,
        std::vector<double> bigram);

  static ToyLM random(const ToyModelSpec& spec);

  std::size_t vocab_size() const noexcept { return vocab_size_; }
  double backward_weight() const noexcept { return backward_weight_; }
  std::span<const double> unigram() const noexcept { return unigram_; }
  // Row u: score of each v given left neighbour u.
  std::span<const double> bigram_row(TokenId u) const noexcept {
    return std::span<const double>(bigram_).subspan(std::size_t{u} * vocab_size_, vocab_size_);
  }
  double bigram(TokenId u, TokenId v) const noexcept {
    return bigram_[std::size_t{u} * vocab_size_ + v];
  }
  // Column w of the bigram table, stored transposed for contiguous access.
  std::span<const double> bigram_column(TokenId w) const noexcept {
    return std::span<const double>(bigram_t_).subspan(std::size_t{w} * vocab_size_, vocab_size_);
  }

  // Writes the position logits for the given neighbour context into `out`.
  void context_logits(std::optional<TokenId> left, std::optional<TokenId> right,
                      std::span<double> out) const;

  // Text header line, then unigram and bigram tables as little-endian
  // IEEE-754 doubles.
  void save(std::ostream& out) const;
  static ToyLM load(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static ToyLM load(const std::filesystem::path& path);

  friend bool operator==(const ToyLM& a, const ToyLM& b) {
    return a.vocab_size_ == b.vocab_size_ && a.backward_weight_ == b.backward_weight_ &&
           a.unigram_ == b.unigram_ && a.bigram_ == b.bigram_;
  }

 private:
  std::size_t vocab_size_;
  double backward_weight_;
  std::vector<double> unigram_;
  std::vector<double> bigram_;
  std::vector<double> bigram_t_;
};

// Blocked denoising schedule: `length` positions split into blocks of
// `block_size`, unmasked over `steps` steps in total.
struct DecodeSchedule {
  std::size_t length = 200;
  std::size_t steps = 200;
  std::size_t block_size = 200;

  std::size_t num_blocks() const noexcept { return length / block_size; }
  std::size_t steps_per_block() const noexcept { return steps / num_blocks(); }
  // Positions unmasked per step inside a block.
  std::size_t tokens_per_step() const noexcept {
    return (block_size + steps_per_block() - 1) / steps_per_block();
  }
  // Throws ConfigError when the schedule cannot be run.
  void validate() const;
};

// x^(t): the partially unmasked sequence. A position is finalized exactly
// when it holds a token; finalized tokens are never overwritten.
class DenoiseState {
 public:
  DenoiseState(std::vector<TokenId> prompt, const DecodeSchedule& schedule);

  std::size_t length() const noexcept { return tokens_.size(); }
  std::span<const TokenId> prompt() const noexcept { return prompt_; }
  const std::optional<TokenId>& token(std::size_t i) const { return tokens_.at(i); }
  bool finalized(std::size_t i) const { return tokens_.at(i).has_value(); }
  std::size_t finalized_count() const noexcept { return finalized_count_; }
  bool complete() const noexcept { return finalized_count_ == tokens_.size(); }

  std::size_t step() const noexcept { return step_; }
  std::size_t total_steps() const noexcept { return total_steps_; }
  std::size_t block_size() const noexcept { return block_size_; }

  // Half-open range of the block currently being unmasked.
  std::size_t active_block_begin() const noexcept;
  std::size_t active_block_end() const noexcept;

  // Finalized left neighbour, or the prompt's last token at position 0.
  std::optional<TokenId> left_context(std::size_t i) const;
  std::optional<TokenId> right_context(std::size_t i) const;

  void finalize(std::size_t i, TokenId token);
  void advance_step();

  std::vector<TokenId> output() const;

 private:
  std::vector<TokenId> prompt_;
  std::vector<std::optional<TokenId>> tokens_;
  std::size_t finalized_count_ = 0;
  std::size_t step_ = 0;
  std::size_t total_steps_;
  std::size_t block_size_;
};

// L^(t) and the per-position confidences c_i^(t).
struct LogitFrame {
  std::size_t length = 0;
  std::size_t vocab_size = 0;
  std::vector<double> logits;       // length x vocab_size, row-major
  std::vector<double> confidences;  // max softmax probability per row

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(logits).subspan(i * vocab_size, vocab_size);
  }
  std::span<double> row(std::size_t i) {
    return std::span<double>(logits).subspan(i * vocab_size, vocab_size);
  }
};

double max_softmax_probability(std::span<const double> logits);

// Index of the largest entry; ties go to the lowest index.
TokenId argmax_token(std::span<const double> logits);

LogitFrame all_position_logits(const ToyLM& model, const DenoiseState& state);

// The k most confident non-finalized positions of the active block, in
// decreasing confidence order (ties: lower index first). Empty when the
// sequence is complete.
std::vector<std::size_t> select_unmask_positions(const LogitFrame& frame,
                                                 const DenoiseState& state, std::size_t k);

// Temperature 0 is greedy argmax. Otherwise one uniform draw per call is
// consumed regardless of the row contents.
class Sampler {
 public:
  Sampler(double temperature, std::uint64_t seed);
  TokenId sample(std::span<const double> logits);
  double temperature() const noexcept { return temperature_; }

 private:
  double temperature_;
  Rng rng_;
  std::vector<double> scratch_;
};

// Per-position bookkeeping collected during decode.
struct DecodeTrace {
  std::vector<std::size_t> finalize_step;
  std::vector<bool> had_left;   // left context present when finalized
  std::vector<bool> had_right;  // right context present when finalized
  std::size_t steps_used = 0;

  // Fraction of positions (excluding position 0) finalized before their
  // left neighbour.
  double out_of_order_fraction() const;
  // Fraction of positions whose left context existed at finalization.
  double left_context_fraction() const;
};

// Runs the denoising loop. Bias (when given) is applied to the logit rows of
// the selected positions only; selection always uses unbiased confidences.
std::vector<TokenId> decode(const ToyLM& model, std::span<const TokenId> prompt,
                            const DecodeSchedule& schedule, Sampler& sampler,
                            const StrategyBias* biaser = nullptr, DecodeTrace* trace = nullptr);

// Forward bigram chain sample used as a prompt.
std::vector<TokenId> sample_prompt(const ToyLM& model, std::size_t length, double temperature,
                                   std::uint64_t seed);

}  // namespace dmark
