#include "dmark/toy_diffusion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "dmark/errors.hpp"
#include "dmark/strategies.hpp"

namespace dmark {
namespace {

constexpr const char* kModelHeader = "dmark-toylm";

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

double get_f64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), b.size());
  if (!in) throw DataError("truncated toy model table");
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[i];
  double v = 0;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::vector<double> transpose(const std::vector<double>& m, std::size_t n) {
  std::vector<double> t(m.size());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) t[c * n + r] = m[r * n + c];
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// ToyLM

ToyLM::ToyLM(std::size_t vocab_size, double backward_weight, std::vector<double> unigram,
             std::vector<double> bigram)
    : vocab_size_(vocab_size),
      backward_weight_(backward_weight),
      unigram_(std::move(unigram)),
      bigram_(std::move(bigram)) {
  if (vocab_size_ < 2) throw ConfigError("toy model needs at least two tokens");
  if (!(backward_weight_ >= 0.0 && backward_weight_ <= 1.0)) {
    throw ConfigError("backward_weight must lie in [0, 1]");
  }
  if (unigram_.size() != vocab_size_ || bigram_.size() != vocab_size_ * vocab_size_) {
    throw ConfigError("toy model table sizes do not match vocab_size");
  }
  auto finite = [](double x) { return std::isfinite(x); };
  if (!std::all_of(unigram_.begin(), unigram_.end(), finite) ||
      !std::all_of(bigram_.begin(), bigram_.end(), finite)) {
    throw DataError("toy model contains non-finite logits");
  }
  bigram_t_ = transpose(bigram_, vocab_size_);
}

ToyLM ToyLM::random(const ToyModelSpec& spec) {
  const std::size_t n = spec.vocab_size;
  if (n < 2) throw ConfigError("toy model needs at least two tokens");
  if (spec.successors > n || spec.common_tokens > n) {
    throw ConfigError("successors and common_tokens cannot exceed vocab_size");
  }
  if (!(spec.flat_fraction >= 0.0 && spec.flat_fraction <= 1.0)) {
    throw ConfigError("flat_fraction must lie in [0, 1]");
  }
  Rng rng(derive_seed(spec.seed, 0x746F796C6DULL, 0));  // "toylm"

  // Partial Fisher-Yates: the first k entries of `pool` become a uniform
  // sample of k distinct entries.
  auto draw_distinct = [&](std::vector<TokenId>& pool, std::size_t k) {
    for (std::size_t j = 0; j < k; ++j) std::swap(pool[j], pool[j + rng.below(pool.size() - j)]);
  };

  std::vector<double> unigram(n);
  for (auto& x : unigram) x = spec.unigram_scale * rng.normal();
  std::vector<TokenId> pool(n);
  std::iota(pool.begin(), pool.end(), TokenId{0});
  draw_distinct(pool, spec.common_tokens);
  std::vector<bool> common(n, false);
  for (std::size_t j = 0; j < spec.common_tokens; ++j) {
    common[pool[j]] = true;
    unigram[pool[j]] += spec.common_boost;
  }
  // Preferred successors are never common tokens.
  std::vector<TokenId> regular;
  for (TokenId v = 0; v < n; ++v) {
    if (!common[v]) regular.push_back(v);
  }
  if (spec.successors > regular.size()) {
    throw ConfigError("successors cannot exceed the number of non-common tokens");
  }

  std::vector<double> bigram(n * n);
  for (std::size_t u = 0; u < n; ++u) {
    double* row = bigram.data() + u * n;
    for (std::size_t v = 0; v < n; ++v) row[v] = spec.bigram_scale * rng.normal();
    // Common tokens are (almost) never produced from a left context.
    for (std::size_t v = 0; v < n; ++v) {
      if (common[v]) row[v] -= 2.0 * spec.common_boost;
    }
    if (common[u] || rng.uniform() < spec.flat_fraction) continue;
    draw_distinct(regular, spec.successors);
    for (std::size_t j = 0; j < spec.successors; ++j) {
      row[regular[j]] += spec.successor_boost * (0.75 + 0.5 * rng.uniform());
    }
  }
  return ToyLM(n, spec.backward_weight, std::move(unigram), std::move(bigram));
}

void ToyLM::context_logits(std::optional<TokenId> left, std::optional<TokenId> right,
                           std::span<double> out) const {
  std::copy(unigram_.begin(), unigram_.end(), out.begin());
  if (left) {
    auto b = bigram_row(*left);
    for (std::size_t v = 0; v < vocab_size_; ++v) out[v] += b[v];
  }
  if (right) {
    auto c = bigram_column(*right);
    for (std::size_t v = 0; v < vocab_size_; ++v) out[v] += backward_weight_ * c[v];
  }
}

void ToyLM::save(std::ostream& out) const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", backward_weight_);
  out << kModelHeader << " vocab_size=" << vocab_size_ << " backward_weight=" << buf << '\n';
  for (double x : unigram_) put_f64(out, x);
  for (double x : bigram_) put_f64(out, x);
}

ToyLM ToyLM::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty toy model file");
  std::istringstream header(line);
  std::string magic, vs, bw;
  header >> magic >> vs >> bw;
  if (magic != kModelHeader || vs.rfind("vocab_size=", 0) != 0 ||
      bw.rfind("backward_weight=", 0) != 0) {
    throw DataError("bad toy model header: " + line);
  }
  const std::size_t n = std::stoull(vs.substr(11));
  const double weight = std::stod(bw.substr(16));
  if (n < 2 || n > (std::size_t{1} << 16)) throw DataError("implausible toy model vocab_size");
  std::vector<double> unigram(n), bigram(n * n);
  for (auto& x : unigram) x = get_f64(in);
  for (auto& x : bigram) x = get_f64(in);
  return ToyLM(n, weight, std::move(unigram), std::move(bigram));
}

void ToyLM::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write toy model " + path.string());
  save(out);
}

ToyLM ToyLM::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open toy model " + path.string());
  return load(in);
}

// ---------------------------------------------------------------------------
// Schedule and state

void DecodeSchedule::validate() const {
  if (length == 0) throw ConfigError("generation length must be positive");
  if (block_size == 0 || block_size > length || length % block_size != 0) {
    throw ConfigError("block_size must divide the generation length");
  }
  if (steps < num_blocks()) {
    throw ConfigError("infeasible schedule: " + std::to_string(steps) + " steps for " +
                      std::to_string(num_blocks()) + " blocks");
  }
}

DenoiseState::DenoiseState(std::vector<TokenId> prompt, const DecodeSchedule& schedule)
    : prompt_(std::move(prompt)),
      tokens_(schedule.length),
      total_steps_(schedule.steps),
      block_size_(schedule.block_size) {
  schedule.validate();
}

std::size_t DenoiseState::active_block_begin() const noexcept {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!tokens_[i]) return (i / block_size_) * block_size_;
  }
  return tokens_.size();
}

std::size_t DenoiseState::active_block_end() const noexcept {
  return std::min(tokens_.size(), active_block_begin() + block_size_);
}

std::optional<TokenId> DenoiseState::left_context(std::size_t i) const {
  if (i == 0) {
    if (prompt_.empty()) return std::nullopt;
    return prompt_.back();
  }
  return tokens_.at(i - 1);
}

std::optional<TokenId> DenoiseState::right_context(std::size_t i) const {
  if (i + 1 >= tokens_.size()) return std::nullopt;
  return tokens_[i + 1];
}

void DenoiseState::finalize(std::size_t i, TokenId token) {
  if (tokens_.at(i)) throw ContractViolation("position " + std::to_string(i) + " already final");
  tokens_[i] = token;
  ++finalized_count_;
}

void DenoiseState::advance_step() {
  if (step_ >= total_steps_) throw ContractViolation("denoising step budget exhausted");
  ++step_;
}

std::vector<TokenId> DenoiseState::output() const {
  if (!complete()) throw ContractViolation("sequence still has masked positions");
  std::vector<TokenId> out;
  out.reserve(tokens_.size());
  for (const auto& t : tokens_) out.push_back(*t);
  return out;
}

// ---------------------------------------------------------------------------
// Frames and selection

double max_softmax_probability(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - m);
  return 1.0 / z;
}

TokenId argmax_token(std::span<const double> logits) {
  if (logits.empty()) throw ContractViolation("argmax of an empty row");
  // max_element returns the first maximum.
  return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

namespace {

void refresh_row(const ToyLM& model, const DenoiseState& state, std::size_t i,
                 LogitFrame& frame) {
  auto row = frame.row(i);
  model.context_logits(state.left_context(i), state.right_context(i), row);
  frame.confidences[i] = max_softmax_probability(row);
}

}  // namespace

LogitFrame all_position_logits(const ToyLM& model, const DenoiseState& state) {
  LogitFrame frame;
  frame.length = state.length();
  frame.vocab_size = model.vocab_size();
  frame.logits.assign(frame.length * frame.vocab_size, 0.0);
  frame.confidences.assign(frame.length, 0.0);
  for (std::size_t i = 0; i < frame.length; ++i) refresh_row(model, state, i, frame);
  return frame;
}

std::vector<std::size_t> select_unmask_positions(const LogitFrame& frame,
                                                 const DenoiseState& state, std::size_t k) {
  if (k == 0) throw ContractViolation("must unmask at least one position per step");
  std::vector<std::size_t> candidates;
  for (std::size_t i = state.active_block_begin(); i < state.active_block_end(); ++i) {
    if (!state.finalized(i)) candidates.push_back(i);
  }
  const std::size_t take = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                    candidates.end(), [&](std::size_t a, std::size_t b) {
                      const double ca = frame.confidences[a];
                      const double cb = frame.confidences[b];
                      return ca != cb ? ca > cb : a < b;
                    });
  candidates.resize(take);
  return candidates;
}

// ---------------------------------------------------------------------------
// Sampling

Sampler::Sampler(double temperature, std::uint64_t seed) : temperature_(temperature), rng_(seed) {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be a finite non-negative number");
  }
}

TokenId Sampler::sample(std::span<const double> logits) {
  if (temperature_ == 0.0) return argmax_token(logits);
  const double u = rng_.uniform();
  const double m = *std::max_element(logits.begin(), logits.end());
  scratch_.resize(logits.size());
  double total = 0.0;
  for (std::size_t v = 0; v < logits.size(); ++v) {
    scratch_[v] = std::exp((logits[v] - m) / temperature_);
    total += scratch_[v];
  }
  double target = u * total;
  for (std::size_t v = 0; v < logits.size(); ++v) {
    target -= scratch_[v];
    if (target < 0.0) return static_cast<TokenId>(v);
  }
  // Rounding left a sliver of mass: take the last token with nonzero weight.
  for (std::size_t v = logits.size(); v-- > 0;) {
    if (scratch_[v] > 0.0) return static_cast<TokenId>(v);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Decoding

double DecodeTrace::out_of_order_fraction() const {
  if (finalize_step.size() < 2) return 0.0;
  std::size_t early = 0;
  for (std::size_t i = 1; i < finalize_step.size(); ++i) {
    // Same-step finalization does not count: neither saw the other.
    if (finalize_step[i] < finalize_step[i - 1]) ++early;
  }
  return static_cast<double>(early) / static_cast<double>(finalize_step.size() - 1);
}

double DecodeTrace::left_context_fraction() const {
  if (had_left.empty()) return 0.0;
  const auto with = std::count(had_left.begin(), had_left.end(), true);
  return static_cast<double>(with) / static_cast<double>(had_left.size());
}

std::vector<TokenId> decode(const ToyLM& model, std::span<const TokenId> prompt,
                            const DecodeSchedule& schedule, Sampler& sampler,
                            const StrategyBias* biaser, DecodeTrace* trace) {
  schedule.validate();
  for (TokenId t : prompt) {
    if (t >= model.vocab_size()) throw DataError("prompt token outside model vocabulary");
  }
  if (biaser != nullptr && biaser->matrix().vocab_size() != model.vocab_size()) {
    throw ConfigError("green matrix vocabulary differs from the model's");
  }

  DenoiseState state(std::vector<TokenId>(prompt.begin(), prompt.end()), schedule);
  LogitFrame frame = all_position_logits(model, state);
  const std::size_t k = schedule.tokens_per_step();
  const std::size_t n = schedule.length;

  if (trace != nullptr) {
    trace->finalize_step.assign(n, 0);
    trace->had_left.assign(n, false);
    trace->had_right.assign(n, false);
    trace->steps_used = 0;
  }

  std::vector<double> row(model.vocab_size());
  std::vector<std::pair<std::size_t, TokenId>> chosen;
  while (!state.complete()) {
    const auto positions = select_unmask_positions(frame, state, k);
    chosen.clear();
    for (std::size_t pos : positions) {
      auto base = frame.row(pos);
      std::copy(base.begin(), base.end(), row.begin());
      if (biaser != nullptr) {
        biaser->apply(neighbor_view(state, frame, pos, biaser->kind()), row);
      }
      chosen.emplace_back(pos, sampler.sample(row));
      if (trace != nullptr) {
        trace->finalize_step[pos] = state.step();
        trace->had_left[pos] = state.left_context(pos).has_value();
        trace->had_right[pos] = state.right_context(pos).has_value();
      }
    }
    // All positions of a step see the same x^(t), so commit afterwards.
    for (auto [pos, tok] : chosen) state.finalize(pos, tok);
    for (auto [pos, tok] : chosen) {
      for (std::size_t j = pos == 0 ? 0 : pos - 1; j <= std::min(n - 1, pos + 1); ++j) {
        refresh_row(model, state, j, frame);
      }
    }
    state.advance_step();
  }
  if (trace != nullptr) trace->steps_used = state.step();
  return state.output();
}

std::vector<TokenId> sample_prompt(const ToyLM& model, std::size_t length, double temperature,
                                   std::uint64_t seed) {
  Sampler sampler(temperature, seed);
  std::vector<TokenId> out;
  out.reserve(length);
  std::vector<double> row(model.vocab_size());
  for (std::size_t i = 0; i < length; ++i) {
    std::optional<TokenId> left;
    if (!out.empty()) left = out.back();
    model.context_logits(left, std::nullopt, row);
    out.push_back(sampler.sample(row));
  }
  return out;
}

}  // namespace dmark
