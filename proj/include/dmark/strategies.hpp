#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dmark/green_matrix.hpp"
#include "dmark/keyed_partition.hpp"
#include "dmark/toy_diffusion.hpp"

namespace dmark {

enum class Strategy {
  kDirect,                   // forward list, only when the left token is known
  kPredictive,               // left token, or its argmax prediction
  kBidirectional,            // forward and backward lists from known neighbours
  kPredictiveBidirectional,  // both lists, predicting missing neighbours
};

// CLI names: direct, predictive, bidir, pred-bidir.
std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);
inline constexpr Strategy kAllStrategies[] = {Strategy::kDirect, Strategy::kPredictive,
                                              Strategy::kBidirectional,
                                              Strategy::kPredictiveBidirectional};

// What a position can see of its neighbours at the current step.
struct NeighborView {
  std::optional<TokenId> left;
  std::optional<TokenId> right;
  std::optional<TokenId> predicted_left;
  std::optional<TokenId> predicted_right;
  // No left slot exists (position 0 and an empty prompt), so there is
  // nothing to predict either.
  bool at_sequence_start = false;
  bool at_sequence_end = false;
};

// A watermark bias function bound to a key and its green matrix. The matrix
// must outlive this object.
class StrategyBias {
 public:
  StrategyBias(Strategy kind, const WatermarkKey& key, const GreenMatrix& matrix);

  Strategy kind() const noexcept { return kind_; }
  const WatermarkKey& key() const noexcept { return key_; }
  const GreenMatrix& matrix() const noexcept { return *matrix_; }

  bool predicts_left() const noexcept;
  bool predicts_right() const noexcept;

  // Adds delta * B(v) to every entry of `row` in place.
  void apply(const NeighborView& nb, std::span<double> row) const;
  std::vector<double> bias_row(const NeighborView& nb, std::span<const double> row) const;

 private:
  void add_forward(TokenId context, std::span<double> row) const;
  void add_backward(TokenId next, std::span<double> row) const;

  Strategy kind_;
  WatermarkKey key_;
  const GreenMatrix* matrix_;
};

// argmax of the frame's row at `pos`, lowest index on ties.
TokenId predict_neighbor(const LogitFrame& frame, std::size_t pos);

NeighborView neighbor_view(const DenoiseState& state, const LogitFrame& frame, std::size_t pos,
                           Strategy kind);

}  // namespace dmark
