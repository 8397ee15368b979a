#include "dmark/strategies.hpp"

#include <bit>
#include <stdexcept>
#include <string>

#include "dmark/errors.hpp"

namespace dmark {

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kDirect:
      return "direct";
    case Strategy::kPredictive:
      return "predictive";
    case Strategy::kBidirectional:
      return "bidir";
    case Strategy::kPredictiveBidirectional:
      return "pred-bidir";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : kAllStrategies) {
    if (strategy_name(s) == name) return s;
  }
  throw ConfigError("unknown strategy '" + std::string(name) +
                    "' (expected direct, predictive, bidir or pred-bidir)");
}

StrategyBias::StrategyBias(Strategy kind, const WatermarkKey& key, const GreenMatrix& matrix)
    : kind_(kind), key_(key), matrix_(&matrix) {
  matrix.check_key(key);
}

bool StrategyBias::predicts_left() const noexcept {
  return kind_ == Strategy::kPredictive || kind_ == Strategy::kPredictiveBidirectional;
}

bool StrategyBias::predicts_right() const noexcept {
  return kind_ == Strategy::kPredictiveBidirectional;
}

void StrategyBias::add_forward(TokenId context, std::span<double> row) const {
  const double delta = key_.delta();
  if (matrix_->materialized()) {
    auto words = matrix_->row_words(context);
    for (std::size_t w = 0; w < words.size(); ++w) {
      std::uint64_t bits = words[w];
      while (bits != 0) {
        const auto bit = static_cast<std::size_t>(std::countr_zero(bits));
        row[w * 64 + bit] += delta;
        bits &= bits - 1;
      }
    }
    return;
  }
  const TokenBitset green = matrix_->forward_green(context);
  for (std::size_t v = 0; v < row.size(); ++v) {
    if (green.test(v)) row[v] += delta;
  }
}

void StrategyBias::add_backward(TokenId next, std::span<double> row) const {
  const double delta = key_.delta();
  const TokenBitset green = matrix_->backward_green(next);
  for (std::size_t v = 0; v < row.size(); ++v) {
    if (green.test(v)) row[v] += delta;
  }
}

void StrategyBias::apply(const NeighborView& nb, std::span<double> row) const {
  if (row.size() != matrix_->vocab_size()) {
    throw ContractViolation("logit row length " + std::to_string(row.size()) +
                            " differs from vocabulary size " +
                            std::to_string(matrix_->vocab_size()));
  }
  if (key_.delta() == 0.0) return;

  switch (kind_) {
    case Strategy::kDirect:
      if (nb.left) add_forward(*nb.left, row);
      return;

    case Strategy::kBidirectional:
      if (nb.left) add_forward(*nb.left, row);
      if (nb.right) add_backward(*nb.right, row);
      return;

    case Strategy::kPredictive:
    case Strategy::kPredictiveBidirectional: {
      if (nb.left) {
        add_forward(*nb.left, row);
      } else if (nb.predicted_left) {
        add_forward(*nb.predicted_left, row);
      } else if (!nb.at_sequence_start) {
        throw ContractViolation("predictive strategy needs a left prediction");
      }
      if (kind_ == Strategy::kPredictive) return;

      if (nb.right) {
        add_backward(*nb.right, row);
      } else if (nb.predicted_right) {
        add_backward(*nb.predicted_right, row);
      } else if (nb.at_sequence_end) {
        // Unconstrained backward list at the end: every token gets delta.
        for (double& x : row) x += key_.delta();
      } else {
        throw ContractViolation("predictive-bidirectional strategy needs a right prediction");
      }
      return;
    }
  }
}

std::vector<double> StrategyBias::bias_row(const NeighborView& nb,
                                           std::span<const double> row) const {
  std::vector<double> out(row.begin(), row.end());
  apply(nb, out);
  return out;
}

TokenId predict_neighbor(const LogitFrame& frame, std::size_t pos) {
  if (pos >= frame.length) {
    throw std::out_of_range("prediction position " + std::to_string(pos) +
                            " outside sequence of length " + std::to_string(frame.length));
  }
  return argmax_token(frame.row(pos));
}

NeighborView neighbor_view(const DenoiseState& state, const LogitFrame& frame, std::size_t pos,
                           Strategy kind) {
  if (pos >= state.length()) {
    throw std::out_of_range("position " + std::to_string(pos) + " outside sequence");
  }
  NeighborView nb;
  nb.left = state.left_context(pos);
  nb.right = state.right_context(pos);
  nb.at_sequence_start = pos == 0 && state.prompt().empty();
  nb.at_sequence_end = pos + 1 == state.length();

  const bool want_left =
      kind == Strategy::kPredictive || kind == Strategy::kPredictiveBidirectional;
  const bool want_right = kind == Strategy::kPredictiveBidirectional;
  if (want_left && !nb.left && pos > 0) {
    nb.predicted_left = predict_neighbor(frame, pos - 1);
  }
  if (want_right && !nb.right && !nb.at_sequence_end) {
    nb.predicted_right = predict_neighbor(frame, pos + 1);
  }
  return nb;
}

}  // namespace dmark
