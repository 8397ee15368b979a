#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "dmark/keyed_partition.hpp"

namespace dmark {

enum class AttackKind { kNone, kDelete, kInsert, kSwap, kSubstitute, kExternal };

std::string_view attack_name(AttackKind kind);
AttackKind parse_attack(std::string_view name);

struct AttackSpec {
  AttackKind kind = AttackKind::kNone;
  double rate = 0.0;  // in [0, 1)
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// Any token-to-token text transformer, e.g. a paraphraser behind a tokenizer.
using ExternalTransformer =
    std::function<std::vector<TokenId>(std::span<const TokenId> tokens, std::uint64_t seed)>;

struct AttackResult {
  std::vector<TokenId> tokens;
  std::size_t edits = 0;
  // floor(rate * n) was zero, so the input came back unchanged.
  bool degenerate = false;
};

// Edits floor(rate * n) positions:
//   delete      removes distinct positions
//   insert      inserts uniform tokens at uniform positions
//   swap        transposes random pairs of distinct positions
//   substitute  replaces distinct positions with a different uniform token
//   external    hands the sequence to `external`
AttackResult apply_attack(const AttackSpec& spec, std::span<const TokenId> tokens,
                          std::size_t vocab_size, const ExternalTransformer& external = {});

}  // namespace dmark
