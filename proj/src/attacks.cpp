#include "dmark/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dmark/errors.hpp"
#include "dmark/rng.hpp"

namespace dmark {
namespace {

// k distinct indices from [0, n), in draw order.
std::vector<std::size_t> choose_distinct(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t j = 0; j < k; ++j) {
    std::swap(idx[j], idx[j + rng.below(n - j)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

std::string_view attack_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::kNone:
      return "none";
    case AttackKind::kDelete:
      return "delete";
    case AttackKind::kInsert:
      return "insert";
    case AttackKind::kSwap:
      return "swap";
    case AttackKind::kSubstitute:
      return "substitute";
    case AttackKind::kExternal:
      return "external";
  }
  return "unknown";
}

AttackKind parse_attack(std::string_view name) {
  for (AttackKind k : {AttackKind::kNone, AttackKind::kDelete, AttackKind::kInsert,
                       AttackKind::kSwap, AttackKind::kSubstitute, AttackKind::kExternal}) {
    if (attack_name(k) == name) return k;
  }
  throw ConfigError("unknown attack '" + std::string(name) +
                    "' (expected delete, insert, swap, substitute or external)");
}

void AttackSpec::validate() const {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("attack rate must lie in [0, 1)");
}

AttackResult apply_attack(const AttackSpec& spec, std::span<const TokenId> tokens,
                          std::size_t vocab_size, const ExternalTransformer& external) {
  spec.validate();
  if (tokens.empty()) throw DataError("cannot attack an empty sequence");

  AttackResult out;
  if (spec.kind == AttackKind::kExternal) {
    if (!external) throw ConfigError("external attack requested but no transformer registered");
    out.tokens = external(tokens, spec.rng_seed);
    return out;
  }

  const std::size_t n = tokens.size();
  const auto edits = static_cast<std::size_t>(std::floor(spec.rate * static_cast<double>(n)));
  out.tokens.assign(tokens.begin(), tokens.end());
  if (spec.kind == AttackKind::kNone) return out;
  if (edits == 0) {
    out.degenerate = spec.rate > 0.0;
    return out;
  }
  if (vocab_size < 2) throw ConfigError("attacks need a vocabulary of at least two tokens");

  Rng rng(spec.rng_seed);
  out.edits = edits;
  switch (spec.kind) {
    case AttackKind::kDelete: {
      std::vector<bool> drop(n, false);
      for (std::size_t i : choose_distinct(rng, n, edits)) drop[i] = true;
      out.tokens.clear();
      for (std::size_t i = 0; i < n; ++i) {
        if (!drop[i]) out.tokens.push_back(tokens[i]);
      }
      break;
    }
    case AttackKind::kInsert:
      for (std::size_t j = 0; j < edits; ++j) {
        const auto pos = static_cast<std::ptrdiff_t>(rng.below(out.tokens.size() + 1));
        const auto tok = static_cast<TokenId>(rng.below(vocab_size));
        out.tokens.insert(out.tokens.begin() + pos, tok);
      }
      break;
    case AttackKind::kSwap:
      if (n < 2) {
        out.degenerate = true;
        out.edits = 0;
        break;
      }
      for (std::size_t j = 0; j < edits; ++j) {
        const std::size_t a = rng.below(n);
        std::size_t b = rng.below(n - 1);
        if (b >= a) ++b;
        std::swap(out.tokens[a], out.tokens[b]);
      }
      break;
    case AttackKind::kSubstitute:
      for (std::size_t i : choose_distinct(rng, n, edits)) {
        auto tok = static_cast<TokenId>(rng.below(vocab_size - 1));
        if (tok >= out.tokens[i]) ++tok;
        out.tokens[i] = tok;
      }
      break;
    case AttackKind::kNone:
    case AttackKind::kExternal:
      break;
  }
  return out;
}

}  // namespace dmark
