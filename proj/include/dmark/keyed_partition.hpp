#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "dmark/token_bitset.hpp"

namespace dmark {

using TokenId = std::uint32_t;

inline constexpr int kCurrentSchemeVersion = 1;

// Secret watermark parameters. gamma is the green-list fraction, delta the
// logit bonus. The green cut-off is kept as an integer so that membership
// tests never depend on floating-point rounding.
class WatermarkKey {
 public:
  WatermarkKey(std::uint64_t seed, double gamma, double delta,
               int scheme_version = kCurrentSchemeVersion);

  std::uint64_t seed() const noexcept { return seed_; }
  double gamma() const noexcept { return gamma_; }
  double delta() const noexcept { return delta_; }
  int scheme_version() const noexcept { return scheme_version_; }

  // floor(gamma * 2^64); a score is green iff its 64-bit value is below this.
  std::uint64_t green_cutoff() const noexcept { return cutoff_; }

  // Digest of the fields that determine the partition (seed, cutoff,
  // scheme). delta is deliberately excluded: it does not change membership.
  std::uint64_t fingerprint() const noexcept;

  // Same key with a different bias strength.
  WatermarkKey with_delta(double delta) const;

  friend bool operator==(const WatermarkKey&, const WatermarkKey&) = default;

 private:
  std::uint64_t seed_;
  double gamma_;
  double delta_;
  int scheme_version_;
  std::uint64_t cutoff_;
};

// h(s, prev): two splitmix64 finalizer rounds over seed ^ (prev * golden).
// Throws std::out_of_range when prev >= vocab_size.
std::uint64_t hash_context(const WatermarkKey& key, TokenId prev, std::size_t vocab_size);
std::uint64_t hash_context_raw(std::uint64_t seed, TokenId prev) noexcept;

// Raw 64-bit pseudo-random value behind p(h, v).
std::uint64_t score_bits(std::uint64_t context_hash, TokenId v) noexcept;

// p(h, v) in [0, 1).
double uniform_score(std::uint64_t context_hash, TokenId v) noexcept;

bool is_green(const WatermarkKey& key, TokenId prev, TokenId v);

// Forward green list of `prev` over a vocabulary of `vocab_size` tokens.
TokenBitset green_set(const WatermarkKey& key, TokenId prev, std::size_t vocab_size);

// Key file: one `name=value` pair per line (seed, gamma, delta, scheme_version).
void write_key(std::ostream& out, const WatermarkKey& key);
WatermarkKey read_key(std::istream& in);
void save_key(const std::filesystem::path& path, const WatermarkKey& key);
WatermarkKey load_key(const std::filesystem::path& path);

std::string fingerprint_hex(std::uint64_t fingerprint);

}  // namespace dmark
