#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dmark/keyed_partition.hpp"
#include "dmark/token_bitset.hpp"

namespace dmark {

inline constexpr std::size_t kDefaultMatrixBudgetBytes = std::size_t{1} << 30;

// |V| x |V| green-list relation. Row u is the forward green list given
// predecessor u; column w is the backward green list given successor w:
//   M[u][w] = 1  iff  is_green(key, u, w).
//
// Materialized matrices store rows packed into 64-bit words, row-major.
// Virtual matrices compute rows and columns from the key on demand and are
// used when |V|^2 bits exceed the memory budget.
class GreenMatrix {
 public:
  static GreenMatrix build(const WatermarkKey& key, std::size_t vocab_size,
                           std::size_t budget_bytes = kDefaultMatrixBudgetBytes,
                           unsigned threads = 1);
  static GreenMatrix make_virtual(const WatermarkKey& key, std::size_t vocab_size);

  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::uint64_t key_fingerprint() const noexcept { return fingerprint_; }
  bool materialized() const noexcept { return !bits_.empty(); }
  std::size_t words_per_row() const noexcept { return words_per_row_; }

  bool contains(TokenId prev, TokenId next) const;

  TokenBitset forward_green(TokenId prev) const;
  TokenBitset backward_green(TokenId next) const;

  // Zero-copy view of a materialized row.
  std::span<const std::uint64_t> row_words(TokenId prev) const;

  // Raw payload (empty for virtual matrices).
  std::span<const std::uint64_t> payload() const noexcept { return bits_; }

  // Throws DataError unless `key` generated this matrix.
  void check_key(const WatermarkKey& key) const;

  // On-disk cache: magic, scheme_version, vocab_size, fingerprint, then the
  // row-major payload as little-endian 64-bit words.
  void save(const std::filesystem::path& path) const;
  static GreenMatrix load(const std::filesystem::path& path, const WatermarkKey& key);

 private:
  GreenMatrix(const WatermarkKey& key, std::size_t vocab_size);

  void check_token(TokenId t) const;

  std::uint64_t seed_;
  std::uint64_t cutoff_;
  int scheme_version_;
  std::uint64_t fingerprint_;
  std::size_t vocab_size_;
  std::size_t words_per_row_;
  std::vector<std::uint64_t> bits_;
};

}  // namespace dmark
