#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace dmark {

// Fixed-size packed set of token ids, 64 tokens per word, LSB first.
class TokenBitset {
 public:
  TokenBitset() = default;
  explicit TokenBitset(std::size_t size)
      : size_(size), words_(word_count(size), 0) {}
  TokenBitset(std::size_t size, std::span<const std::uint64_t> words)
      : size_(size), words_(words.begin(), words.end()) {}

  static constexpr std::size_t word_count(std::size_t bits) { return (bits + 63) / 64; }

  std::size_t size() const noexcept { return size_; }

  bool test(std::size_t i) const noexcept { return (words_[i >> 6] >> (i & 63)) & 1U; }
  void set(std::size_t i) noexcept { words_[i >> 6] |= std::uint64_t{1} << (i & 63); }

  void set_all() noexcept {
    for (auto& w : words_) w = ~std::uint64_t{0};
    trim();
  }

  std::size_t count() const noexcept {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }

  std::span<const std::uint64_t> words() const noexcept { return words_; }

  friend bool operator==(const TokenBitset&, const TokenBitset&) = default;

 private:
  void trim() noexcept {
    if (size_ % 64 != 0 && !words_.empty()) {
      words_.back() &= (std::uint64_t{1} << (size_ % 64)) - 1;
    }
  }

  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

// Number of positions where the two sets differ.
inline std::size_t hamming_distance(const TokenBitset& a, const TokenBitset& b) {
  std::size_t d = 0;
  auto wa = a.words();
  auto wb = b.words();
  for (std::size_t i = 0; i < wa.size() && i < wb.size(); ++i) {
    d += static_cast<std::size_t>(std::popcount(wa[i] ^ wb[i]));
  }
  return d;
}

}  // namespace dmark
