#include "dmark/green_matrix.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>

#include "dmark/errors.hpp"

namespace dmark {
namespace {

constexpr std::array<char, 8> kMagic = {'D', 'M', 'K', 'G', 'M', 'A', 'T', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), b.size());
  if (!in) throw DataError("truncated green matrix cache");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

void fill_rows(std::uint64_t seed, std::uint64_t cutoff, std::size_t vocab_size,
               std::size_t words_per_row, std::size_t row_begin, std::size_t row_end,
               std::uint64_t* bits) {
  for (std::size_t u = row_begin; u < row_end; ++u) {
    const std::uint64_t h = hash_context_raw(seed, static_cast<TokenId>(u));
    std::uint64_t* row = bits + u * words_per_row;
    for (std::size_t v = 0; v < vocab_size; ++v) {
      if (score_bits(h, static_cast<TokenId>(v)) < cutoff) {
        row[v >> 6] |= std::uint64_t{1} << (v & 63);
      }
    }
  }
}

}  // namespace

GreenMatrix::GreenMatrix(const WatermarkKey& key, std::size_t vocab_size)
    : seed_(key.seed()),
      cutoff_(key.green_cutoff()),
      scheme_version_(key.scheme_version()),
      fingerprint_(key.fingerprint()),
      vocab_size_(vocab_size),
      words_per_row_(TokenBitset::word_count(vocab_size)) {
  if (vocab_size < 2) throw ConfigError("vocabulary must hold at least two tokens");
}

GreenMatrix GreenMatrix::build(const WatermarkKey& key, std::size_t vocab_size,
                               std::size_t budget_bytes, unsigned threads) {
  GreenMatrix m(key, vocab_size);
  const std::size_t words = m.words_per_row_ * vocab_size;
  if (vocab_size > (std::size_t{1} << 31) || words > budget_bytes / sizeof(std::uint64_t)) {
    throw CapacityError("green matrix for |V|=" + std::to_string(vocab_size) + " needs " +
                        std::to_string(words * sizeof(std::uint64_t)) +
                        " bytes, over the budget of " + std::to_string(budget_bytes) +
                        "; use GreenMatrix::make_virtual for on-the-fly rows");
  }
  m.bits_.assign(words, 0);
  threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(vocab_size)));
  if (threads == 1) {
    fill_rows(m.seed_, m.cutoff_, vocab_size, m.words_per_row_, 0, vocab_size, m.bits_.data());
  } else {
    // Rows are independent, so any partition yields identical bytes.
    std::vector<std::thread> pool;
    const std::size_t chunk = (vocab_size + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(vocab_size, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(fill_rows, m.seed_, m.cutoff_, vocab_size, m.words_per_row_, begin, end,
                        m.bits_.data());
    }
    for (auto& th : pool) th.join();
  }
  return m;
}

GreenMatrix GreenMatrix::make_virtual(const WatermarkKey& key, std::size_t vocab_size) {
  return GreenMatrix(key, vocab_size);
}

void GreenMatrix::check_token(TokenId t) const {
  if (t >= vocab_size_) {
    throw std::out_of_range("token " + std::to_string(t) + " outside vocabulary of size " +
                            std::to_string(vocab_size_));
  }
}

bool GreenMatrix::contains(TokenId prev, TokenId next) const {
  check_token(prev);
  check_token(next);
  if (materialized()) {
    return (bits_[prev * words_per_row_ + (next >> 6)] >> (next & 63)) & 1U;
  }
  return score_bits(hash_context_raw(seed_, prev), next) < cutoff_;
}

std::span<const std::uint64_t> GreenMatrix::row_words(TokenId prev) const {
  check_token(prev);
  if (!materialized()) throw ContractViolation("row_words needs a materialized matrix");
  return std::span<const std::uint64_t>(bits_).subspan(prev * words_per_row_, words_per_row_);
}

TokenBitset GreenMatrix::forward_green(TokenId prev) const {
  check_token(prev);
  if (materialized()) return TokenBitset(vocab_size_, row_words(prev));
  TokenBitset out(vocab_size_);
  const std::uint64_t h = hash_context_raw(seed_, prev);
  for (std::size_t v = 0; v < vocab_size_; ++v) {
    if (score_bits(h, static_cast<TokenId>(v)) < cutoff_) out.set(v);
  }
  return out;
}

TokenBitset GreenMatrix::backward_green(TokenId next) const {
  check_token(next);
  TokenBitset out(vocab_size_);
  if (materialized()) {
    // Strided gather down column `next`.
    const std::size_t word = next >> 6;
    const unsigned shift = next & 63;
    const std::uint64_t* p = bits_.data() + word;
    for (std::size_t u = 0; u < vocab_size_; ++u, p += words_per_row_) {
      if ((*p >> shift) & 1U) out.set(u);
    }
    return out;
  }
  for (std::size_t u = 0; u < vocab_size_; ++u) {
    if (score_bits(hash_context_raw(seed_, static_cast<TokenId>(u)), next) < cutoff_) out.set(u);
  }
  return out;
}

void GreenMatrix::check_key(const WatermarkKey& key) const {
  if (key.fingerprint() != fingerprint_) {
    throw DataError("watermark key fingerprint " + fingerprint_hex(key.fingerprint()) +
                    " does not match green matrix fingerprint " + fingerprint_hex(fingerprint_));
  }
}

void GreenMatrix::save(const std::filesystem::path& path) const {
  if (!materialized()) throw ContractViolation("cannot cache a virtual green matrix");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write green matrix cache " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_u64(out, static_cast<std::uint64_t>(scheme_version_));
  put_u64(out, vocab_size_);
  put_u64(out, fingerprint_);
  for (auto w : bits_) put_u64(out, w);
}

GreenMatrix GreenMatrix::load(const std::filesystem::path& path, const WatermarkKey& key) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open green matrix cache " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("not a green matrix cache: " + path.string());
  const auto version = get_u64(in);
  const auto vocab = get_u64(in);
  const auto fp = get_u64(in);
  if (version != static_cast<std::uint64_t>(key.scheme_version())) {
    throw DataError("green matrix cache uses scheme version " + std::to_string(version));
  }
  if (fp != key.fingerprint()) {
    throw DataError("green matrix cache was built with a different key");
  }
  GreenMatrix m(key, vocab);
  m.bits_.resize(m.words_per_row_ * vocab);
  for (auto& w : m.bits_) w = get_u64(in);
  return m;
}

}  // namespace dmark
