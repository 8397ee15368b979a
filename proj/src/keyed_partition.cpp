#include "dmark/keyed_partition.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "dmark/errors.hpp"
#include "dmark/rng.hpp"

namespace dmark {
namespace {

std::uint64_t mix2(std::uint64_t z) noexcept { return splitmix64_mix(splitmix64_mix(z)); }

std::uint64_t cutoff_for(double gamma) {
  // gamma < 1, so gamma * 2^64 < 2^64 and the conversion cannot overflow.
  return static_cast<std::uint64_t>(std::floor(std::ldexp(gamma, 64)));
}

}  // namespace

WatermarkKey::WatermarkKey(std::uint64_t seed, double gamma, double delta, int scheme_version)
    : seed_(seed), gamma_(gamma), delta_(delta), scheme_version_(scheme_version), cutoff_(0) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw ConfigError("gamma must lie strictly between 0 and 1");
  }
  if (!(delta >= 0.0) || !std::isfinite(delta)) {
    throw ConfigError("delta must be a finite non-negative number");
  }
  if (scheme_version != kCurrentSchemeVersion) {
    throw ConfigError("unsupported hash scheme version " + std::to_string(scheme_version));
  }
  cutoff_ = cutoff_for(gamma);
}

std::uint64_t WatermarkKey::fingerprint() const noexcept {
  std::uint64_t h = mix2(seed_ ^ 0x646D61726B6B6579ULL);  // "dmarkkey"
  h = mix2(h ^ cutoff_);
  h = mix2(h ^ static_cast<std::uint64_t>(scheme_version_));
  return h;
}

WatermarkKey WatermarkKey::with_delta(double delta) const {
  return WatermarkKey(seed_, gamma_, delta, scheme_version_);
}

std::uint64_t hash_context_raw(std::uint64_t seed, TokenId prev) noexcept {
  return mix2(seed ^ (static_cast<std::uint64_t>(prev) * kGoldenGamma));
}

std::uint64_t hash_context(const WatermarkKey& key, TokenId prev, std::size_t vocab_size) {
  if (prev >= vocab_size) {
    throw std::out_of_range("context token " + std::to_string(prev) +
                            " outside vocabulary of size " + std::to_string(vocab_size));
  }
  return hash_context_raw(key.seed(), prev);
}

std::uint64_t score_bits(std::uint64_t context_hash, TokenId v) noexcept {
  return mix2(context_hash ^ (static_cast<std::uint64_t>(v) * kGoldenGamma));
}

double uniform_score(std::uint64_t context_hash, TokenId v) noexcept {
  return static_cast<double>(score_bits(context_hash, v) >> 11) * 0x1.0p-53;
}

bool is_green(const WatermarkKey& key, TokenId prev, TokenId v) {
  return score_bits(hash_context_raw(key.seed(), prev), v) < key.green_cutoff();
}

TokenBitset green_set(const WatermarkKey& key, TokenId prev, std::size_t vocab_size) {
  const std::uint64_t h = hash_context(key, prev, vocab_size);
  const std::uint64_t cutoff = key.green_cutoff();
  TokenBitset out(vocab_size);
  for (std::size_t v = 0; v < vocab_size; ++v) {
    if (score_bits(h, static_cast<TokenId>(v)) < cutoff) out.set(v);
  }
  return out;
}

void write_key(std::ostream& out, const WatermarkKey& key) {
  char buf[64];
  out << "seed=" << key.seed() << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", key.gamma());
  out << "gamma=" << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", key.delta());
  out << "delta=" << buf << '\n';
  out << "scheme_version=" << key.scheme_version() << '\n';
}

WatermarkKey read_key(std::istream& in) {
  std::map<std::string, std::string> fields;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed key line: " + line);
    fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* name : {"seed", "gamma", "delta", "scheme_version"}) {
    if (!fields.contains(name)) throw DataError(std::string("key file lacks ") + name);
  }
  try {
    return WatermarkKey(std::stoull(fields["seed"]), std::stod(fields["gamma"]),
                        std::stod(fields["delta"]), std::stoi(fields["scheme_version"]));
  } catch (const std::logic_error& e) {
    throw DataError(std::string("unparseable key field: ") + e.what());
  }
}

void save_key(const std::filesystem::path& path, const WatermarkKey& key) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write key file " + path.string());
  write_key(out, key);
}

WatermarkKey load_key(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open key file " + path.string());
  return read_key(in);
}

std::string fingerprint_hex(std::uint64_t fingerprint) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fingerprint);
  return buf;
}

}  // namespace dmark
