#pragma once

// Test-side reference implementations. Written independently of the library
// and kept deliberately naive.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace oracle {

inline std::uint64_t finalizer(std::uint64_t x) {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t keyed_mix(std::uint64_t a, std::uint64_t b) {
  return finalizer(finalizer(a ^ (b * 0x9E3779B97F4A7C15ULL)));
}

// Membership straight from the definition: score / 2^64 < gamma, evaluated
// in long double so that it does not share the library's integer cut-off.
inline bool green(std::uint64_t seed, std::uint32_t prev, std::uint32_t v, double gamma) {
  const std::uint64_t bits = keyed_mix(keyed_mix(seed, prev), v);
  return std::ldexp(static_cast<long double>(bits), -64) < static_cast<long double>(gamma);
}

struct GoldenVector {
  std::uint64_t seed;
  std::uint32_t prev;
  std::uint64_t hash;
  std::uint64_t score;
};

inline std::vector<GoldenVector> load_golden(const std::string& path) {
  std::ifstream in(path);
  std::vector<GoldenVector> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    GoldenVector g{};
    ss >> g.seed >> g.prev >> g.hash >> g.score;
    out.push_back(g);
  }
  return out;
}

inline double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double stddev(const std::vector<double>& xs) {
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace oracle
