#include "dmark/detector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dmark/errors.hpp"

namespace dmark {

double z_score(std::size_t green_count, std::size_t n, double gamma) {
  if (n == 0) throw DataError("z-score of zero scored tokens");
  const double nn = static_cast<double>(n);
  return (static_cast<double>(green_count) - gamma * nn) / std::sqrt(gamma * (1.0 - gamma) * nn);
}

DetectionReport score(const WatermarkKey& key, const GreenMatrix& matrix,
                      std::span<const TokenId> tokens, std::optional<TokenId> prompt_tail) {
  matrix.check_key(key);
  if (tokens.empty()) throw DataError("cannot score an empty token sequence");
  if (tokens.size() < 2 && !prompt_tail) {
    throw DataError("a single token needs a prompt tail to be scored");
  }

  DetectionReport r;
  r.green_flags.assign(tokens.size(), false);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::optional<TokenId> context;
    if (i > 0) {
      context = tokens[i - 1];
    } else {
      context = prompt_tail;
    }
    if (!context) continue;
    ++r.n;
    if (matrix.contains(*context, tokens[i])) {
      r.green_flags[i] = true;
      ++r.green_count;
    }
  }
  // Backward view: x_i makes x_{i+1} green, which is the forward event at
  // i+1 seen from the other side.
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    if (r.green_flags[i + 1]) ++r.backward_green_count;
  }
  r.z = z_score(r.green_count, r.n, key.gamma());
  return r;
}

void apply_threshold(DetectionReport& report, double threshold) {
  report.threshold = threshold;
  report.is_watermarked = report.z > threshold;
}

double Calibration::threshold(double fpr) const {
  auto it = thresholds.find(fpr);
  if (it == thresholds.end()) {
    throw DataError("no calibrated threshold for FPR " + std::to_string(fpr));
  }
  return it->second;
}

double Calibration::achieved_fpr(std::span<const double> scores, double fpr) const {
  if (scores.empty()) throw DataError("achieved FPR of an empty score list");
  const double t = threshold(fpr);
  const auto above = std::count_if(scores.begin(), scores.end(), [t](double z) { return z > t; });
  return static_cast<double>(above) / static_cast<double>(scores.size());
}

Calibration calibrate(std::span<const double> null_z, std::span<const double> fprs) {
  if (null_z.empty()) throw DataError("calibration needs at least one null score");
  Calibration cal;
  cal.null_scores.assign(null_z.begin(), null_z.end());
  std::sort(cal.null_scores.begin(), cal.null_scores.end());
  const std::size_t n = cal.null_scores.size();
  for (double f : fprs) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("FPR must lie strictly between 0 and 1");
    if (f * static_cast<double>(n) < 1.0) {
      cal.warnings.push_back("only " + std::to_string(n) + " null samples for FPR " +
                             std::to_string(f) + ": quantile unstable");
    }
    // 1-based rank ceil((1 - f) N), clamped to at least the first order statistic.
    auto rank = static_cast<std::size_t>(std::ceil((1.0 - f) * static_cast<double>(n) - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, n);
    cal.thresholds[f] = cal.null_scores[rank - 1];
  }
  return cal;
}

Calibration calibrate(std::span<const DetectionReport> null_reports, std::span<const double> fprs) {
  std::vector<double> z;
  z.reserve(null_reports.size());
  for (const auto& r : null_reports) z.push_back(r.z);
  return calibrate(z, fprs);
}

TprTable evaluate(std::span<const double> watermarked_z, const Calibration& cal) {
  TprTable out;
  for (const auto& [fpr, t] : cal.thresholds) {
    if (watermarked_z.empty()) {
      out[fpr] = 0.0;
      continue;
    }
    const auto hits = std::count_if(watermarked_z.begin(), watermarked_z.end(),
                                    [t = t](double z) { return z > t; });
    out[fpr] = static_cast<double>(hits) / static_cast<double>(watermarked_z.size());
  }
  return out;
}

TprTable evaluate(std::span<const DetectionReport> watermarked, const Calibration& cal) {
  std::vector<double> z;
  z.reserve(watermarked.size());
  for (const auto& r : watermarked) z.push_back(r.z);
  return evaluate(z, cal);
}

}  // namespace dmark
