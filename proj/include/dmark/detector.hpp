#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmark/green_matrix.hpp"
#include "dmark/keyed_partition.hpp"

namespace dmark {

// Result of forward z-score detection over one token sequence.
struct DetectionReport {
  std::size_t n = 0;            // scored positions
  std::size_t green_count = 0;  // scored positions in their forward green list
  double z = 0.0;
  std::optional<double> threshold;
  bool is_watermarked = false;
  std::vector<bool> green_flags;  // one per input token; unscored ones are false
  // Diagnostic only: positions i < last whose token is in the backward green
  // list of token i+1. Never used for the verdict.
  std::size_t backward_green_count = 0;
};

// (green - gamma n) / sqrt(gamma (1 - gamma) n).
double z_score(std::size_t green_count, std::size_t n, double gamma);

// Scores tokens against the forward green lists of their predecessors. The
// first token is scored against `prompt_tail` when given, otherwise skipped.
DetectionReport score(const WatermarkKey& key, const GreenMatrix& matrix,
                      std::span<const TokenId> tokens,
                      std::optional<TokenId> prompt_tail = std::nullopt);

// Sets threshold and verdict (z > threshold).
void apply_threshold(DetectionReport& report, double threshold);

inline const std::vector<double> kDefaultFprs = {0.005, 0.01, 0.05};

struct Calibration {
  std::vector<double> null_scores;       // ascending
  std::map<double, double> thresholds;   // FPR -> z threshold
  std::vector<std::string> warnings;

  double threshold(double fpr) const;
  // Fraction of `scores` strictly above the threshold for `fpr`.
  double achieved_fpr(std::span<const double> scores, double fpr) const;
};

// Threshold for FPR f is the ceil((1 - f) N)-th smallest null z-score.
Calibration calibrate(std::span<const double> null_z, std::span<const double> fprs = kDefaultFprs);
Calibration calibrate(std::span<const DetectionReport> null_reports,
                      std::span<const double> fprs = kDefaultFprs);

// FPR -> fraction of reports with z above the calibrated threshold.
using TprTable = std::map<double, double>;
TprTable evaluate(std::span<const double> watermarked_z, const Calibration& cal);
TprTable evaluate(std::span<const DetectionReport> watermarked, const Calibration& cal);

}  // namespace dmark
