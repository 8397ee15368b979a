#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmark/attacks.hpp"
#include "dmark/config.hpp"
#include "dmark/detector.hpp"
#include "dmark/green_matrix.hpp"
#include "dmark/strategies.hpp"
#include "dmark/toy_diffusion.hpp"

namespace dmark {

struct Sample {
  std::size_t id = 0;
  std::vector<TokenId> prompt;
  std::vector<TokenId> tokens;

  std::optional<TokenId> prompt_tail() const {
    if (prompt.empty()) return std::nullopt;
    return prompt.back();
  }
  friend bool operator==(const Sample&, const Sample&) = default;
};
using Corpus = std::vector<Sample>;

// Sidecar describing how a corpus was produced. Kept out of the JSONL token
// file so that corpora with equal tokens are byte-identical.
struct CorpusMeta {
  std::string kind;  // "baseline" or "watermarked"
  std::string key_fingerprint;
  std::string strategy = "none";
  double gamma = 0.0;
  double delta = 0.0;
  std::uint64_t seed = 0;
  std::string attack = "none";
  double attack_param = 0.0;
  std::uint64_t attack_seed = 0;
  std::size_t vocab_size = 0;
};

// Corpus JSONL: one {"id", "prompt", "tokens"} object per line.
void write_corpus(std::ostream& out, const Corpus& corpus);
Corpus read_corpus(std::istream& in);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus, const CorpusMeta& meta);
Corpus load_corpus(const std::filesystem::path& path, CorpusMeta* meta = nullptr);
std::filesystem::path meta_path(const std::filesystem::path& corpus_path);

// One detection result as written to a report file.
struct ReportLine {
  std::size_t id = 0;
  std::size_t n = 0;
  std::size_t green_count = 0;
  double z = 0.0;
  std::string strategy;
  double gamma = 0.0;
  double delta = 0.0;
  std::uint64_t seed = 0;
  std::string attack = "none";
  double attack_param = 0.0;
};
void write_reports(std::ostream& out, std::span<const ReportLine> lines);
std::vector<ReportLine> read_reports(std::istream& in);

// Mean negative log-likelihood under the model's forward bigram
// factorisation (unigram for the first token when there is no prompt).
double quality_proxy(const ToyLM& model, std::span<const TokenId> tokens,
                     std::optional<TokenId> prompt_tail = std::nullopt);

// Largest number of times any single bigram occurs in the sequence.
std::size_t max_repeated_bigram(std::span<const TokenId> tokens);

// Copy of `base` at another generation length. Steps scale with the length
// and a single-block schedule stays single-block.
RunConfig with_length(const RunConfig& base, std::size_t length);

// Paired corpus generation: sample i uses the same prompt and sampler seed
// whatever the watermark, so watermarked and baseline differ only by bias.
Corpus generate_corpus(const ToyLM& model, const RunConfig& cfg, const StrategyBias* biaser,
                       unsigned jobs = 1, std::vector<DecodeTrace>* traces = nullptr);

std::vector<DetectionReport> detect_corpus(const WatermarkKey& key, const GreenMatrix& matrix,
                                           const Corpus& corpus);

// Sample i is attacked with a seed derived from spec.rng_seed and its id.
Corpus attack_corpus(const Corpus& corpus, const AttackSpec& spec, std::size_t vocab_size,
                     const ExternalTransformer& external = {});

// Aggregated result of one experiment cell.
struct RunRecord {
  RunConfig config;
  std::vector<double> null_z;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> n;
  std::vector<std::size_t> green_count;
  std::vector<double> z;
  std::vector<double> nll;
  std::vector<std::size_t> max_bigram_repeat;

  // aggregates
  double mean_z = 0.0;
  double null_mean_z = 0.0;
  std::map<double, double> thresholds;
  TprTable tpr;
  double mean_nll = 0.0;
  double baseline_nll = 0.0;
  double left_context_fraction = 0.0;

  double wall_seconds = 0.0;  // not serialized

  // Recomputes every aggregate from the per-sample fields.
  void recompute_aggregates();
};

// JSON (one record per line). Reading verifies the stored aggregates against
// the per-sample data and throws DataError on mismatch.
std::string record_to_json(const RunRecord& rec);
RunRecord record_from_json(const std::string& line);
void write_records(std::ostream& out, std::span<const RunRecord> records);
std::vector<RunRecord> read_records(std::istream& in);

// Caches models, matrices and baseline corpora across experiment cells that
// share them.
class Workbench {
 public:
  explicit Workbench(RunConfig base, unsigned jobs = 1);

  const RunConfig& base() const noexcept { return base_; }
  const ToyLM& model();
  const GreenMatrix& matrix(double gamma);
  // Unwatermarked corpus for a given length.
  const Corpus& baseline(std::size_t length);
  // Watermarked corpus for a strategy / gamma / delta / length.
  Corpus watermarked(Strategy strategy, double gamma, double delta, std::size_t length,
                     std::vector<DecodeTrace>* traces = nullptr);

  // Generates, optionally attacks, detects, calibrates on the baseline and
  // evaluates one cell.
  RunRecord run_cell(const RunConfig& cell);

 private:
  RunConfig base_;
  unsigned jobs_;
  std::unique_ptr<ToyLM> model_;
  std::map<double, GreenMatrix> matrices_;
  std::map<std::size_t, Corpus> baselines_;
};

std::vector<RunRecord> run_sweep(const RunConfig& cfg, unsigned jobs = 1);

// Aligned text table and CSV over records. Throws DataError when empty.
std::string render_table(std::span<const RunRecord> records);
std::string render_csv(std::span<const RunRecord> records);

std::string render_thresholds(const Calibration& cal);

}  // namespace dmark
