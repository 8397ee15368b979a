#include "dmark/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <mutex>
#include <thread>

#include "dmark/errors.hpp"
#include "json.hpp"

namespace dmark {
namespace {

using nlohmann::json;

constexpr std::uint64_t kPromptStream = 0x70726F6D7074ULL;  // "prompt"
constexpr std::uint64_t kSampleStream = 0x73616D706C65ULL;  // "sample"
constexpr std::uint64_t kAttackStream = 0x61747461636BULL;  // "attack"

// Runs fn(i) for i in [0, count) on up to `jobs` threads. Each index is
// handled independently, so results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn&& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < std::min<std::size_t>(jobs, count); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

json tpr_to_json(const std::map<double, double>& m) {
  json out = json::array();
  for (const auto& [fpr, v] : m) out.push_back({fpr, v});
  return out;
}

std::map<double, double> tpr_from_json(const json& j) {
  std::map<double, double> out;
  for (const auto& pair : j) out[pair.at(0).get<double>()] = pair.at(1).get<double>();
  return out;
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); }


std::string percent(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * x);
  return buf;
}

std::string fixed(double x, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

}  // namespace

RunConfig with_length(const RunConfig& base, std::size_t length) {
  RunConfig cfg = base;
  if (length == base.length) return cfg;
  cfg.length = length;
  cfg.steps = std::max<std::size_t>(1, length * base.steps / base.length);
  cfg.block_size = base.block_size == base.length ? length : base.block_size;
  return cfg;
}

// ---------------------------------------------------------------------------
// Corpus and report files

void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& s : corpus) {
    json j;
    j["id"] = s.id;
    j["prompt"] = s.prompt;
    j["tokens"] = s.tokens;
    out << j.dump() << '\n';
  }
}

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Sample s;
      s.id = j.at("id").get<std::size_t>();
      s.prompt = j.at("prompt").get<std::vector<TokenId>>();
      s.tokens = j.at("tokens").get<std::vector<TokenId>>();
      corpus.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return corpus;
}

std::filesystem::path meta_path(const std::filesystem::path& corpus_path) {
  auto p = corpus_path;
  p.replace_extension(".meta.json");
  return p;
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus, const CorpusMeta& meta) {
  {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write corpus " + path.string());
    write_corpus(out, corpus);
  }
  json m;
  m["kind"] = meta.kind;
  m["key_fingerprint"] = meta.key_fingerprint;
  m["strategy"] = meta.strategy;
  m["gamma"] = meta.gamma;
  m["delta"] = meta.delta;
  m["seed"] = meta.seed;
  m["attack"] = meta.attack;
  m["attack_param"] = meta.attack_param;
  m["attack_seed"] = meta.attack_seed;
  m["vocab_size"] = meta.vocab_size;
  std::ofstream out(meta_path(path));
  if (!out) throw DataError("cannot write corpus metadata for " + path.string());
  out << m.dump(2) << '\n';
}

Corpus load_corpus(const std::filesystem::path& path, CorpusMeta* meta) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path.string());
  Corpus corpus = read_corpus(in);
  if (meta != nullptr) {
    std::ifstream min(meta_path(path));
    if (!min) throw DataError("missing corpus metadata " + meta_path(path).string());
    try {
      const json m = json::parse(min);
      meta->kind = m.at("kind").get<std::string>();
      meta->key_fingerprint = m.at("key_fingerprint").get<std::string>();
      meta->strategy = m.at("strategy").get<std::string>();
      meta->gamma = m.at("gamma").get<double>();
      meta->delta = m.at("delta").get<double>();
      meta->seed = m.at("seed").get<std::uint64_t>();
      meta->attack = m.at("attack").get<std::string>();
      meta->attack_param = m.at("attack_param").get<double>();
      meta->attack_seed = m.at("attack_seed").get<std::uint64_t>();
      meta->vocab_size = m.at("vocab_size").get<std::size_t>();
    } catch (const json::exception& e) {
      throw DataError("corpus metadata: " + std::string(e.what()));
    }
  }
  return corpus;
}

void write_reports(std::ostream& out, std::span<const ReportLine> lines) {
  for (const auto& r : lines) {
    json j;
    j["id"] = r.id;
    j["n"] = r.n;
    j["green_count"] = r.green_count;
    j["z"] = r.z;
    j["strategy"] = r.strategy;
    j["gamma"] = r.gamma;
    j["delta"] = r.delta;
    j["seed"] = r.seed;
    j["attack"] = r.attack;
    j["attack_param"] = r.attack_param;
    out << j.dump() << '\n';
  }
}

std::vector<ReportLine> read_reports(std::istream& in) {
  std::vector<ReportLine> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ReportLine r;
      r.id = j.at("id").get<std::size_t>();
      r.n = j.at("n").get<std::size_t>();
      r.green_count = j.at("green_count").get<std::size_t>();
      r.z = j.at("z").get<double>();
      r.strategy = j.at("strategy").get<std::string>();
      r.gamma = j.at("gamma").get<double>();
      r.delta = j.at("delta").get<double>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.attack = j.at("attack").get<std::string>();
      r.attack_param = j.at("attack_param").get<double>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError("report line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-sample statistics

double quality_proxy(const ToyLM& model, std::span<const TokenId> tokens,
                     std::optional<TokenId> prompt_tail) {
  if (tokens.empty()) throw DataError("quality proxy of an empty sequence");
  std::vector<double> row(model.vocab_size());
  double total = 0.0;
  std::optional<TokenId> left = prompt_tail;
  for (TokenId t : tokens) {
    if (t >= model.vocab_size()) throw DataError("token outside model vocabulary");
    model.context_logits(left, std::nullopt, row);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double x : row) z += std::exp(x - m);
    total += -(row[t] - m - std::log(z));
    left = t;
  }
  return total / static_cast<double>(tokens.size());
}

std::size_t max_repeated_bigram(std::span<const TokenId> tokens) {
  std::map<std::pair<TokenId, TokenId>, std::size_t> counts;
  std::size_t best = 0;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    best = std::max(best, ++counts[{tokens[i], tokens[i + 1]}]);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Corpus operations

Corpus generate_corpus(const ToyLM& model, const RunConfig& cfg, const StrategyBias* biaser,
                       unsigned jobs, std::vector<DecodeTrace>* traces) {
  cfg.validate();
  if (cfg.vocab_size != model.vocab_size()) {
    throw ConfigError("config vocab_size differs from the model's");
  }
  Corpus corpus(cfg.samples);
  if (traces != nullptr) traces->assign(cfg.samples, DecodeTrace{});
  const DecodeSchedule schedule = cfg.schedule();
  parallel_for(cfg.samples, jobs, [&](std::size_t i) {
    Sample& s = corpus[i];
    s.id = i;
    s.prompt = sample_prompt(model, cfg.prompt_length, 1.0,
                             derive_seed(cfg.corpus_seed, kPromptStream, i));
    Sampler sampler(cfg.temperature, derive_seed(cfg.corpus_seed, kSampleStream, i));
    s.tokens = decode(model, s.prompt, schedule, sampler, biaser,
                      traces != nullptr ? &(*traces)[i] : nullptr);
  });
  return corpus;
}

std::vector<DetectionReport> detect_corpus(const WatermarkKey& key, const GreenMatrix& matrix,
                                           const Corpus& corpus) {
  std::vector<DetectionReport> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.push_back(score(key, matrix, s.tokens, s.prompt_tail()));
  return out;
}

Corpus attack_corpus(const Corpus& corpus, const AttackSpec& spec, std::size_t vocab_size,
                     const ExternalTransformer& external) {
  Corpus out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) {
    AttackSpec per = spec;
    per.rng_seed = derive_seed(spec.rng_seed, kAttackStream, s.id);
    Sample a = s;
    a.tokens = apply_attack(per, s.tokens, vocab_size, external).tokens;
    out.push_back(std::move(a));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Records

void RunRecord::recompute_aggregates() {
  mean_z = mean(z);
  null_mean_z = mean(null_z);
  if (!null_z.empty()) {
    const Calibration cal = calibrate(null_z);
    thresholds = cal.thresholds;
    tpr = evaluate(z, cal);
  } else {
    thresholds.clear();
    tpr.clear();
  }
  mean_nll = mean(nll);
}

std::string record_to_json(const RunRecord& rec) {
  json j;
  json cfg = json::object();
  for (const auto& [k, v] : config_to_map(rec.config)) cfg[k] = v;
  j["config"] = cfg;
  j["null_z"] = rec.null_z;
  j["samples"] = {{"id", rec.ids},
                  {"n", rec.n},
                  {"green_count", rec.green_count},
                  {"z", rec.z},
                  {"nll", rec.nll},
                  {"max_bigram_repeat", rec.max_bigram_repeat}};
  j["aggregates"] = {{"mean_z", rec.mean_z},
                     {"null_mean_z", rec.null_mean_z},
                     {"thresholds", tpr_to_json(rec.thresholds)},
                     {"tpr", tpr_to_json(rec.tpr)},
                     {"mean_nll", rec.mean_nll},
                     {"baseline_nll", rec.baseline_nll},
                     {"left_context_fraction", rec.left_context_fraction}};
  return j.dump();
}

RunRecord record_from_json(const std::string& line) {
  RunRecord rec;
  try {
    const json j = json::parse(line);
    for (const auto& [k, v] : j.at("config").items()) {
      set_config_value(rec.config, k, v.get<std::string>());
    }
    rec.null_z = j.at("null_z").get<std::vector<double>>();
    const json& s = j.at("samples");
    rec.ids = s.at("id").get<std::vector<std::size_t>>();
    rec.n = s.at("n").get<std::vector<std::size_t>>();
    rec.green_count = s.at("green_count").get<std::vector<std::size_t>>();
    rec.z = s.at("z").get<std::vector<double>>();
    rec.nll = s.at("nll").get<std::vector<double>>();
    rec.max_bigram_repeat = s.at("max_bigram_repeat").get<std::vector<std::size_t>>();
    const json& a = j.at("aggregates");
    rec.mean_z = a.at("mean_z").get<double>();
    rec.null_mean_z = a.at("null_mean_z").get<double>();
    rec.thresholds = tpr_from_json(a.at("thresholds"));
    rec.tpr = tpr_from_json(a.at("tpr"));
    rec.mean_nll = a.at("mean_nll").get<double>();
    rec.baseline_nll = a.at("baseline_nll").get<double>();
    rec.left_context_fraction = a.at("left_context_fraction").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed run record: ") + e.what());
  }

  const std::size_t count = rec.z.size();
  if (rec.ids.size() != count || rec.n.size() != count || rec.green_count.size() != count ||
      rec.nll.size() != count || rec.max_bigram_repeat.size() != count) {
    throw DataError("run record per-sample arrays disagree in length");
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (rec.n[i] == 0 || !close(z_score(rec.green_count[i], rec.n[i], rec.config.gamma), rec.z[i])) {
      throw DataError("run record sample " + std::to_string(rec.ids[i]) +
                      " has a z-score inconsistent with its counts");
    }
  }
  RunRecord check = rec;
  check.recompute_aggregates();
  bool ok = close(check.mean_z, rec.mean_z) && close(check.null_mean_z, rec.null_mean_z) &&
            close(check.mean_nll, rec.mean_nll) && check.tpr.size() == rec.tpr.size() &&
            check.thresholds.size() == rec.thresholds.size();
  for (const auto& [f, v] : check.tpr) ok = ok && rec.tpr.contains(f) && close(rec.tpr.at(f), v);
  for (const auto& [f, v] : check.thresholds) {
    ok = ok && rec.thresholds.contains(f) && close(rec.thresholds.at(f), v);
  }
  if (!ok) throw DataError("run record aggregates do not match its samples");
  return rec;
}

void write_records(std::ostream& out, std::span<const RunRecord> records) {
  for (const auto& r : records) out << record_to_json(r) << '\n';
}

std::vector<RunRecord> read_records(std::istream& in) {
  std::vector<RunRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(record_from_json(line));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Workbench

Workbench::Workbench(RunConfig base, unsigned jobs) : base_(std::move(base)), jobs_(jobs) {
  base_.validate();
}

const ToyLM& Workbench::model() {
  if (!model_) model_ = std::make_unique<ToyLM>(ToyLM::random(base_.model_spec()));
  return *model_;
}

const GreenMatrix& Workbench::matrix(double gamma) {
  auto it = matrices_.find(gamma);
  if (it == matrices_.end()) {
    const WatermarkKey key(base_.key_seed, gamma, 0.0);
    it = matrices_.emplace(gamma, GreenMatrix::build(key, base_.vocab_size)).first;
  }
  return it->second;
}

const Corpus& Workbench::baseline(std::size_t length) {
  auto it = baselines_.find(length);
  if (it == baselines_.end()) {
    it = baselines_.emplace(length, generate_corpus(model(), with_length(base_, length), nullptr,
                                                    jobs_))
             .first;
  }
  return it->second;
}

Corpus Workbench::watermarked(Strategy strategy, double gamma, double delta, std::size_t length,
                              std::vector<DecodeTrace>* traces) {
  const WatermarkKey key(base_.key_seed, gamma, delta);
  const StrategyBias bias(strategy, key, matrix(gamma));
  return generate_corpus(model(), with_length(base_, length), &bias, jobs_, traces);
}

RunRecord Workbench::run_cell(const RunConfig& cell) {
  const auto start = std::chrono::steady_clock::now();
  cell.validate();
  if (cell.model_spec().seed != base_.model_seed || cell.vocab_size != base_.vocab_size) {
    throw ConfigError("experiment cell uses a different model than its workbench");
  }
  RunRecord rec;
  rec.config = with_length(cell, cell.length);
  const WatermarkKey key = cell.key();
  const GreenMatrix& m = matrix(cell.gamma);

  const Corpus& null_corpus = baseline(cell.length);
  std::vector<DecodeTrace> traces;
  Corpus wm = watermarked(cell.strategy, cell.gamma, cell.delta, cell.length, &traces);
  if (cell.attack != AttackKind::kNone) {
    wm = attack_corpus(wm, cell.attack_spec(), cell.vocab_size);
  }

  for (const auto& r : detect_corpus(key, m, null_corpus)) rec.null_z.push_back(r.z);
  const auto reports = detect_corpus(key, m, wm);
  double left_fraction = 0.0;
  std::vector<double> base_nll;
  for (std::size_t i = 0; i < wm.size(); ++i) {
    rec.ids.push_back(wm[i].id);
    rec.n.push_back(reports[i].n);
    rec.green_count.push_back(reports[i].green_count);
    rec.z.push_back(reports[i].z);
    rec.nll.push_back(quality_proxy(model(), wm[i].tokens, wm[i].prompt_tail()));
    rec.max_bigram_repeat.push_back(max_repeated_bigram(wm[i].tokens));
    left_fraction += traces[i].left_context_fraction();
  }
  for (const auto& s : null_corpus) {
    base_nll.push_back(quality_proxy(model(), s.tokens, s.prompt_tail()));
  }
  rec.left_context_fraction = left_fraction / static_cast<double>(wm.size());
  rec.baseline_nll = mean(base_nll);
  rec.recompute_aggregates();
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

std::vector<RunRecord> run_sweep(const RunConfig& cfg, unsigned jobs) {
  cfg.validate();
  Workbench bench(cfg, jobs);
  std::vector<RunRecord> out;
  for (std::size_t length : cfg.sweep_lengths) {
    for (Strategy s : cfg.sweep_strategies) {
      for (double gamma : cfg.sweep_gammas) {
        for (double delta : cfg.sweep_deltas) {
          RunConfig cell = with_length(cfg, length);
          cell.strategy = s;
          cell.gamma = gamma;
          cell.delta = delta;
          out.push_back(bench.run_cell(cell));
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

std::string render_table(std::span<const RunRecord> records) {
  if (records.empty()) throw DataError("no data: there are no run records to report");
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"strategy", "gamma", "delta", "n", "attack", "rate", "samples", "mean_z",
                  "TPR@0.5%", "TPR@1%", "TPR@5%", "NLL", "base_NLL", "left_ctx"});
  for (const auto& r : records) {
    auto tpr = [&](double f) { return r.tpr.contains(f) ? percent(r.tpr.at(f)) : "-"; };
    rows.push_back({std::string(strategy_name(r.config.strategy)), format_double(r.config.gamma),
                    format_double(r.config.delta), std::to_string(r.config.length),
                    std::string(attack_name(r.config.attack)), format_double(r.config.attack_rate),
                    std::to_string(r.z.size()), fixed(r.mean_z, 3), tpr(0.005), tpr(0.01),
                    tpr(0.05), fixed(r.mean_nll, 3), fixed(r.baseline_nll, 3),
                    fixed(r.left_context_fraction, 3)});
  }
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) out << "  ";
      if (c < 1 || c == 4) {
        out << row[c] << std::string(width[c] - row[c].size(), ' ');
      } else {
        out << std::string(width[c] - row[c].size(), ' ') << row[c];
      }
    }
    out << '\n';
  }
  return out.str();
}

std::string render_csv(std::span<const RunRecord> records) {
  if (records.empty()) throw DataError("no data: there are no run records to report");
  std::ostringstream out;
  out << "strategy,gamma,delta,n,attack,rate,samples,mean_z,tpr_0.5,tpr_1,tpr_5,nll,base_nll,"
         "left_ctx\n";
  for (const auto& r : records) {
    auto tpr = [&](double f) { return r.tpr.contains(f) ? format_double(r.tpr.at(f)) : ""; };
    out << strategy_name(r.config.strategy) << ',' << format_double(r.config.gamma) << ','
        << format_double(r.config.delta) << ',' << r.config.length << ','
        << attack_name(r.config.attack) << ',' << format_double(r.config.attack_rate) << ','
        << r.z.size() << ',' << format_double(r.mean_z) << ',' << tpr(0.005) << ',' << tpr(0.01)
        << ',' << tpr(0.05) << ',' << format_double(r.mean_nll) << ','
        << format_double(r.baseline_nll) << ',' << format_double(r.left_context_fraction) << '\n';
  }
  return out.str();
}

std::string render_thresholds(const Calibration& cal) {
  std::ostringstream out;
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-8s  %12s  %8s\n", "fpr", "z_threshold", "n_null");
  out << buf;
  for (const auto& [fpr, t] : cal.thresholds) {
    std::snprintf(buf, sizeof buf, "%-8s  %12.6f  %8zu\n", format_double(fpr).c_str(), t,
                  cal.null_scores.size());
    out << buf;
  }
  return out.str();
}

}  // namespace dmark
