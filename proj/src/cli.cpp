#include "dmark/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dmark/config.hpp"
#include "dmark/detector.hpp"
#include "dmark/errors.hpp"
#include "dmark/green_matrix.hpp"
#include "dmark/harness.hpp"

namespace dmark {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Flags shared by every subcommand. Each maps onto a config key and is
// applied after the config file, followed by the generic --set pairs.
struct CommonOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  unsigned jobs = 1;
};

const std::vector<std::pair<std::string, std::string>> kFlagKeys = {
    {"--vocab-size", "vocab_size"},   {"--model-seed", "model_seed"},
    {"--length", "length"},           {"--steps", "steps"},
    {"--block-size", "block_size"},   {"--temperature", "temperature"},
    {"--strategy", "strategy"},       {"--key-seed", "key_seed"},
    {"--gamma", "gamma"},             {"--delta", "delta"},
    {"--samples", "samples"},         {"--corpus-seed", "corpus_seed"},
    {"--attack", "attack"},           {"--rate", "attack_rate"},
    {"--attack-seed", "attack_seed"}, {"--output-dir", "output_dir"},
};

void add_common(CLI::App* sub, CommonOptions& opts) {
  sub->add_option("--config", opts.config_path, "flat key = value config file");
  sub->add_option("--set", opts.sets, "override any config key (KEY=VALUE, repeatable)");
  for (const auto& [flag, key] : kFlagKeys) {
    sub->add_option(flag, opts.flags[key], "override '" + key + "'");
  }
  sub->add_option("--jobs", opts.jobs, "worker threads")->check(CLI::PositiveNumber);
}

RunConfig resolve_config(const CommonOptions& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : load_config(opts.config_path);
  for (const auto& [key, value] : opts.flags) {
    if (!value.empty()) set_config_value(cfg, key, value);
  }
  for (const auto& kv : opts.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

fs::path with_suffix(const fs::path& path, const std::string& suffix) {
  fs::path out = path;
  out.replace_extension();
  out += suffix;
  return out;
}

CorpusMeta corpus_meta(const RunConfig& cfg, const WatermarkKey& key, bool watermarked) {
  CorpusMeta meta;
  meta.kind = watermarked ? "watermarked" : "baseline";
  meta.key_fingerprint = fingerprint_hex(key.fingerprint());
  meta.strategy = watermarked ? std::string(strategy_name(cfg.strategy)) : "none";
  meta.gamma = cfg.gamma;
  meta.delta = watermarked ? cfg.delta : 0.0;
  meta.seed = cfg.key_seed;
  meta.vocab_size = cfg.vocab_size;
  return meta;
}

int cmd_generate(const CommonOptions& opts, std::ostream& out) {
  const RunConfig cfg = resolve_config(opts);
  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);
  const WatermarkKey key = cfg.key();
  const ToyLM model = ToyLM::random(cfg.model_spec());
  const GreenMatrix matrix = GreenMatrix::build(key, cfg.vocab_size, kDefaultMatrixBudgetBytes,
                                                opts.jobs);
  const StrategyBias biaser(cfg.strategy, key, matrix);

  save_config(dir / "config.txt", cfg);
  save_key(dir / "key.txt", key);
  const Corpus baseline = generate_corpus(model, cfg, nullptr, opts.jobs);
  const Corpus marked = generate_corpus(model, cfg, &biaser, opts.jobs);
  save_corpus(dir / "baseline.jsonl", baseline, corpus_meta(cfg, key, false));
  save_corpus(dir / "watermarked.jsonl", marked, corpus_meta(cfg, key, true));
  out << "wrote " << baseline.size() << " baseline and " << marked.size()
      << " watermarked samples to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_detect(const CommonOptions& opts, const std::string& corpus_path,
               const std::string& key_path, std::string out_path, std::ostream& out) {
  const RunConfig cfg = resolve_config(opts);
  const WatermarkKey key = key_path.empty() ? cfg.key() : load_key(key_path);
  CorpusMeta meta;
  const Corpus corpus = load_corpus(corpus_path, &meta);
  const std::string fp = fingerprint_hex(key.fingerprint());
  if (meta.key_fingerprint != fp) {
    throw DataError("key fingerprint " + fp + " does not match corpus fingerprint " +
                    meta.key_fingerprint);
  }
  const std::size_t vocab = meta.vocab_size != 0 ? meta.vocab_size : cfg.vocab_size;
  const GreenMatrix matrix =
      GreenMatrix::build(key, vocab, kDefaultMatrixBudgetBytes, opts.jobs);
  const auto reports = detect_corpus(key, matrix, corpus);

  std::vector<ReportLine> lines;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    ReportLine l;
    l.id = corpus[i].id;
    l.n = reports[i].n;
    l.green_count = reports[i].green_count;
    l.z = reports[i].z;
    l.strategy = meta.strategy;
    l.gamma = key.gamma();
    l.delta = meta.delta;
    l.seed = key.seed();
    l.attack = meta.attack;
    l.attack_param = meta.attack_param;
    lines.push_back(l);
  }
  if (out_path.empty()) out_path = with_suffix(corpus_path, ".reports.jsonl").string();
  std::ostringstream buf;
  write_reports(buf, lines);
  write_text(out_path, buf.str());

  double mean_z = 0.0;
  for (const auto& l : lines) mean_z += l.z;
  if (!lines.empty()) mean_z /= static_cast<double>(lines.size());
  out << "scored " << lines.size() << " samples, mean z " << format_double(mean_z) << " -> "
      << out_path << '\n';
  return kExitOk;
}

std::vector<double> load_report_z(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open reports " + path);
  std::vector<double> z;
  for (const auto& l : read_reports(in)) z.push_back(l.z);
  if (z.empty()) throw DataError("no data: " + path + " holds no reports");
  return z;
}

int cmd_calibrate(const CommonOptions& opts, const std::string& null_path,
                  const std::string& eval_path, std::vector<double> fprs, std::ostream& out,
                  std::ostream& err) {
  const RunConfig cfg = resolve_config(opts);
  if (fprs.empty()) fprs = kDefaultFprs;
  for (double f : fprs) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("FPR values must lie in (0, 1)");
  }
  const auto null_z = load_report_z(null_path);
  const Calibration cal = calibrate(null_z, fprs);
  for (const auto& w : cal.warnings) err << "warning: " << w << '\n';

  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);
  const std::string table = render_thresholds(cal);
  write_text(dir / "thresholds.txt", table);
  std::string jsonl;
  for (const auto& [fpr, t] : cal.thresholds) {
    json j;
    j["fpr"] = fpr;
    j["threshold"] = t;
    j["n_null"] = cal.null_scores.size();
    j["achieved_fpr"] = cal.achieved_fpr(null_z, fpr);
    jsonl += j.dump() + '\n';
  }
  write_text(dir / "thresholds.jsonl", jsonl);
  out << table;

  if (!eval_path.empty()) {
    const auto wz = load_report_z(eval_path);
    const TprTable tpr = evaluate(wz, cal);
    std::ostringstream t;
    t << "fpr       tpr\n";
    for (const auto& [fpr, rate] : tpr) {
      char line[64];
      std::snprintf(line, sizeof line, "%-8s  %6.2f%%\n", format_double(fpr).c_str(),
                    100.0 * rate);
      t << line;
    }
    write_text(dir / "tpr.txt", t.str());
    out << t.str();
  }
  return kExitOk;
}

int cmd_attack(const CommonOptions& opts, const std::string& corpus_path, std::string out_path,
               std::ostream& out) {
  const RunConfig cfg = resolve_config(opts);
  const AttackSpec spec = cfg.attack_spec();
  if (spec.kind == AttackKind::kNone) throw ConfigError("attack needs --attack KIND");
  CorpusMeta meta;
  const Corpus corpus = load_corpus(corpus_path, &meta);
  const std::size_t vocab = meta.vocab_size != 0 ? meta.vocab_size : cfg.vocab_size;
  const Corpus attacked = attack_corpus(corpus, spec, vocab);
  meta.attack = std::string(attack_name(spec.kind));
  meta.attack_param = spec.rate;
  meta.attack_seed = spec.rng_seed;
  if (out_path.empty()) {
    out_path = with_suffix(corpus_path, "." + meta.attack + "-" + format_double(spec.rate) +
                                            ".jsonl")
                   .string();
  }
  save_corpus(out_path, attacked, meta);
  out << "attacked " << attacked.size() << " samples (" << meta.attack << ", rate "
      << format_double(spec.rate) << ") -> " << out_path << '\n';
  return kExitOk;
}

int cmd_sweep(const CommonOptions& opts, std::ostream& out) {
  const RunConfig cfg = resolve_config(opts);
  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);
  const auto records = run_sweep(cfg, opts.jobs);
  save_config(dir / "config.txt", cfg);
  const std::string table = render_table(records);
  write_text(dir / "sweep_table.txt", table);
  write_text(dir / "sweep.csv", render_csv(records));
  std::ostringstream rec;
  write_records(rec, records);
  write_text(dir / "records.jsonl", rec.str());
  // Timing varies run to run, so it lives apart from the reproducible outputs.
  std::ostringstream timing;
  double total = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& c = records[i].config;
    timing << strategy_name(c.strategy) << " gamma=" << format_double(c.gamma)
           << " delta=" << format_double(c.delta) << " n=" << c.length << " seconds="
           << records[i].wall_seconds << " samples_per_second="
           << static_cast<double>(records[i].z.size()) / std::max(records[i].wall_seconds, 1e-9)
           << '\n';
    total += records[i].wall_seconds;
  }
  timing << "total_seconds=" << total << '\n';
  write_text(dir / "timing.txt", timing.str());
  out << table;
  return kExitOk;
}

int cmd_report(const std::string& records_path, bool csv, std::ostream& out) {
  std::ifstream in(records_path);
  if (!in) throw DataError("cannot open records " + records_path);
  const auto records = read_records(in);
  if (records.empty()) throw DataError("no data: " + records_path + " holds no records");
  out << (csv ? render_csv(records) : render_table(records));
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Watermarking for diffusion-style text generation on a toy decoder", "dmark"};
  app.require_subcommand(1);

  CommonOptions gen_opts, det_opts, cal_opts, att_opts, sweep_opts;

  auto* gen = app.add_subcommand("generate", "paired baseline and watermarked corpora");
  add_common(gen, gen_opts);

  auto* det = app.add_subcommand("detect", "score a corpus");
  add_common(det, det_opts);
  std::string det_corpus, det_key, det_out;
  det->add_option("--corpus", det_corpus, "corpus JSONL")->required();
  det->add_option("--key", det_key, "key file (default: key from the config)");
  det->add_option("--out", det_out, "report JSONL (default: <corpus>.reports.jsonl)");

  auto* cal = app.add_subcommand("calibrate", "thresholds from null reports");
  add_common(cal, cal_opts);
  std::string cal_null, cal_eval;
  std::vector<double> cal_fprs;
  cal->add_option("--reports", cal_null, "null report JSONL")->required();
  cal->add_option("--eval", cal_eval, "watermarked report JSONL to evaluate");
  cal->add_option("--fpr", cal_fprs, "target false positive rates")->delimiter(',');

  auto* att = app.add_subcommand("attack", "apply a token-level attack to a corpus");
  add_common(att, att_opts);
  std::string att_corpus, att_out;
  att->add_option("--corpus", att_corpus, "corpus JSONL")->required();
  att->add_option("--out", att_out, "attacked corpus JSONL");

  auto* sweep = app.add_subcommand("sweep", "run the strategy x gamma x delta x length grid");
  add_common(sweep, sweep_opts);

  auto* rep = app.add_subcommand("report", "render records as a table");
  std::string rep_records;
  bool rep_csv = false;
  rep->add_option("--records", rep_records, "records JSONL")->required();
  rep->add_flag("--csv", rep_csv, "CSV instead of aligned text");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfigError;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_opts, out);
    if (det->parsed()) return cmd_detect(det_opts, det_corpus, det_key, det_out, out);
    if (cal->parsed()) return cmd_calibrate(cal_opts, cal_null, cal_eval, cal_fprs, out, err);
    if (att->parsed()) return cmd_attack(att_opts, att_corpus, att_out, out);
    if (sweep->parsed()) return cmd_sweep(sweep_opts, out);
    if (rep->parsed()) return cmd_report(rep_records, rep_csv, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const CapacityError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace dmark
