#include "dmark/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "dmark/errors.hpp"

namespace dmark {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) out += ',';
    out += fmt(xs[i]);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& name, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("'" + name + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& name, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("'" + name + "' expects a number, got '" + v + "'");
  }
  return out;
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

ToyModelSpec RunConfig::model_spec() const {
  ToyModelSpec s;
  s.vocab_size = vocab_size;
  s.seed = model_seed;
  s.backward_weight = backward_weight;
  s.unigram_scale = unigram_scale;
  s.common_tokens = common_tokens;
  s.common_boost = common_boost;
  s.bigram_scale = bigram_scale;
  s.flat_fraction = flat_fraction;
  s.successors = successors;
  s.successor_boost = successor_boost;
  return s;
}

DecodeSchedule RunConfig::schedule() const { return DecodeSchedule{length, steps, block_size}; }

WatermarkKey RunConfig::key() const { return WatermarkKey(key_seed, gamma, delta); }

AttackSpec RunConfig::attack_spec() const { return AttackSpec{attack, attack_rate, attack_seed}; }

void RunConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  if (successors > vocab_size || common_tokens > vocab_size) {
    throw ConfigError("successors and common_tokens cannot exceed vocab_size");
  }
  if (!(flat_fraction >= 0.0 && flat_fraction <= 1.0)) {
    throw ConfigError("flat_fraction must lie in [0, 1]");
  }
  if (!(backward_weight >= 0.0 && backward_weight <= 1.0)) {
    throw ConfigError("backward_weight must lie in [0, 1]");
  }
  schedule().validate();
  if (!(temperature >= 0.0)) throw ConfigError("temperature must be non-negative");
  if (samples == 0) throw ConfigError("samples must be positive");
  (void)key();
  attack_spec().validate();
  if (sweep_strategies.empty() || sweep_gammas.empty() || sweep_deltas.empty() ||
      sweep_lengths.empty()) {
    throw ConfigError("sweep grid axes must be non-empty");
  }
}

std::map<std::string, std::string> config_to_map(const RunConfig& c) {
  std::map<std::string, std::string> m;
  m["vocab_size"] = std::to_string(c.vocab_size);
  m["model_seed"] = std::to_string(c.model_seed);
  m["backward_weight"] = format_double(c.backward_weight);
  m["unigram_scale"] = format_double(c.unigram_scale);
  m["common_tokens"] = std::to_string(c.common_tokens);
  m["common_boost"] = format_double(c.common_boost);
  m["bigram_scale"] = format_double(c.bigram_scale);
  m["flat_fraction"] = format_double(c.flat_fraction);
  m["successors"] = std::to_string(c.successors);
  m["successor_boost"] = format_double(c.successor_boost);
  m["length"] = std::to_string(c.length);
  m["steps"] = std::to_string(c.steps);
  m["block_size"] = std::to_string(c.block_size);
  m["temperature"] = format_double(c.temperature);
  m["prompt_length"] = std::to_string(c.prompt_length);
  m["strategy"] = std::string(strategy_name(c.strategy));
  m["key_seed"] = std::to_string(c.key_seed);
  m["gamma"] = format_double(c.gamma);
  m["delta"] = format_double(c.delta);
  m["samples"] = std::to_string(c.samples);
  m["corpus_seed"] = std::to_string(c.corpus_seed);
  m["attack"] = std::string(attack_name(c.attack));
  m["attack_rate"] = format_double(c.attack_rate);
  m["attack_seed"] = std::to_string(c.attack_seed);
  m["sweep_strategies"] = join<Strategy>(
      c.sweep_strategies, [](const Strategy& s) { return std::string(strategy_name(s)); });
  m["sweep_gammas"] = join<double>(c.sweep_gammas, format_double);
  m["sweep_deltas"] = join<double>(c.sweep_deltas, format_double);
  m["sweep_lengths"] = join<std::size_t>(
      c.sweep_lengths, [](const std::size_t& n) { return std::to_string(n); });
  m["output_dir"] = c.output_dir.string();
  return m;
}

void set_config_value(RunConfig& c, const std::string& name, const std::string& raw) {
  const std::string v = trim(raw);
  if (name == "vocab_size") c.vocab_size = parse_u64(name, v);
  else if (name == "model_seed") c.model_seed = parse_u64(name, v);
  else if (name == "backward_weight") c.backward_weight = parse_double(name, v);
  else if (name == "unigram_scale") c.unigram_scale = parse_double(name, v);
  else if (name == "common_tokens") c.common_tokens = parse_u64(name, v);
  else if (name == "common_boost") c.common_boost = parse_double(name, v);
  else if (name == "bigram_scale") c.bigram_scale = parse_double(name, v);
  else if (name == "flat_fraction") c.flat_fraction = parse_double(name, v);
  else if (name == "successors") c.successors = parse_u64(name, v);
  else if (name == "successor_boost") c.successor_boost = parse_double(name, v);
  else if (name == "length") c.length = parse_u64(name, v);
  else if (name == "steps") c.steps = parse_u64(name, v);
  else if (name == "block_size") c.block_size = parse_u64(name, v);
  else if (name == "temperature") c.temperature = parse_double(name, v);
  else if (name == "prompt_length") c.prompt_length = parse_u64(name, v);
  else if (name == "strategy") c.strategy = parse_strategy(v);
  else if (name == "key_seed") c.key_seed = parse_u64(name, v);
  else if (name == "gamma") c.gamma = parse_double(name, v);
  else if (name == "delta") c.delta = parse_double(name, v);
  else if (name == "samples") c.samples = parse_u64(name, v);
  else if (name == "corpus_seed") c.corpus_seed = parse_u64(name, v);
  else if (name == "attack") c.attack = parse_attack(v);
  else if (name == "attack_rate") c.attack_rate = parse_double(name, v);
  else if (name == "attack_seed") c.attack_seed = parse_u64(name, v);
  else if (name == "sweep_strategies") {
    c.sweep_strategies.clear();
    for (const auto& s : split_list(v)) c.sweep_strategies.push_back(parse_strategy(s));
  } else if (name == "sweep_gammas") {
    c.sweep_gammas.clear();
    for (const auto& s : split_list(v)) c.sweep_gammas.push_back(parse_double(name, s));
  } else if (name == "sweep_deltas") {
    c.sweep_deltas.clear();
    for (const auto& s : split_list(v)) c.sweep_deltas.push_back(parse_double(name, s));
  } else if (name == "sweep_lengths") {
    c.sweep_lengths.clear();
    for (const auto& s : split_list(v)) c.sweep_lengths.push_back(parse_u64(name, s));
  } else if (name == "output_dir") c.output_dir = v;
  else throw ConfigError("unknown config key '" + name + "'");
}

void write_config(std::ostream& out, const RunConfig& cfg) {
  for (const auto& [k, v] : config_to_map(cfg)) out << k << " = " << v << '\n';
}

RunConfig read_config(std::istream& in) {
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " lacks '='");
    }
    set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write config " + path.string());
  write_config(out, cfg);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return read_config(in);
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return config_to_map(a) == config_to_map(b);
}

}  // namespace dmark
