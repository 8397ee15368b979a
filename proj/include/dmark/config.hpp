#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dmark/attacks.hpp"
#include "dmark/keyed_partition.hpp"
#include "dmark/strategies.hpp"
#include "dmark/toy_diffusion.hpp"

namespace dmark {

// Everything needed to reproduce a run. Three independent seeds feed the
// model, the corpus (prompts and sampling) and the attack.
struct RunConfig {
  // model
  std::size_t vocab_size = 4096;
  std::uint64_t model_seed = 1;
  double backward_weight = 0.8;
  double unigram_scale = 0.3;
  std::size_t common_tokens = 4;
  double common_boost = 6.0;
  double bigram_scale = 0.3;
  double flat_fraction = 0.5;
  std::size_t successors = 2;
  double successor_boost = 9.0;

  // generation
  std::size_t length = 200;
  std::size_t steps = 100;  // two positions per step
  std::size_t block_size = 200;
  double temperature = 1.0;
  std::size_t prompt_length = 8;

  // watermark
  Strategy strategy = Strategy::kPredictiveBidirectional;
  std::uint64_t key_seed = 42;
  double gamma = 0.5;
  double delta = 2.0;

  // corpus
  std::size_t samples = 500;
  std::uint64_t corpus_seed = 7;

  // attack
  AttackKind attack = AttackKind::kNone;
  double attack_rate = 0.0;
  std::uint64_t attack_seed = 11;

  // sweep grid (comma separated in the file form)
  std::vector<Strategy> sweep_strategies = {Strategy::kPredictiveBidirectional};
  std::vector<double> sweep_gammas = {0.25, 0.5, 0.75};
  std::vector<double> sweep_deltas = {1.0, 2.0, 5.0, 10.0};
  std::vector<std::size_t> sweep_lengths = {200};

  std::filesystem::path output_dir = "dmark-out";

  ToyModelSpec model_spec() const;
  DecodeSchedule schedule() const;
  WatermarkKey key() const;
  AttackSpec attack_spec() const;

  // Throws ConfigError on any inconsistent setting.
  void validate() const;
};

// Flat `name = value` form. Writing then reading yields an equal config.
std::map<std::string, std::string> config_to_map(const RunConfig& cfg);
void set_config_value(RunConfig& cfg, const std::string& name, const std::string& value);

void write_config(std::ostream& out, const RunConfig& cfg);
RunConfig read_config(std::istream& in);
void save_config(const std::filesystem::path& path, const RunConfig& cfg);
RunConfig load_config(const std::filesystem::path& path);

bool operator==(const RunConfig& a, const RunConfig& b);

// Shortest decimal text that reads back to the same double.
std::string format_double(double x);

}  // namespace dmark
