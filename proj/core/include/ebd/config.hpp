#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "ebd/corpus.hpp"
#include "ebd/encoder.hpp"
#include "ebd/evaluator.hpp"
#include "ebd/synthetic.hpp"
#include "ebd/trainer.hpp"

namespace ebd {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string train;
  std::string dev;
  std::string test;
  bool skip_malformed = true;
  std::size_t min_count = 1;
  std::vector<std::string> stopwords;

  LoadOptions load_options() const;
  LabelOptions label_options() const;
};

struct EvalConfig {
  std::string checkpoint;
  std::string dataset;
  std::string lexicon;
  std::string category = "bias";
  std::size_t rounds = 8;
  std::vector<std::size_t> blocks;  // empty: the checkpoint's supervised blocks
};

// Whole-run configuration. The top-level seed drives initialization, batch
// order, synthetic generation and synonym draws.
struct ExperimentConfig {
  std::uint64_t seed = 13;
  DataConfig data;
  EncoderConfig model;  // vocab_size is taken from the data
  TrainConfig train;
  EvalConfig eval;
  SyntheticSpec synthetic = SyntheticSpec::defaults();
};

// Unknown keys anywhere are rejected with ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig parse_config_text(const std::string& text);
nlohmann::json load_config_json(const std::filesystem::path& path);

// Sets a dotted key ("train.alpha"). The value is read as JSON when it parses,
// otherwise as a string.
void apply_override(nlohmann::json& j, const std::string& dotted_key, const std::string& value);

// Canonical form: every field, fixed key order.
nlohmann::ordered_json to_json(const ExperimentConfig& config);
// FNV-1a 64 of the canonical form, hex.
std::string experiment_hash(const ExperimentConfig& config);

}  // namespace ebd
