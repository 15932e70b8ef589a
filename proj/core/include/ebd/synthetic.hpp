#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ebd/corpus.hpp"

namespace ebd {

// Template corpus with a planted shortcut. The gold relation is a function of
// the premise and hypothesis activity words only: with g(w) the index of the
// activity group containing w, the relation index is (g(h) - g(p)) mod 3.
// A spurious token, absent from every explanation, is inserted into the
// hypothesis; its presence correlates with spurious_label at the requested
// Pearson coefficient.
struct SyntheticSpec {
  std::vector<std::vector<std::string>> activity_groups;  // causal words
  std::vector<std::string> subjects;
  std::vector<std::string> locations;
  // Placeholders: {subject}, {activity}, {location}. Each needs one {activity}.
  std::vector<std::string> premise_templates;
  std::vector<std::string> hypothesis_templates;
  std::string spurious_token = "nobody";
  Relation spurious_label = Relation::contradicted;
  double rho_train = 0.9;
  double rho_ood = -0.9;
  std::size_t train_size = 5000;
  std::size_t dev_size = 1000;
  std::size_t ood_size = 1000;
  std::uint64_t seed = 7;

  // Built-in word pools and templates.
  static SyntheticSpec defaults();
  void validate() const;
};

struct SyntheticCorpus {
  std::vector<Record> train;
  std::vector<Record> dev;  // drawn with rho_train
  std::vector<Record> ood;  // drawn with rho_ood
};

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

// Writes train.jsonl, dev.jsonl and ood.jsonl into dir.
void write_synthetic(const std::filesystem::path& dir, const SyntheticCorpus& corpus);

// Pearson correlation between "token occurs in the hypothesis" and "gold == label".
double spurious_correlation(std::span<const Record> records, const std::string& token, Relation label);

}  // namespace ebd
