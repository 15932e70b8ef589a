#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ebd/corpus.hpp"
#include "ebd/encoder.hpp"

namespace ebd {

// ---- accuracy -------------------------------------------------------------------

struct ClassCounts {
  std::size_t gold = 0;       // examples with this gold label
  std::size_t predicted = 0;  // examples predicted as this label
  std::size_t correct = 0;
};

struct EvalReport {
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  std::array<ClassCounts, kNumRelations> per_class{};
  std::vector<Relation> predictions;
};

// Argmax of the final main distribution; ties go to the lower index.
Relation argmax_relation(const Distribution& p);

// Plain forward pass only; no auxiliary objective is evaluated.
EvalReport evaluate(const Encoder& encoder, const Vocabulary& vocab, std::span<const Record> records);

// ---- token-level F1 -----------------------------------------------------------------

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // gold positions
  std::size_t predicted = 0;
};

// A class absent from both gold and predictions scores F1 = 0 and is listed in
// empty_classes.
struct TokenF1Report {
  std::array<ClassScore, kNumTokenLabels> per_class{};
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  std::size_t positions = 0;
  std::vector<std::size_t> empty_classes;
};

TokenF1Report token_f1_from_predictions(std::span<const TokenLabel> gold, std::span<const TokenLabel> predicted);

// Scores the token head's argmax on every non-special position of each
// record with an explanation; records without one are skipped.
TokenF1Report token_f1(const Encoder& encoder, const Vocabulary& vocab, std::span<const Record> records,
                       const LabelOptions& options = {});

// ---- synonym swaps ------------------------------------------------------------------

// word -> synonyms; a synonym may span several words.
using Lexicon = std::map<std::string, std::vector<std::string>>;

// Lines "word<TAB>syn1,syn2,..."; blank lines and lines starting with '#' are ignored.
Lexicon parse_lexicon(std::istream& in);
Lexicon load_lexicon(const std::filesystem::path& path);

enum class SwapCategory { bias, keyword_intersect, keyword_distinct };

std::string_view swap_category_name(SwapCategory c);
std::optional<SwapCategory> parse_swap_category(std::string_view text);

struct SwapResult {
  SwapCategory category = SwapCategory::bias;
  double baseline_accuracy = 0.0;
  std::vector<double> round_accuracy;
  std::vector<std::size_t> round_replacements;
  std::size_t evaluated = 0;  // records with an explanation
  std::optional<std::string> warning;
};

// Each round starts from the original records and replaces every word of the
// category that has a lexicon entry with a synonym drawn uniformly.
SwapResult swap_eval(const Encoder& encoder, const Vocabulary& vocab, std::span<const Record> records,
                     const Lexicon& lexicon, SwapCategory category, std::size_t rounds, std::uint64_t seed,
                     const LabelOptions& options = {});

// ---- attention report -----------------------------------------------------------

struct BlockAttention {
  std::size_t block = 0;
  std::vector<double> values;  // normalized [CLS] attention per position
  double keyword_mass = 0.0;   // positions labeled shared or distinct keyword
  double bias_mass = 0.0;      // everything else, specials included
};

struct AttentionExample {
  std::size_t index = 0;  // record index in the input
  std::vector<std::string> tokens;
  std::vector<TokenLabel> labels;
  std::vector<BlockAttention> blocks;
};

struct AttentionReport {
  std::vector<std::size_t> blocks;
  std::vector<AttentionExample> examples;

  // Mean keyword mass over examples and blocks.
  double mean_keyword_mass() const;
  std::string to_json() const;
};

AttentionReport attention_report(const Encoder& encoder, const Vocabulary& vocab, std::span<const Record> records,
                                 std::span<const std::size_t> blocks, const LabelOptions& options = {});

// ---- sub-inference consistency ----------------------------------------------------

struct SubInferenceRow {
  std::size_t index = 0;
  Relation gold = Relation::neutral;
  Relation main = Relation::neutral;   // final prediction on the full pair
  Relation psi = Relation::neutral;    // keywords kept, block h
  Relation sigma = Relation::neutral;  // biases kept, block h
  bool consistent = false;             // min_priority(psi, sigma) == main
};

struct SubInferenceReport {
  std::size_t block = 0;
  std::vector<SubInferenceRow> rows;
  double consistency_rate = 0.0;

  std::string to_json() const;
};

SubInferenceReport sub_inference_report(const Encoder& encoder, const Vocabulary& vocab, std::span<const Record> records,
                                        std::size_t block, const LabelOptions& options = {});

// ---- CSV ------------------------------------------------------------------------------

// Header: metric,value
std::string eval_csv(const EvalReport& eval, const std::optional<TokenF1Report>& f1);
// Header: category,round,accuracy,replacements (round 0 is the unmodified baseline)
std::string swap_csv(std::span<const SwapResult> results);

}  // namespace ebd
