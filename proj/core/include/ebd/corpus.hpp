#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace ebd {

// Relation labels, indexed in the order used by every probability vector.
enum class Relation : std::uint8_t { entailed = 0, neutral = 1, contradicted = 2 };
inline constexpr std::size_t kNumRelations = 3;

std::string_view relation_name(Relation r);
// Accepts entailed|entailment, neutral, contradicted|contradiction (case-insensitive).
std::optional<Relation> parse_relation(std::string_view text);
Relation relation_from_index(std::size_t index);
inline std::size_t relation_index(Relation r) { return static_cast<std::size_t>(r); }

// Inference priority: entailed 2 > neutral 1 > contradicted 0.
int priority(Relation r);
// The lower-priority outcome of two sub-inferences.
Relation min_priority(Relation a, Relation b);

// Explanation-derived token category.
enum class TokenLabel : std::uint8_t { bias = 0, shared_keyword = 1, distinct_keyword = 2 };
inline constexpr std::size_t kNumTokenLabels = 3;
inline std::size_t label_index(TokenLabel l) { return static_cast<std::size_t>(l); }

struct Record {
  std::vector<std::string> premise;
  std::vector<std::string> hypothesis;
  std::vector<std::string> explanation;
  Relation label = Relation::neutral;

  // An empty explanation marks the record unusable for explanation supervision.
  bool supervisable() const { return !explanation.empty(); }
};

using TokenId = std::size_t;

class Vocabulary {
 public:
  static constexpr TokenId cls = 0;
  static constexpr TokenId sep = 1;
  static constexpr TokenId mask = 2;
  static constexpr TokenId pad = 3;
  static constexpr TokenId unk = 4;
  static constexpr std::size_t num_specials = 5;

  Vocabulary();
  // Premise and hypothesis words in first-seen order.
  static Vocabulary build(std::span<const Record> records, std::size_t min_count = 1);
  static Vocabulary from_words(std::span<const std::string> words);
  // One ordinary word per line; the word on line k gets id num_specials + k.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  TokenId id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(TokenId id) const;
  std::size_t size() const { return words_.size(); }
  std::span<const std::string> ordinary_words() const;
  static bool is_special(TokenId id) { return id < num_specials; }

 private:
  void insert(const std::string& word);

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

// Lowercased, punctuation-stripped whitespace tokens.
std::vector<std::string> tokenize(std::string_view text);

// [CLS] premise [SEP] hypothesis with the source word kept per position.
struct PairSequence {
  std::vector<TokenId> ids;
  std::vector<std::string> words;
  std::size_t premise_length = 0;
  std::size_t hypothesis_length = 0;

  std::size_t size() const { return ids.size(); }
  bool is_special_position(std::size_t i) const { return i == 0 || i == premise_length + 1; }
};

PairSequence assemble_pair(std::span<const std::string> premise, std::span<const std::string> hypothesis,
                           const Vocabulary& vocab);

struct LabelOptions {
  // Words treated as absent from every explanation.
  std::unordered_set<std::string> stopwords;
};

// nullopt when the explanation is empty.
std::optional<std::vector<TokenLabel>> label_tokens(const PairSequence& pair, std::span<const std::string> premise,
                                                    std::span<const std::string> hypothesis,
                                                    std::span<const std::string> explanation,
                                                    const LabelOptions& options = {});

struct NormalizedTargets {
  std::vector<double> values;
  bool uniform_fallback = false;
};

// e_i / sum(e); uniform when every label is zero.
NormalizedTargets normalize_labels(std::span<const TokenLabel> labels);

struct MaskedPair {
  std::vector<TokenId> psi;    // keywords and specials kept
  std::vector<TokenId> sigma;  // biases and specials kept
};

MaskedPair mask_sequences(std::span<const TokenId> tokens, std::span<const TokenLabel> labels);

struct LabeledSequence {
  std::vector<TokenId> tokens;
  std::vector<TokenLabel> labels;
  std::vector<double> targets;
  std::vector<TokenId> psi_tokens;
  std::vector<TokenId> sigma_tokens;
  Relation gold = Relation::neutral;
  bool uniform_fallback = false;

  std::size_t size() const { return tokens.size(); }
};

// nullopt for records without an explanation.
std::optional<LabeledSequence> build_labeled(const Record& record, const Vocabulary& vocab,
                                             const LabelOptions& options = {});

// ---- JSONL ingestion ----------------------------------------------------------

class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::string message, std::size_t line = 0);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct LoadIssue {
  std::size_t line = 0;
  std::string message;
};

enum class OnMalformed { skip, fatal };

struct LoadOptions {
  OnMalformed on_malformed = OnMalformed::skip;
  bool require_explanation = true;
};

struct LoadResult {
  std::vector<Record> records;
  std::vector<LoadIssue> issues;
};

LoadResult parse_jsonl(std::istream& in, const LoadOptions& options = {});
LoadResult load_jsonl(const std::filesystem::path& path, const LoadOptions& options = {});

// Inverse of the loader: text fields are the tokens joined by single spaces.
std::string record_to_json_line(const Record& record);
void write_jsonl(const std::filesystem::path& path, std::span<const Record> records);

}  // namespace ebd
