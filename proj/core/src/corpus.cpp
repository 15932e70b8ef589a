#include "ebd/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace ebd {

namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string join(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

std::string_view relation_name(Relation r) {
  switch (r) {
    case Relation::entailed: return "entailed";
    case Relation::neutral: return "neutral";
    case Relation::contradicted: return "contradicted";
  }
  return "unknown";
}

std::optional<Relation> parse_relation(std::string_view text) {
  const std::string t = lowercase(text);
  if (t == "entailed" || t == "entailment") return Relation::entailed;
  if (t == "neutral") return Relation::neutral;
  if (t == "contradicted" || t == "contradiction") return Relation::contradicted;
  return std::nullopt;
}

Relation relation_from_index(std::size_t index) {
  if (index >= kNumRelations) throw std::out_of_range("relation index " + std::to_string(index));
  return static_cast<Relation>(index);
}

int priority(Relation r) { return 2 - static_cast<int>(r); }

Relation min_priority(Relation a, Relation b) { return priority(a) <= priority(b) ? a : b; }

// ---- Vocabulary ---------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (const char* s : {"[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]"}) insert(s);
}

void Vocabulary::insert(const std::string& word) {
  if (index_.contains(word)) return;
  index_.emplace(word, words_.size());
  words_.push_back(word);
}

Vocabulary Vocabulary::build(std::span<const Record> records, std::size_t min_count) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> counts;
  auto visit = [&](const std::vector<std::string>& words) {
    for (const auto& w : words) {
      if (counts[w]++ == 0) order.push_back(w);
    }
  };
  for (const auto& r : records) {
    visit(r.premise);
    visit(r.hypothesis);
  }
  Vocabulary v;
  for (const auto& w : order) {
    if (counts[w] >= min_count) v.insert(w);
  }
  return v;
}

Vocabulary Vocabulary::from_words(std::span<const std::string> words) {
  Vocabulary v;
  for (const auto& w : words) {
    if (w.empty()) throw std::invalid_argument("Vocabulary: empty word");
    if (v.contains(w)) throw std::invalid_argument("Vocabulary: duplicate word '" + w + "'");
    v.insert(w);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary file " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    words.push_back(line);
  }
  return from_words(words);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (const auto& w : ordinary_words()) out << w << '\n';
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? unk : it->second;
}

bool Vocabulary::contains(std::string_view word) const { return index_.contains(std::string(word)); }

const std::string& Vocabulary::word(TokenId id) const { return words_.at(id); }

std::span<const std::string> Vocabulary::ordinary_words() const {
  return std::span<const std::string>(words_).subspan(num_specials);
}

// ---- sequence construction --------------------------------------------------

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else {
      current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

PairSequence assemble_pair(std::span<const std::string> premise, std::span<const std::string> hypothesis,
                           const Vocabulary& vocab) {
  if (premise.empty()) throw std::invalid_argument("assemble_pair: empty premise");
  if (hypothesis.empty()) throw std::invalid_argument("assemble_pair: empty hypothesis");
  PairSequence seq;
  seq.premise_length = premise.size();
  seq.hypothesis_length = hypothesis.size();
  const std::size_t n = premise.size() + hypothesis.size() + 2;
  seq.ids.reserve(n);
  seq.words.reserve(n);
  seq.ids.push_back(Vocabulary::cls);
  seq.words.emplace_back("[CLS]");
  for (const auto& w : premise) {
    seq.ids.push_back(vocab.id(w));
    seq.words.push_back(w);
  }
  seq.ids.push_back(Vocabulary::sep);
  seq.words.emplace_back("[SEP]");
  for (const auto& w : hypothesis) {
    seq.ids.push_back(vocab.id(w));
    seq.words.push_back(w);
  }
  return seq;
}

std::optional<std::vector<TokenLabel>> label_tokens(const PairSequence& pair, std::span<const std::string> premise,
                                                    std::span<const std::string> hypothesis,
                                                    std::span<const std::string> explanation,
                                                    const LabelOptions& options) {
  if (explanation.empty()) return std::nullopt;
  std::unordered_set<std::string> expl, prem, hyp;
  for (const auto& w : explanation) {
    std::string lw = lowercase(w);
    if (!options.stopwords.contains(lw)) expl.insert(std::move(lw));
  }
  for (const auto& w : premise) prem.insert(lowercase(w));
  for (const auto& w : hypothesis) hyp.insert(lowercase(w));

  std::vector<TokenLabel> labels(pair.size(), TokenLabel::bias);
  for (std::size_t i = 0; i < pair.size(); ++i) {
    if (pair.is_special_position(i)) continue;
    const std::string w = lowercase(pair.words[i]);
    if (!expl.contains(w)) continue;
    labels[i] = (prem.contains(w) && hyp.contains(w)) ? TokenLabel::shared_keyword : TokenLabel::distinct_keyword;
  }
  return labels;
}

NormalizedTargets normalize_labels(std::span<const TokenLabel> labels) {
  NormalizedTargets out;
  out.values.assign(labels.size(), 0.0);
  double total = 0.0;
  for (TokenLabel l : labels) total += static_cast<double>(label_index(l));
  if (total == 0.0) {
    out.uniform_fallback = true;
    if (!labels.empty()) std::fill(out.values.begin(), out.values.end(), 1.0 / static_cast<double>(labels.size()));
    return out;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) out.values[i] = static_cast<double>(label_index(labels[i])) / total;
  return out;
}

MaskedPair mask_sequences(std::span<const TokenId> tokens, std::span<const TokenLabel> labels) {
  if (tokens.size() != labels.size()) throw std::invalid_argument("mask_sequences: tokens and labels differ in length");
  MaskedPair out{std::vector<TokenId>(tokens.begin(), tokens.end()), std::vector<TokenId>(tokens.begin(), tokens.end())};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == Vocabulary::cls || tokens[i] == Vocabulary::sep) continue;
    if (labels[i] == TokenLabel::bias) {
      out.psi[i] = Vocabulary::mask;
    } else {
      out.sigma[i] = Vocabulary::mask;
    }
  }
  return out;
}

std::optional<LabeledSequence> build_labeled(const Record& record, const Vocabulary& vocab,
                                             const LabelOptions& options) {
  PairSequence pair = assemble_pair(record.premise, record.hypothesis, vocab);
  auto labels = label_tokens(pair, record.premise, record.hypothesis, record.explanation, options);
  if (!labels) return std::nullopt;
  LabeledSequence seq;
  NormalizedTargets targets = normalize_labels(*labels);
  MaskedPair masked = mask_sequences(pair.ids, *labels);
  seq.tokens = std::move(pair.ids);
  seq.labels = std::move(*labels);
  seq.targets = std::move(targets.values);
  seq.uniform_fallback = targets.uniform_fallback;
  seq.psi_tokens = std::move(masked.psi);
  seq.sigma_tokens = std::move(masked.sigma);
  seq.gold = record.label;
  return seq;
}

// ---- JSONL ----------------------------------------------------------------------

DatasetError::DatasetError(std::string message, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}

LoadResult parse_jsonl(std::istream& in, const LoadOptions& options) {
  LoadResult result;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](std::string message) {
    if (options.on_malformed == OnMalformed::fatal) throw DatasetError(message, lineno);
    result.issues.push_back({lineno, std::move(message)});
  };
  auto text_field = [](const nlohmann::json& obj, const char* key) -> std::optional<std::string> {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) return std::nullopt;
    return it->get<std::string>();
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(std::string("malformed JSON: ") + e.what());
      continue;
    }
    if (!obj.is_object()) {
      fail("expected a JSON object");
      continue;
    }
    auto premise = text_field(obj, "premise");
    auto hypothesis = text_field(obj, "hypothesis");
    auto label = text_field(obj, "label");
    auto explanation = text_field(obj, "explanation");
    if (!premise) { fail("missing string field 'premise'"); continue; }
    if (!hypothesis) { fail("missing string field 'hypothesis'"); continue; }
    if (!label) { fail("missing string field 'label'"); continue; }
    if (!explanation && options.require_explanation) { fail("missing string field 'explanation'"); continue; }
    auto relation = parse_relation(*label);
    if (!relation) { fail("unknown label '" + *label + "'"); continue; }

    Record r;
    r.premise = tokenize(*premise);
    r.hypothesis = tokenize(*hypothesis);
    if (explanation) r.explanation = tokenize(*explanation);
    r.label = *relation;
    if (r.premise.empty()) { fail("premise has no tokens"); continue; }
    if (r.hypothesis.empty()) { fail("hypothesis has no tokens"); continue; }
    result.records.push_back(std::move(r));
  }
  return result;
}

LoadResult load_jsonl(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot read dataset " + path.string());
  return parse_jsonl(in, options);
}

std::string record_to_json_line(const Record& record) {
  nlohmann::ordered_json obj;
  obj["premise"] = join(record.premise);
  obj["hypothesis"] = join(record.hypothesis);
  obj["label"] = std::string(relation_name(record.label));
  obj["explanation"] = join(record.explanation);
  return obj.dump();
}

void write_jsonl(const std::filesystem::path& path, std::span<const Record> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json_line(r) << '\n';
}

}  // namespace ebd
