#include "ebd/evaluator.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <istream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ebd {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void require_nonempty(std::span<const Record> records, const char* op) {
  if (records.empty()) throw std::invalid_argument(std::string(op) + ": dataset is empty");
}

TokenLabel label_for(SwapCategory c) {
  switch (c) {
    case SwapCategory::bias: return TokenLabel::bias;
    case SwapCategory::keyword_intersect: return TokenLabel::shared_keyword;
    case SwapCategory::keyword_distinct: return TokenLabel::distinct_keyword;
  }
  return TokenLabel::bias;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

// ---- accuracy -------------------------------------------------------------------

Relation argmax_relation(const Distribution& p) {
  return relation_from_index(static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()));
}

EvalReport evaluate(const Encoder& encoder, const Vocabulary& vocab, std::span<const Record> records) {
  require_nonempty(records, "evaluate");
  EvalReport rep;
  rep.predictions.reserve(records.size());
  for (const Record& r : records) {
    PairSequence pair = assemble_pair(r.premise, r.hypothesis, vocab);
    const Relation pred = argmax_relation(encoder.predict(pair.ids));
    rep.predictions.push_back(pred);
    ++rep.per_class[relation_index(r.label)].gold;
    ++rep.per_class[relation_index(pred)].predicted;
    if (pred == r.label) {
      ++rep.correct;
      ++rep.per_class[relation_index(pred)].correct;
    }
  }
  rep.total = records.size();
  rep.accuracy = static_cast<double>(rep.correct) / static_cast<double>(rep.total);
  return rep;
}

// ---- token-level F1 -----------------------------------------------------------------

TokenF1Report token_f1_from_predictions(std::span<const TokenLabel> gold, std::span<const TokenLabel> predicted) {
  if (gold.size() != predicted.size()) throw std::invalid_argument("token_f1: gold and predictions differ in length");
  TokenF1Report rep;
  std::array<std::size_t, kNumTokenLabels> tp{};
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::size_t g = label_index(gold[i]), p = label_index(predicted[i]);
    ++rep.per_class[g].support;
    ++rep.per_class[p].predicted;
    if (g == p) {
      ++tp[g];
      ++correct;
    }
  }
  double macro = 0.0;
  for (std::size_t c = 0; c < kNumTokenLabels; ++c) {
    ClassScore& s = rep.per_class[c];
    if (s.support == 0 && s.predicted == 0) rep.empty_classes.push_back(c);
    s.precision = s.predicted ? static_cast<double>(tp[c]) / static_cast<double>(s.predicted) : 0.0;
    s.recall = s.support ? static_cast<double>(tp[c]) / static_cast<double>(s.support) : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    macro += s.f1;
  }
  rep.positions = gold.size();
  rep.macro_f1 = macro / static_cast<double>(kNumTokenLabels);
  // Single-label multi-class: pooled precision equals pooled recall equals accuracy.
  rep.micro_f1 = gold.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(gold.size());
  return rep;
}

TokenF1Report token_f1(const Encoder& encoder, const Vocabulary& vocab, std::span<const Record> records,
                       const LabelOptions& options) {
  std::vector<TokenLabel> gold, predicted;
  for (const Record& r : records) {
    PairSequence pair = assemble_pair(r.premise, r.hypothesis, vocab);
    auto labels = label_tokens(pair, r.premise, r.hypothesis, r.explanation, options);
    if (!labels) continue;
    const BlockOutputs out = encoder.encode(pair.ids);
    for (std::size_t i = 0; i < pair.size(); ++i) {
      if (pair.is_special_position(i)) continue;
      const auto& probs = out.token_probs[i];
      const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      gold.push_back((*labels)[i]);
      predicted.push_back(static_cast<TokenLabel>(best));
    }
  }
  return token_f1_from_predictions(gold, predicted);
}

// ---- synonym swaps ------------------------------------------------------------------

Lexicon parse_lexicon(std::istream& in) {
  Lexicon lex;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DatasetError("lexicon line " + std::to_string(line_no) + ": expected word<TAB>synonyms", line_no);
    }
    const std::string word = trim(line.substr(0, tab));
    if (word.empty()) throw DatasetError("lexicon line " + std::to_string(line_no) + ": empty headword", line_no);
    std::vector<std::string> syns;
    std::stringstream ss(line.substr(tab + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) syns.push_back(item);
    }
    if (syns.empty()) continue;
    auto& slot = lex[word];
    slot.insert(slot.end(), syns.begin(), syns.end());
  }
  return lex;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read lexicon " + path.string());
  return parse_lexicon(in);
}

std::string_view swap_category_name(SwapCategory c) {
  switch (c) {
    case SwapCategory::bias: return "bias";
    case SwapCategory::keyword_intersect: return "keyword-intersect";
    case SwapCategory::keyword_distinct: return "keyword-distinct";
  }
  return "unknown";
}

std::optional<SwapCategory> parse_swap_category(std::string_view text) {
  for (SwapCategory c : {SwapCategory::bias, SwapCategory::keyword_intersect, SwapCategory::keyword_distinct}) {
    if (swap_category_name(c) == text) return c;
  }
  return std::nullopt;
}

SwapResult swap_eval(const Encoder& encoder, const Vocabulary& vocab, std::span<const Record> records,
                     const Lexicon& lexicon, SwapCategory category, std::size_t rounds, std::uint64_t seed,
                     const LabelOptions& options) {
  require_nonempty(records, "swap_eval");
  if (rounds == 0) throw std::invalid_argument("swap_eval: rounds must be at least 1");
  SwapResult res;
  res.category = category;
  if (lexicon.empty()) res.warning = "empty lexicon; every round equals the baseline";

  struct Item {
    const Record* record;
    std::vector<TokenLabel> labels;
    std::size_t premise_length;
  };
  std::vector<Item> items;
  std::vector<Record> kept;
  for (const Record& r : records) {
    PairSequence pair = assemble_pair(r.premise, r.hypothesis, vocab);
    auto labels = label_tokens(pair, r.premise, r.hypothesis, r.explanation, options);
    if (!labels) continue;
    items.push_back({&r, std::move(*labels), pair.premise_length});
    kept.push_back(r);
  }
  if (items.empty()) throw std::invalid_argument("swap_eval: no record carries an explanation");
  res.evaluated = items.size();
  res.baseline_accuracy = evaluate(encoder, vocab, kept).accuracy;

  const TokenLabel target = label_for(category);
  for (std::size_t round = 0; round < rounds; ++round) {
    std::mt19937_64 rng(seed ^ (0xD1B54A32D192ED03ULL * (round + 1)));
    std::vector<Record> swapped;
    swapped.reserve(items.size());
    std::size_t replacements = 0;
    for (const Item& it : items) {
      Record r = *it.record;
      auto rewrite = [&](std::vector<std::string>& words, std::size_t offset) {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < words.size(); ++i) {
          auto entry = lexicon.find(words[i]);
          if (it.labels[offset + i] != target || entry == lexicon.end()) {
            out.push_back(words[i]);
            continue;
          }
          const auto& syns = entry->second;
          const std::string& choice = syns[std::uniform_int_distribution<std::size_t>(0, syns.size() - 1)(rng)];
          auto pieces = tokenize(choice);
          if (pieces.empty()) pieces.push_back(words[i]);
          out.insert(out.end(), pieces.begin(), pieces.end());
          ++replacements;
        }
        words = std::move(out);
      };
      rewrite(r.premise, 1);
      rewrite(r.hypothesis, it.premise_length + 2);
      swapped.push_back(std::move(r));
    }
    res.round_accuracy.push_back(evaluate(encoder, vocab, swapped).accuracy);
    res.round_replacements.push_back(replacements);
  }
  return res;
}

// ---- attention report -----------------------------------------------------------

double AttentionReport::mean_keyword_mass() const {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& ex : examples)
    for (const auto& b : ex.blocks) {
      total += b.keyword_mass;
      ++n;
    }
  return n ? total / static_cast<double>(n) : 0.0;
}

std::string AttentionReport::to_json() const {
  nlohmann::ordered_json j;
  j["blocks"] = blocks;
  j["mean_keyword_mass"] = mean_keyword_mass();
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& ex : examples) {
    nlohmann::ordered_json e;
    e["index"] = ex.index;
    e["tokens"] = ex.tokens;
    std::vector<std::size_t> labels;
    for (TokenLabel l : ex.labels) labels.push_back(label_index(l));
    e["labels"] = labels;
    nlohmann::ordered_json bl = nlohmann::ordered_json::array();
    for (const auto& b : ex.blocks) {
      bl.push_back({{"block", b.block}, {"attention", b.values}, {"keyword_mass", b.keyword_mass}, {"bias_mass", b.bias_mass}});
    }
    e["blocks"] = std::move(bl);
    list.push_back(std::move(e));
  }
  j["examples"] = std::move(list);
  return j.dump(2);
}

AttentionReport attention_report(const Encoder& encoder, const Vocabulary& vocab, std::span<const Record> records,
                                 std::span<const std::size_t> blocks, const LabelOptions& options) {
  if (blocks.empty()) throw std::invalid_argument("attention_report: no blocks requested");
  for (std::size_t b : blocks) {
    if (b == 0 || b > encoder.config().num_blocks) {
      throw std::out_of_range("attention_report: block " + std::to_string(b) + " outside [1, " +
                              std::to_string(encoder.config().num_blocks) + "]");
    }
  }
  AttentionReport rep;
  rep.blocks.assign(blocks.begin(), blocks.end());
  for (std::size_t idx = 0; idx < records.size(); ++idx) {
    const Record& r = records[idx];
    PairSequence pair = assemble_pair(r.premise, r.hypothesis, vocab);
    auto labels = label_tokens(pair, r.premise, r.hypothesis, r.explanation, options);
    if (!labels) continue;
    const BlockOutputs out = encoder.encode(pair.ids);
    AttentionExample ex;
    ex.index = idx;
    ex.tokens = pair.words;
    ex.labels = *labels;
    for (std::size_t b : blocks) {
      BlockAttention ba;
      ba.block = b;
      ba.values = out.cls_attention[b - 1];
      for (std::size_t i = 0; i < ba.values.size(); ++i) {
        if (ex.labels[i] == TokenLabel::bias) ba.bias_mass += ba.values[i];
        else ba.keyword_mass += ba.values[i];
      }
      ex.blocks.push_back(std::move(ba));
    }
    rep.examples.push_back(std::move(ex));
  }
  return rep;
}

// ---- sub-inference consistency ----------------------------------------------------

std::string SubInferenceReport::to_json() const {
  nlohmann::ordered_json j;
  j["block"] = block;
  j["consistency_rate"] = consistency_rate;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    list.push_back({{"index", r.index},
                    {"gold", relation_name(r.gold)},
                    {"main", relation_name(r.main)},
                    {"psi", relation_name(r.psi)},
                    {"sigma", relation_name(r.sigma)},
                    {"consistent", r.consistent}});
  }
  j["rows"] = std::move(list);
  return j.dump(2);
}

SubInferenceReport sub_inference_report(const Encoder& encoder, const Vocabulary& vocab, std::span<const Record> records,
                                        std::size_t block, const LabelOptions& options) {
  if (block == 0 || block > encoder.config().num_blocks) {
    throw std::out_of_range("sub_inference_report: block " + std::to_string(block) + " outside [1, " +
                            std::to_string(encoder.config().num_blocks) + "]");
  }
  SubInferenceReport rep;
  rep.block = block;
  std::size_t consistent = 0;
  for (std::size_t idx = 0; idx < records.size(); ++idx) {
    auto seq = build_labeled(records[idx], vocab, options);
    if (!seq) continue;
    SubInferenceRow row;
    row.index = idx;
    row.gold = seq->gold;
    row.main = argmax_relation(encoder.predict(seq->tokens));
    row.psi = argmax_relation(encoder.sub_distribution(block, seq->psi_tokens));
    row.sigma = argmax_relation(encoder.sub_distribution(block, seq->sigma_tokens));
    row.consistent = min_priority(row.psi, row.sigma) == row.main;
    consistent += row.consistent;
    rep.rows.push_back(row);
  }
  rep.consistency_rate = rep.rows.empty() ? 0.0 : static_cast<double>(consistent) / static_cast<double>(rep.rows.size());
  return rep;
}

// ---- CSV ------------------------------------------------------------------------------

std::string eval_csv(const EvalReport& eval, const std::optional<TokenF1Report>& f1) {
  std::ostringstream os;
  os << "metric,value\n";
  os << "accuracy," << fmt(eval.accuracy) << "\n";
  os << "total," << eval.total << "\n";
  os << "correct," << eval.correct << "\n";
  for (std::size_t c = 0; c < kNumRelations; ++c) {
    const auto name = relation_name(relation_from_index(c));
    os << "gold_" << name << ',' << eval.per_class[c].gold << "\n";
    os << "predicted_" << name << ',' << eval.per_class[c].predicted << "\n";
    os << "correct_" << name << ',' << eval.per_class[c].correct << "\n";
  }
  if (f1) {
    os << "token_macro_f1," << fmt(f1->macro_f1) << "\n";
    os << "token_micro_f1," << fmt(f1->micro_f1) << "\n";
    for (std::size_t c = 0; c < kNumTokenLabels; ++c) {
      os << "token_precision_" << c << ',' << fmt(f1->per_class[c].precision) << "\n";
      os << "token_recall_" << c << ',' << fmt(f1->per_class[c].recall) << "\n";
      os << "token_f1_" << c << ',' << fmt(f1->per_class[c].f1) << "\n";
    }
  }
  return os.str();
}

std::string swap_csv(std::span<const SwapResult> results) {
  std::ostringstream os;
  os << "category,round,accuracy,replacements\n";
  for (const auto& r : results) {
    os << swap_category_name(r.category) << ",0," << fmt(r.baseline_accuracy) << ",0\n";
    for (std::size_t i = 0; i < r.round_accuracy.size(); ++i) {
      os << swap_category_name(r.category) << ',' << i + 1 << ',' << fmt(r.round_accuracy[i]) << ','
         << r.round_replacements[i] << "\n";
    }
  }
  return os.str();
}

}  // namespace ebd
