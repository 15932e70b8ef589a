#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "ebd/evaluator.hpp"
#include "support.hpp"

namespace ebd {
namespace {

using TL = TokenLabel;

struct Scene {
  std::vector<Record> records;
  Vocabulary vocab;
  EncoderConfig config;
};

Scene make_setup(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Scene s;
  for (std::size_t i = 0; i < n; ++i) s.records.push_back(test::random_record(rng));
  s.vocab = Vocabulary::build(s.records);
  s.config.vocab_size = s.vocab.size();
  s.config.num_blocks = 3;
  s.config.num_heads = 2;
  s.config.d_model = 8;
  s.config.d_ff = 16;
  s.config.max_len = 20;
  s.config.ata_dim = 4;
  s.config.init_std = 0.5;
  return s;
}

TEST(Argmax, TiesGoToLowerIndex) {
  EXPECT_EQ(argmax_relation({0.2, 0.5, 0.3}), Relation::neutral);
  EXPECT_EQ(argmax_relation({0.4, 0.2, 0.4}), Relation::entailed);
  EXPECT_EQ(argmax_relation({0.2, 0.4, 0.4}), Relation::neutral);
}

TEST(Evaluate, ConstantPredictorAccuracy) {
  Scene s = make_setup(4, 1);
  Encoder enc(s.config, 2);
  auto& w = enc.params().value("head.relation.w");
  std::fill(w.data.begin(), w.data.end(), 0.0);
  enc.params().value("head.relation.b").data = {1.0, 0.0, 0.0};
  s.records[0].label = s.records[1].label = Relation::entailed;
  s.records[2].label = Relation::neutral;
  s.records[3].label = Relation::contradicted;
  auto rep = evaluate(enc, s.vocab, s.records);
  EXPECT_EQ(rep.total, 4u);
  EXPECT_EQ(rep.correct, 2u);
  EXPECT_DOUBLE_EQ(rep.accuracy, 0.5);
  EXPECT_EQ(rep.per_class[0].predicted, 4u);
  EXPECT_EQ(rep.per_class[0].correct, 2u);
  EXPECT_EQ(rep.per_class[2].gold, 1u);
}

TEST(Evaluate, AgreesWithDirectArgmax) {
  Scene s = make_setup(30, 3);
  Encoder enc(s.config, 4);
  auto rep = evaluate(enc, s.vocab, s.records);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    auto seq = assemble_pair(s.records[i].premise, s.records[i].hypothesis, s.vocab);
    auto p = enc.predict(seq.ids);
    const auto k = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    EXPECT_EQ(rep.predictions[i], relation_from_index(k));
    correct += relation_from_index(k) == s.records[i].label;
  }
  EXPECT_EQ(rep.correct, correct);
  EXPECT_THROW(evaluate(enc, s.vocab, std::span<const Record>{}), std::invalid_argument);
}

TEST(TokenF1, HandComputedConfusion) {
  // Class 0: tp 1, predicted 2, gold 3 -> P 1/2, R 1/3, F1 2/5.
  // Class 1: tp 1, predicted 3, gold 2 -> P 1/3, R 1/2, F1 2/5.
  // Class 2: tp 0 -> F1 0.
  std::vector<TL> gold = {TL::bias, TL::bias, TL::bias, TL::shared_keyword, TL::shared_keyword, TL::distinct_keyword};
  std::vector<TL> pred = {TL::bias, TL::shared_keyword, TL::shared_keyword, TL::shared_keyword, TL::distinct_keyword,
                          TL::bias};
  auto r = token_f1_from_predictions(gold, pred);
  EXPECT_NEAR(r.per_class[0].precision, 0.5, 1e-15);
  EXPECT_NEAR(r.per_class[0].recall, 1.0 / 3, 1e-15);
  EXPECT_NEAR(r.per_class[0].f1, 0.4, 1e-15);
  EXPECT_NEAR(r.per_class[1].f1, 0.4, 1e-15);
  EXPECT_DOUBLE_EQ(r.per_class[2].f1, 0.0);
  EXPECT_NEAR(r.macro_f1, 0.8 / 3, 1e-15);
  EXPECT_NEAR(r.micro_f1, 1.0 / 3, 1e-15);
  EXPECT_EQ(r.positions, 6u);
  EXPECT_TRUE(r.empty_classes.empty());
}

TEST(TokenF1, PerfectAndEmptyClasses) {
  std::vector<TL> gold = {TL::bias, TL::distinct_keyword, TL::bias};
  auto r = token_f1_from_predictions(gold, gold);
  EXPECT_DOUBLE_EQ(r.per_class[0].f1, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[2].f1, 1.0);
  EXPECT_EQ(r.empty_classes, (std::vector<std::size_t>{1}));
  EXPECT_DOUBLE_EQ(r.micro_f1, 1.0);
  EXPECT_THROW(token_f1_from_predictions(gold, std::vector<TL>{TL::bias}), std::invalid_argument);
}

TEST(TokenF1, SkipsSpecialsAndUnexplainedRecords) {
  Scene s = make_setup(10, 5);
  s.records[3].explanation.clear();
  Encoder enc(s.config, 6);
  auto r = token_f1(enc, s.vocab, s.records);
  std::size_t expected = 0;
  for (const auto& rec : s.records)
    if (!rec.explanation.empty()) expected += rec.premise.size() + rec.hypothesis.size();
  EXPECT_EQ(r.positions, expected);
}

TEST(Lexicon, Parse) {
  std::istringstream in("# synonyms\n\ndog\tcanine, hound\nrun\tsprint,go quickly\ndog\tpup\nempty\t \n");
  Lexicon lex = parse_lexicon(in);
  EXPECT_EQ(lex.at("dog"), (std::vector<std::string>{"canine", "hound", "pup"}));
  EXPECT_EQ(lex.at("run"), (std::vector<std::string>{"sprint", "go quickly"}));
  EXPECT_FALSE(lex.contains("empty"));
  std::istringstream bad("dog canine\n");
  try {
    parse_lexicon(bad);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
}

TEST(SwapEval, EmptyLexiconChangesNothing) {
  Scene s = make_setup(20, 7);
  Encoder enc(s.config, 8);
  auto r = swap_eval(enc, s.vocab, s.records, {}, SwapCategory::bias, 3, 1);
  EXPECT_TRUE(r.warning);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.round_accuracy[i], r.baseline_accuracy);
    EXPECT_EQ(r.round_replacements[i], 0u);
  }
}

TEST(SwapEval, IdentityLexiconChangesNothing) {
  Scene s = make_setup(20, 9);
  Encoder enc(s.config, 10);
  Lexicon lex;
  for (const auto& w : s.vocab.ordinary_words()) lex[w] = {w};
  auto r = swap_eval(enc, s.vocab, s.records, lex, SwapCategory::keyword_distinct, 2, 3);
  EXPECT_FALSE(r.warning);
  for (double a : r.round_accuracy) EXPECT_EQ(a, r.baseline_accuracy);
}

TEST(SwapEval, ReplacesOnlyTheRequestedCategory) {
  Scene s = make_setup(25, 11);
  Encoder enc(s.config, 12);
  Lexicon lex = {{"the", {"a"}}, {"dog", {"big cat"}}, {"runs", {"sleeps"}}};
  for (auto category : {SwapCategory::bias, SwapCategory::keyword_intersect, SwapCategory::keyword_distinct}) {
    const TokenLabel want = category == SwapCategory::bias               ? TL::bias
                            : category == SwapCategory::keyword_intersect ? TL::shared_keyword
                                                                           : TL::distinct_keyword;
    std::size_t expected = 0;
    for (const auto& rec : s.records) {
      auto seq = build_labeled(rec, s.vocab);
      auto pair = assemble_pair(rec.premise, rec.hypothesis, s.vocab);
      for (std::size_t i = 0; i < pair.size(); ++i)
        if (!pair.is_special_position(i) && seq->labels[i] == want && lex.contains(pair.words[i])) ++expected;
    }
    auto r = swap_eval(enc, s.vocab, s.records, lex, category, 2, 5);
    EXPECT_EQ(r.round_replacements[0], expected);
    EXPECT_EQ(r.round_replacements[1], expected);
    EXPECT_EQ(r.evaluated, s.records.size());
  }
}

TEST(SwapEval, SameSeedSameResult) {
  Scene s = make_setup(25, 13);
  Encoder enc(s.config, 14);
  Lexicon lex = {{"the", {"a", "two", "red"}}, {"a", {"the", "big"}}};
  auto a = swap_eval(enc, s.vocab, s.records, lex, SwapCategory::bias, 4, 99);
  auto b = swap_eval(enc, s.vocab, s.records, lex, SwapCategory::bias, 4, 99);
  EXPECT_EQ(a.round_accuracy, b.round_accuracy);
  EXPECT_THROW(swap_eval(enc, s.vocab, s.records, lex, SwapCategory::bias, 0, 1), std::invalid_argument);
}

TEST(SwapCategory, Names) {
  for (auto c : {SwapCategory::bias, SwapCategory::keyword_intersect, SwapCategory::keyword_distinct})
    EXPECT_EQ(parse_swap_category(swap_category_name(c)), c);
  EXPECT_FALSE(parse_swap_category("verbs"));
}

TEST(AttentionReport, MassesPartitionAttention) {
  Scene s = make_setup(15, 15);
  Encoder enc(s.config, 16);
  std::vector<std::size_t> blocks = {2, 3};
  auto rep = attention_report(enc, s.vocab, s.records, blocks);
  ASSERT_EQ(rep.examples.size(), s.records.size());
  double mass = 0;
  for (const auto& ex : rep.examples) {
    ASSERT_EQ(ex.blocks.size(), 2u);
    for (const auto& b : ex.blocks) {
      double sum = 0, kw = 0;
      for (std::size_t i = 0; i < b.values.size(); ++i) {
        sum += b.values[i];
        if (ex.labels[i] != TL::bias) kw += b.values[i];
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
      EXPECT_NEAR(b.keyword_mass, kw, 1e-12);
      EXPECT_NEAR(b.keyword_mass + b.bias_mass, 1.0, 1e-9);
      mass += b.keyword_mass;
    }
  }
  EXPECT_NEAR(rep.mean_keyword_mass(), mass / (2.0 * rep.examples.size()), 1e-12);
  const auto j = nlohmann::json::parse(rep.to_json());
  EXPECT_EQ(j.at("examples").size(), s.records.size());
  std::vector<std::size_t> bad = {4};
  EXPECT_THROW(attention_report(enc, s.vocab, s.records, bad), std::out_of_range);
}

TEST(SubInferenceReport, ConsistencyFollowsPriorityRule) {
  Scene s = make_setup(20, 17);
  Encoder enc(s.config, 18);
  auto rep = sub_inference_report(enc, s.vocab, s.records, 3);
  ASSERT_EQ(rep.rows.size(), s.records.size());
  std::size_t consistent = 0;
  for (const auto& row : rep.rows) {
    auto seq = *build_labeled(s.records[row.index], s.vocab);
    EXPECT_EQ(row.psi, argmax_relation(enc.sub_distribution(3, seq.psi_tokens)));
    EXPECT_EQ(row.sigma, argmax_relation(enc.sub_distribution(3, seq.sigma_tokens)));
    EXPECT_EQ(row.main, argmax_relation(enc.predict(seq.tokens)));
    EXPECT_EQ(row.consistent, min_priority(row.psi, row.sigma) == row.main);
    consistent += row.consistent;
  }
  EXPECT_NEAR(rep.consistency_rate, static_cast<double>(consistent) / rep.rows.size(), 1e-15);
  EXPECT_TRUE(nlohmann::json::accept(rep.to_json()));
}

TEST(Csv, Headers) {
  Scene s = make_setup(6, 19);
  Encoder enc(s.config, 20);
  auto ev = evaluate(enc, s.vocab, s.records);
  std::string csv = eval_csv(ev, token_f1(enc, s.vocab, s.records));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "metric,value");
  EXPECT_NE(csv.find("token_macro_f1,"), std::string::npos);
  auto sw = swap_eval(enc, s.vocab, s.records, {}, SwapCategory::bias, 2, 1);
  std::vector<SwapResult> results = {sw};
  std::string swcsv = swap_csv(results);
  std::istringstream in(swcsv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "category,round,accuracy,replacements");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3u);
}

}  // namespace
}  // namespace ebd
