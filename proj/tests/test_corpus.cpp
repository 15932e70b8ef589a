#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ebd/corpus.hpp"
#include "support.hpp"

namespace ebd {
namespace {

using Words = std::vector<std::string>;

Record figure_one() {
  return test::make_record("A girl playing a violin along with a group of people",
                           "A girl is washing a load of laundry",
                           "A girl cannot be washing a load of laundry while playing a violin", Relation::contradicted);
}

TEST(Relations, PriorityAndMinimum) {
  EXPECT_EQ(priority(Relation::entailed), 2);
  EXPECT_EQ(priority(Relation::neutral), 1);
  EXPECT_EQ(priority(Relation::contradicted), 0);
  EXPECT_EQ(min_priority(Relation::entailed, Relation::neutral), Relation::neutral);
  EXPECT_EQ(min_priority(Relation::contradicted, Relation::entailed), Relation::contradicted);
  EXPECT_EQ(min_priority(Relation::entailed, Relation::entailed), Relation::entailed);
}

TEST(Relations, ParseAliases) {
  EXPECT_EQ(parse_relation("entailment"), Relation::entailed);
  EXPECT_EQ(parse_relation("Contradiction"), Relation::contradicted);
  EXPECT_EQ(parse_relation("NEUTRAL"), Relation::neutral);
  EXPECT_FALSE(parse_relation("maybe"));
}

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("A girl playing a violin"), (Words{"a", "girl", "playing", "a", "violin"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("Children enjoying a birthday party."), (Words{"children", "enjoying", "a", "birthday", "party"}));
  EXPECT_EQ(tokenize("  don't\tstop,  now! "), (Words{"dont", "stop", "now"}));
}

TEST(Vocabulary, SpecialsAndUnknown) {
  Vocabulary v = Vocabulary::build(std::vector<Record>{test::make_record("a girl", "a boy", "x", Relation::neutral)});
  EXPECT_EQ(v.size(), Vocabulary::num_specials + 3);
  EXPECT_EQ(v.id("a"), Vocabulary::num_specials);
  EXPECT_EQ(v.id("girl"), Vocabulary::num_specials + 1);
  EXPECT_EQ(v.id("zebra"), Vocabulary::unk);
  EXPECT_TRUE(Vocabulary::is_special(Vocabulary::mask));
}

TEST(Vocabulary, MinCountDropsRareWords) {
  std::vector<Record> rs = {test::make_record("a dog", "a cat", "x", Relation::neutral)};
  Vocabulary v = Vocabulary::build(rs, 2);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_FALSE(v.contains("dog"));
}

TEST(Vocabulary, SaveLoadRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "ebd_vocab_test.txt";
  Vocabulary v = Vocabulary::from_words(Words{"alpha", "beta", "gamma"});
  v.save(path);
  Vocabulary back = Vocabulary::load(path);
  EXPECT_EQ(back.size(), v.size());
  EXPECT_EQ(back.id("gamma"), v.id("gamma"));
  std::filesystem::remove(path);
  EXPECT_THROW(Vocabulary::from_words(Words{"a", "a"}), std::invalid_argument);
}

TEST(AssemblePair, Layout) {
  Vocabulary v = Vocabulary::from_words(Words{"a", "girl"});
  PairSequence p = assemble_pair(Words{"a", "girl"}, Words{"a", "girl"}, v);
  const TokenId a = v.id("a"), g = v.id("girl");
  EXPECT_EQ(p.ids, (std::vector<TokenId>{Vocabulary::cls, a, g, Vocabulary::sep, a, g}));
  EXPECT_TRUE(p.is_special_position(0));
  EXPECT_TRUE(p.is_special_position(3));
  EXPECT_FALSE(p.is_special_position(4));
}

TEST(AssemblePair, LengthsAndUnknown) {
  Vocabulary v;
  PairSequence p = assemble_pair(Words(5, "x"), Words(7, "y"), v);
  EXPECT_EQ(p.size(), 14u);
  EXPECT_EQ(p.ids[1], Vocabulary::unk);
  EXPECT_THROW(assemble_pair(Words{}, Words{"y"}, v), std::invalid_argument);
  EXPECT_THROW(assemble_pair(Words{"x"}, Words{}, v), std::invalid_argument);
}

TEST(LabelTokens, FigureOneUnambiguousWords) {
  const Record r = figure_one();
  Vocabulary v = Vocabulary::build(std::vector<Record>{r});
  PairSequence p = assemble_pair(r.premise, r.hypothesis, v);
  auto labels = label_tokens(p, r.premise, r.hypothesis, r.explanation);
  ASSERT_TRUE(labels);
  auto label_of = [&](const std::string& w) {
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p.words[i] == w) return (*labels)[i];
    ADD_FAILURE() << w << " not found";
    return TokenLabel::bias;
  };
  for (const char* w : {"playing", "violin", "washing", "laundry"}) EXPECT_EQ(label_of(w), TokenLabel::distinct_keyword) << w;
  EXPECT_EQ(label_of("girl"), TokenLabel::shared_keyword);
  for (const char* w : {"is", "along", "with", "group", "people"}) EXPECT_EQ(label_of(w), TokenLabel::bias) << w;
  EXPECT_EQ((*labels)[0], TokenLabel::bias);
  EXPECT_EQ((*labels)[r.premise.size() + 1], TokenLabel::bias);
}

TEST(LabelTokens, StopwordsOptOut) {
  const Record r = figure_one();
  Vocabulary v = Vocabulary::build(std::vector<Record>{r});
  PairSequence p = assemble_pair(r.premise, r.hypothesis, v);
  LabelOptions opts;
  opts.stopwords = {"of", "load"};
  auto labels = label_tokens(p, r.premise, r.hypothesis, r.explanation, opts);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.words[i] == "of" || p.words[i] == "load") EXPECT_EQ((*labels)[i], TokenLabel::bias);
  }
}

TEST(LabelTokens, EmptyExplanationFlagsRecord) {
  Vocabulary v;
  PairSequence p = assemble_pair(Words{"a"}, Words{"b"}, v);
  EXPECT_FALSE(label_tokens(p, Words{"a"}, Words{"b"}, Words{}));
  EXPECT_FALSE(build_labeled(Record{Words{"a"}, Words{"b"}, Words{}, Relation::neutral}, v));
}

TEST(LabelTokens, PermutingExplanationNeverChangesLabels) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 300; ++t) {
    Record r = test::random_record(rng);
    Vocabulary v = Vocabulary::build(std::vector<Record>{r});
    PairSequence p = assemble_pair(r.premise, r.hypothesis, v);
    auto base = label_tokens(p, r.premise, r.hypothesis, r.explanation);
    Words shuffled = r.explanation;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_EQ(*base, *label_tokens(p, r.premise, r.hypothesis, shuffled));
  }
}

TEST(LabelTokens, KeywordClassesAgreeWithSetMembership) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 300; ++t) {
    Record r = test::random_record(rng);
    Vocabulary v = Vocabulary::build(std::vector<Record>{r});
    PairSequence p = assemble_pair(r.premise, r.hypothesis, v);
    auto labels = *label_tokens(p, r.premise, r.hypothesis, r.explanation);
    auto in = [](const Words& ws, const std::string& w) { return std::find(ws.begin(), ws.end(), w) != ws.end(); };
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p.is_special_position(i)) continue;
      const std::string& w = p.words[i];
      const bool both = in(r.premise, w) && in(r.hypothesis, w);
      if (labels[i] == TokenLabel::distinct_keyword) EXPECT_FALSE(both);
      if (labels[i] == TokenLabel::shared_keyword) EXPECT_TRUE(both);
      EXPECT_EQ(labels[i] != TokenLabel::bias, in(r.explanation, w));
    }
  }
}

TEST(NormalizeLabels, Examples) {
  using L = TokenLabel;
  auto t = normalize_labels(std::vector<L>{L::bias, L::distinct_keyword, L::shared_keyword, L::bias});
  EXPECT_FALSE(t.uniform_fallback);
  EXPECT_DOUBLE_EQ(t.values[1], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(t.values[2], 1.0 / 3.0);
  EXPECT_EQ(t.values[0], 0.0);
  auto u = normalize_labels(std::vector<L>(4, L::bias));
  EXPECT_TRUE(u.uniform_fallback);
  EXPECT_EQ(u.values, (std::vector<double>(4, 0.25)));
  auto h = normalize_labels(std::vector<L>{L::distinct_keyword, L::distinct_keyword});
  EXPECT_EQ(h.values, (std::vector<double>{0.5, 0.5}));
}

TEST(MaskSequences, Examples) {
  using L = TokenLabel;
  const TokenId a = 10, g = 11;
  std::vector<TokenId> tokens = {Vocabulary::cls, a, g, Vocabulary::sep};
  auto m = mask_sequences(tokens, std::vector<L>{L::bias, L::shared_keyword, L::distinct_keyword, L::bias});
  EXPECT_EQ(m.psi, tokens);
  EXPECT_EQ(m.sigma, (std::vector<TokenId>{Vocabulary::cls, Vocabulary::mask, Vocabulary::mask, Vocabulary::sep}));
  auto all_bias = mask_sequences(tokens, std::vector<L>(4, L::bias));
  EXPECT_EQ(all_bias.sigma, tokens);
  EXPECT_EQ(all_bias.psi, (std::vector<TokenId>{Vocabulary::cls, Vocabulary::mask, Vocabulary::mask, Vocabulary::sep}));
}

TEST(BuildLabeled, LengthsAgree) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 100; ++t) {
    Record r = test::random_record(rng);
    Vocabulary v = Vocabulary::build(std::vector<Record>{r});
    auto s = build_labeled(r, v);
    ASSERT_TRUE(s);
    const std::size_t n = r.premise.size() + r.hypothesis.size() + 2;
    EXPECT_EQ(s->tokens.size(), n);
    EXPECT_EQ(s->labels.size(), n);
    EXPECT_EQ(s->targets.size(), n);
    EXPECT_EQ(s->psi_tokens.size(), n);
    EXPECT_EQ(s->sigma_tokens.size(), n);
    double total = 0;
    for (double x : s->targets) total += x;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Jsonl, ParsesSchemaAndAliases) {
  std::istringstream in(
      R"({"premise":"A","hypothesis":"B","label":"neutral","explanation":"C"})"
      "\n"
      R"({"premise":"A dog","hypothesis":"An animal","label":"entailment","explanation":"a dog is an animal"})"
      "\n");
  LoadResult r = parse_jsonl(in);
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].premise, Words{"a"});
  EXPECT_EQ(r.records[1].label, Relation::entailed);
  EXPECT_TRUE(r.issues.empty());
}

TEST(Jsonl, MalformedLinesReportLineNumbers) {
  const std::string text =
      R"({"premise":"A","hypothesis":"B","label":"neutral","explanation":"C"})"
      "\n"
      R"({"premise":"A","hypothesis":"B","lab)"
      "\n"
      R"({"premise":"A","hypothesis":"B","label":"unsure","explanation":"C"})"
      "\n"
      R"({"premise":"A","label":"neutral","explanation":"C"})"
      "\n";
  std::istringstream skip(text);
  LoadResult r = parse_jsonl(skip);
  EXPECT_EQ(r.records.size(), 1u);
  ASSERT_EQ(r.issues.size(), 3u);
  EXPECT_EQ(r.issues[0].line, 2u);
  EXPECT_EQ(r.issues[1].line, 3u);
  EXPECT_EQ(r.issues[2].line, 4u);

  std::istringstream fatal(text);
  LoadOptions opts;
  opts.on_malformed = OnMalformed::fatal;
  try {
    parse_jsonl(fatal, opts);
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Jsonl, ExplanationOptionalWhenNotRequired) {
  std::istringstream in(R"({"premise":"A","hypothesis":"B","label":"neutral"})");
  LoadOptions opts;
  opts.require_explanation = false;
  LoadResult r = parse_jsonl(in, opts);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_FALSE(r.records[0].supervisable());
}

TEST(Jsonl, WriteThenLoadRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "ebd_jsonl_test.jsonl";
  std::mt19937_64 rng(8);
  std::vector<Record> rs;
  for (int i = 0; i < 20; ++i) rs.push_back(test::random_record(rng));
  write_jsonl(path, rs);
  LoadResult back = load_jsonl(path);
  ASSERT_EQ(back.records.size(), rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i) {
    EXPECT_EQ(back.records[i].premise, rs[i].premise);
    EXPECT_EQ(back.records[i].hypothesis, rs[i].hypothesis);
    EXPECT_EQ(back.records[i].explanation, rs[i].explanation);
    EXPECT_EQ(back.records[i].label, rs[i].label);
  }
  std::filesystem::remove(path);
  EXPECT_THROW(load_jsonl("/nonexistent/ebd.jsonl"), DatasetError);
}

}  // namespace
}  // namespace ebd
