#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <random>

#include "ebd/trainer.hpp"
#include "support.hpp"

namespace ebd {
namespace {

namespace fs = std::filesystem;

struct Fixture {
  Vocabulary vocab;
  std::vector<LabeledSequence> data;
};

Fixture make_fixture(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Record> records;
  for (std::size_t i = 0; i < n; ++i) records.push_back(test::random_record(rng));
  Fixture f{Vocabulary::build(records), {}};
  for (const auto& r : records) f.data.push_back(*build_labeled(r, f.vocab));
  return f;
}

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.num_blocks = 3;
  c.num_heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.max_len = 20;
  c.ata_dim = 4;
  return c;
}

TrainConfig tiny_train(std::size_t steps) {
  TrainConfig t;
  t.batch_size = 4;
  t.steps = steps;
  t.learning_rate = 1e-2;
  return t;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("ebdreg_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(ResolveBlocks, Examples) {
  EXPECT_EQ(resolve_blocks(BlockStrategy::top1, 4).blocks, (std::vector<std::size_t>{4}));
  EXPECT_EQ(resolve_blocks(BlockStrategy::top3, 4).blocks, (std::vector<std::size_t>{2, 3, 4}));
  EXPECT_EQ(resolve_blocks(BlockStrategy::top3, 12).blocks, (std::vector<std::size_t>{10, 11, 12}));
  EXPECT_EQ(resolve_blocks(BlockStrategy::bottom3, 4).blocks, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(resolve_blocks(BlockStrategy::all, 3).blocks, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(resolve_blocks(BlockStrategy::alternating6, 12).blocks, (std::vector<std::size_t>{2, 4, 6, 8, 10, 12}));
  EXPECT_FALSE(resolve_blocks(BlockStrategy::top3, 4).warning);
}

TEST(ResolveBlocks, ClipsWithWarning) {
  auto top6 = resolve_blocks(BlockStrategy::top6, 4);
  EXPECT_EQ(top6.blocks, (std::vector<std::size_t>{1, 2, 3, 4}));
  EXPECT_TRUE(top6.warning);
  auto alt = resolve_blocks(BlockStrategy::alternating6, 4);
  EXPECT_EQ(alt.blocks, (std::vector<std::size_t>{2, 4}));
  EXPECT_TRUE(alt.warning);
  EXPECT_THROW(resolve_blocks(BlockStrategy::top1, 0), std::invalid_argument);
}

TEST(ResolveBlocks, StrategyNamesRoundTrip) {
  for (auto s : {BlockStrategy::all, BlockStrategy::top1, BlockStrategy::top3, BlockStrategy::top6,
                 BlockStrategy::bottom3, BlockStrategy::bottom6, BlockStrategy::alternating6}) {
    EXPECT_EQ(parse_block_strategy(block_strategy_name(s)), s);
  }
  EXPECT_FALSE(parse_block_strategy("middle-2"));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.epochs = 3;
  c.batch_size = 32;
  EXPECT_EQ(c.total_steps(100), 12u);
  c.steps = 7;
  EXPECT_EQ(c.total_steps(100), 7u);
}

TEST(BatchIndices, EpochIsAPermutation) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::vector<int> seen(10, 0);
    for (std::size_t step = 0; step < 5; ++step)
      for (auto i : batch_indices(step, 10, 2, seed)) ++seen[i];
    for (int c : seen) EXPECT_EQ(c, 1);
  }
  EXPECT_EQ(batch_indices(3, 10, 4, 9), batch_indices(3, 10, 4, 9));
  EXPECT_EQ(batch_indices(2, 10, 4, 9).size(), 2u);  // tail of the epoch
}

TEST(Trainer, BundleRecombines) {
  auto f = make_fixture(8, 1);
  EncoderConfig ec = tiny_encoder();
  ec.vocab_size = f.vocab.size();
  Encoder enc(ec, 3);
  Trainer tr(enc, tiny_train(1));
  auto r = tr.compute(f.data);
  EXPECT_NEAR(r.bundle.recombine(), r.bundle.total, 1e-12);
  EXPECT_EQ(r.bundle.l_sa.size(), 3u);
  EXPECT_EQ(r.bundle.l_si.size(), 3u);
  EXPECT_GT(r.bundle.l_er, 0.0);
}

TEST(Trainer, BaselineLeavesTokenHeadUntouched) {
  auto f = make_fixture(8, 2);
  EncoderConfig ec = tiny_encoder();
  ec.vocab_size = f.vocab.size();
  Encoder enc(ec, 3);
  TrainConfig tc = tiny_train(1);
  tc.alpha = tc.beta = 0;
  Trainer tr(enc, tc);
  auto r = tr.compute(f.data);
  const auto& ps = enc.params();
  for (const char* name : {"head.token.w", "head.token.b"}) {
    for (double g : r.grads.per_param[ps.index(name)].data) EXPECT_EQ(g, 0.0);
  }
  EXPECT_EQ(r.bundle.total, r.bundle.l_main);
}

TEST(Trainer, SwitchZeroesItsComponent) {
  auto f = make_fixture(6, 3);
  EncoderConfig ec = tiny_encoder();
  ec.vocab_size = f.vocab.size();
  Encoder enc(ec, 5);
  TrainConfig tc = tiny_train(1);
  tc.switches.er = false;
  auto no_er = Trainer(enc, tc).compute(f.data);
  EXPECT_EQ(no_er.bundle.l_er, 0.0);
  for (double g : no_er.grads.per_param[enc.params().index("head.token.w")].data) EXPECT_EQ(g, 0.0);
  tc = tiny_train(1);
  tc.switches.sa = false;
  auto no_sa = Trainer(enc, tc).compute(f.data);
  EXPECT_TRUE(no_sa.bundle.l_sa.empty());
  EXPECT_EQ(no_sa.bundle.l_si.size(), 3u);
  tc = tiny_train(1);
  tc.switches.si = false;
  auto no_si = Trainer(enc, tc).compute(f.data);
  EXPECT_TRUE(no_si.bundle.l_si.empty());
  EXPECT_EQ(no_si.bundle.l_sa.size(), 3u);
}

TEST(Trainer, ZeroBetaSkipsSubPassesWithoutChangingLoss) {
  auto f = make_fixture(6, 4);
  EncoderConfig ec = tiny_encoder();
  ec.vocab_size = f.vocab.size();
  Encoder enc(ec, 5);
  TrainConfig a = tiny_train(1), b = tiny_train(1);
  a.beta = b.beta = 0;
  b.switches.sa = b.switches.si = false;
  auto ra = Trainer(enc, a).compute(f.data), rb = Trainer(enc, b).compute(f.data);
  EXPECT_EQ(ra.bundle.total, rb.bundle.total);
  for (std::size_t i = 0; i < ra.grads.per_param.size(); ++i) EXPECT_EQ(ra.grads.per_param[i].data, rb.grads.per_param[i].data);
}

TEST(Trainer, FixedBatchLossDecreases) {
  auto f = make_fixture(8, 5);
  EncoderConfig ec = tiny_encoder();
  ec.vocab_size = f.vocab.size();
  Encoder enc(ec, 7);
  TrainConfig tc = tiny_train(200);
  tc.learning_rate = 3e-3;
  Trainer tr(enc, tc);
  const double first = tr.compute(f.data).bundle.total;
  for (int s = 0; s < 200; ++s) tr.train_step(f.data);
  EXPECT_LT(tr.compute(f.data).bundle.total, first);
  EXPECT_EQ(tr.optimizer().step, 200u);
}

TEST(Trainer, NonFiniteLossAborts) {
  auto f = make_fixture(4, 6);
  EncoderConfig ec = tiny_encoder();
  ec.vocab_size = f.vocab.size();
  Encoder enc(ec, 7);
  enc.params().value("head.relation.b")[0] = std::numeric_limits<double>::quiet_NaN();
  Trainer tr(enc, tiny_train(1));
  EXPECT_THROW(tr.train_step(f.data), TrainingDiverged);
}

TEST(Train, DeterministicAcrossRuns) {
  auto f = make_fixture(20, 7);
  auto a = train(f.data, f.vocab, tiny_encoder(), tiny_train(10));
  auto b = train(f.data, f.vocab, tiny_encoder(), tiny_train(10));
  ASSERT_EQ(a.metrics.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(a.metrics[i].total, b.metrics[i].total);
    EXPECT_EQ(a.metrics[i].l_si_sum, b.metrics[i].l_si_sum);
  }
  for (std::size_t i = 0; i < a.checkpoint.params.size(); ++i)
    EXPECT_EQ(a.checkpoint.params[i].value.data, b.checkpoint.params[i].value.data);
}

TEST(Train, ZeroStepsKeepsInitialization) {
  auto f = make_fixture(10, 8);
  TrainConfig tc = tiny_train(0);
  tc.epochs = 0;
  auto out = train(f.data, f.vocab, tiny_encoder(), tc);
  EXPECT_TRUE(out.metrics.empty());
  EncoderConfig ec = tiny_encoder();
  ec.vocab_size = f.vocab.size();
  Encoder init(ec, tc.seed);
  for (std::size_t i = 0; i < init.params().size(); ++i)
    EXPECT_EQ(out.checkpoint.params[i].value.data, init.params()[i].value.data);
  EXPECT_EQ(out.checkpoint.step, 0u);
}

TEST(Train, MetricsLogHasOneLinePerStep) {
  auto f = make_fixture(12, 9);
  fs::path dir = temp_dir("metrics");
  TrainConfig tc = tiny_train(7);
  tc.metrics_path = (dir / "m.jsonl").string();
  train(f.data, f.vocab, tiny_encoder(), tc);
  std::ifstream in(tc.metrics_path);
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<std::size_t>(), lines);
    ++lines;
  }
  EXPECT_EQ(lines, 7u);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  auto f = make_fixture(18, 10);
  fs::path dir = temp_dir("resume");
  auto full = train(f.data, f.vocab, tiny_encoder(), tiny_train(12));

  TrainConfig first = tiny_train(5);
  first.checkpoint_path = (dir / "ck.json").string();
  train(f.data, f.vocab, tiny_encoder(), first);
  Checkpoint ck = load_checkpoint(first.checkpoint_path);
  EXPECT_EQ(ck.step, 5u);
  EXPECT_EQ(ck.config_hash, config_hash(tiny_train(12), [&] {
              EncoderConfig e = tiny_encoder();
              e.vocab_size = f.vocab.size();
              return e;
            }()));

  auto rest = train(f.data, f.vocab, tiny_encoder(), tiny_train(12), &ck);
  ASSERT_EQ(rest.metrics.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(rest.metrics[i].step, i + 5);
    EXPECT_EQ(rest.metrics[i].total, full.metrics[i + 5].total);
  }
  for (std::size_t i = 0; i < full.checkpoint.params.size(); ++i)
    EXPECT_EQ(rest.checkpoint.params[i].value.data, full.checkpoint.params[i].value.data);
}

TEST(Train, DivergenceReportsLastCheckpoint) {
  auto f = make_fixture(8, 11);
  auto out = train(f.data, f.vocab, tiny_encoder(), tiny_train(2));
  Checkpoint ck = out.checkpoint;
  ck.params.value("head.relation.w")[0] = std::numeric_limits<double>::infinity();
  try {
    train(f.data, f.vocab, tiny_encoder(), tiny_train(4), &ck);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.step(), 2u);
    EXPECT_TRUE(e.last_checkpoint().empty());
  }
}

TEST(Checkpoint, RoundTripAndValidation) {
  auto f = make_fixture(8, 12);
  fs::path dir = temp_dir("ckpt");
  auto out = train(f.data, f.vocab, tiny_encoder(), tiny_train(3));
  save_checkpoint(dir / "a.json", out.checkpoint);
  Checkpoint back = load_checkpoint(dir / "a.json");
  EXPECT_EQ(back.step, 3u);
  EXPECT_EQ(back.vocab_words, out.checkpoint.vocab_words);
  EXPECT_EQ(back.encoder_config, out.checkpoint.encoder_config);
  EXPECT_EQ(back.supervised_blocks, out.checkpoint.supervised_blocks);
  for (std::size_t i = 0; i < back.params.size(); ++i) {
    EXPECT_EQ(back.params[i].name, out.checkpoint.params[i].name);
    EXPECT_EQ(back.params[i].value.data, out.checkpoint.params[i].value.data);
    EXPECT_EQ(back.optimizer.m.per_param[i].data, out.checkpoint.optimizer.m.per_param[i].data);
  }
  std::vector<TokenId> probe = {0, 5, 6, 1, 7};
  EXPECT_EQ(back.make_encoder().predict(probe), out.checkpoint.make_encoder().predict(probe));

  std::ofstream(dir / "bad.json") << R"({"format": "something-else"})";
  EXPECT_THROW(load_checkpoint(dir / "bad.json"), std::runtime_error);
  EXPECT_THROW(load_checkpoint(dir / "missing.json"), std::runtime_error);
}

TEST(ConfigHash, IgnoresRunLengthOnly) {
  EncoderConfig e = tiny_encoder();
  TrainConfig a = tiny_train(5), b = tiny_train(50);
  b.epochs = 9;
  b.metrics_path = "x";
  EXPECT_EQ(config_hash(a, e), config_hash(b, e));
  b.alpha = 0.5;
  EXPECT_NE(config_hash(a, e), config_hash(b, e));
  e.d_model = 16;
  EXPECT_NE(config_hash(a, tiny_encoder()), config_hash(a, e));
}

}  // namespace
}  // namespace ebd
