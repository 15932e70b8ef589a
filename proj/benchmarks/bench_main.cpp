#include <benchmark/benchmark.h>

#include <random>

#include "ebd/objectives.hpp"
#include "ebd/synthetic.hpp"
#include "ebd/trainer.hpp"

namespace {

using namespace ebd;

struct Workload {
  Vocabulary vocab;
  std::vector<LabeledSequence> data;
};

const Workload& workload() {
  static const Workload w = [] {
    SyntheticSpec spec = SyntheticSpec::defaults();
    spec.train_size = 256;
    spec.dev_size = spec.ood_size = 1;
    auto corpus = generate_synthetic(spec);
    Workload out{Vocabulary::build(corpus.train), {}};
    for (const auto& r : corpus.train)
      if (auto s = build_labeled(r, out.vocab)) out.data.push_back(std::move(*s));
    return out;
  }();
  return w;
}

EncoderConfig encoder_config(std::size_t d_model) {
  EncoderConfig c;
  c.vocab_size = workload().vocab.size();
  c.d_model = d_model;
  c.d_ff = 2 * d_model;
  c.ata_dim = d_model / 2;
  c.max_len = 24;
  return c;
}

void BM_Predict(benchmark::State& state) {
  Encoder enc(encoder_config(static_cast<std::size_t>(state.range(0))), 1);
  const auto& tokens = workload().data.front().tokens;
  for (auto _ : state) benchmark::DoNotOptimize(enc.predict(tokens));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Predict)->Arg(16)->Arg(32)->Arg(64);

void BM_TrainStep(benchmark::State& state) {
  Encoder enc(encoder_config(static_cast<std::size_t>(state.range(0))), 1);
  TrainConfig tc;
  tc.beta = state.range(1) != 0 ? 0.8 : 0.0;
  Trainer trainer(enc, tc);
  std::span<const LabeledSequence> batch(workload().data.data(), 16);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(batch));
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_TrainStep)->Args({16, 0})->Args({16, 1})->Args({32, 1})->Unit(benchmark::kMillisecond);

void BM_JointDistribution(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> pool(1024, std::vector<double>(kNumRelations));
  for (auto& v : pool) {
    double z = 0;
    for (auto& x : v) z += (x = u(rng));
    for (auto& x : v) x /= z;
  }
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(joint_distribution(pool[i % 1024], pool[(i + 1) % 1024]));
    ++i;
  }
}
BENCHMARK(BM_JointDistribution);

}  // namespace

BENCHMARK_MAIN();
