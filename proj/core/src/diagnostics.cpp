#include "ebd/diagnostics.hpp"

#include "ebd/objectives.hpp"
#include "ebd/trainer.hpp"

namespace ebd {

namespace {

std::vector<Record> probe_records() {
  auto rec = [](const char* p, const char* h, const char* e, Relation y) {
    return Record{tokenize(p), tokenize(h), tokenize(e), y};
  };
  return {rec("a girl is playing a violin in the park", "the girl is washing laundry",
              "playing a violin is not washing laundry", Relation::contradicted),
          rec("two men are running near a lake", "men are jogging outside", "running implies jogging",
              Relation::entailed)};
}

}  // namespace

std::vector<LossTermCheck> check_loss_gradients(std::uint64_t seed, double step) {
  const auto records = probe_records();
  const Vocabulary vocab = Vocabulary::build(records);
  std::vector<LabeledSequence> batch;
  for (const auto& r : records) batch.push_back(*build_labeled(r, vocab));

  EncoderConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.num_blocks = 2;
  cfg.num_heads = 2;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.ata_dim = 4;
  cfg.max_len = 16;
  cfg.init_std = 0.3;
  cfg.ln_eps = 1e-5;
  Encoder encoder(cfg, seed);
  const std::vector<std::size_t> blocks = {1, 2};

  auto per_example_mean = [&](auto&& term) {
    return [&, term](Tape& tape, const ParamStore&) {
      std::optional<Var> acc;
      for (const auto& ex : batch) {
        Var v = term(tape, ex);
        acc = acc ? add(*acc, v) : v;
      }
      return scale(*acc, 1.0 / static_cast<double>(batch.size()));
    };
  };

  std::vector<std::pair<const char*, LossBuilder>> terms;
  terms.emplace_back("l_main", per_example_mean([&](Tape& t, const LabeledSequence& ex) {
    auto reps = encoder.forward(t, ex.tokens, cfg.num_blocks);
    return loss_main(encoder.relation_distribution(t, reps.back()), ex.gold);
  }));
  terms.emplace_back("l_er", per_example_mean([&](Tape& t, const LabeledSequence& ex) {
    auto reps = encoder.forward(t, ex.tokens, cfg.num_blocks);
    return loss_er(softmax(encoder.token_logits(t, reps.back())), ex.labels);
  }));
  terms.emplace_back("l_sa", per_example_mean([&](Tape& t, const LabeledSequence& ex) {
    auto reps = encoder.forward(t, ex.tokens, cfg.num_blocks);
    Var s = loss_sa(Encoder::cls_attention(reps[0]), ex.targets);
    return add(s, loss_sa(Encoder::cls_attention(reps[1]), ex.targets));
  }));
  terms.emplace_back("l_si", per_example_mean([&](Tape& t, const LabeledSequence& ex) {
    auto reps = encoder.forward(t, ex.tokens, cfg.num_blocks);
    auto psi = encoder.forward(t, ex.psi_tokens, cfg.num_blocks);
    auto sigma = encoder.forward(t, ex.sigma_tokens, cfg.num_blocks);
    std::optional<Var> acc;
    for (std::size_t h = 0; h < cfg.num_blocks; ++h) {
      Var si = loss_si(encoder.relation_distribution(t, reps[h]), encoder.relation_distribution(t, psi[h]),
                       encoder.relation_distribution(t, sigma[h]));
      acc = acc ? add(*acc, si) : si;
    }
    return *acc;
  }));
  TrainConfig tc;
  terms.emplace_back("total", [&, tc](Tape& t, const ParamStore&) {
    return build_batch_loss(t, encoder, batch, tc, blocks).total;
  });

  std::vector<LossTermCheck> out;
  for (auto& [name, build] : terms) out.push_back({name, finite_diff_check(build, encoder.params(), step)});
  return out;
}

}  // namespace ebd
