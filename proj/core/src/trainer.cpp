#include "ebd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>

namespace ebd {

// ---- block selection --------------------------------------------------------------

std::string_view block_strategy_name(BlockStrategy s) {
  switch (s) {
    case BlockStrategy::all: return "all";
    case BlockStrategy::top1: return "top-1";
    case BlockStrategy::top3: return "top-3";
    case BlockStrategy::top6: return "top-6";
    case BlockStrategy::bottom3: return "bottom-3";
    case BlockStrategy::bottom6: return "bottom-6";
    case BlockStrategy::alternating6: return "alternating-6";
  }
  return "unknown";
}

std::optional<BlockStrategy> parse_block_strategy(std::string_view text) {
  for (BlockStrategy s : {BlockStrategy::all, BlockStrategy::top1, BlockStrategy::top3, BlockStrategy::top6,
                          BlockStrategy::bottom3, BlockStrategy::bottom6, BlockStrategy::alternating6}) {
    if (block_strategy_name(s) == text) return s;
  }
  return std::nullopt;
}

BlockSelection resolve_blocks(BlockStrategy strategy, std::size_t num_blocks) {
  if (num_blocks == 0) throw std::invalid_argument("resolve_blocks: num_blocks must be at least 1");
  BlockSelection sel;
  auto clip = [&](std::size_t wanted) {
    if (wanted > num_blocks) {
      sel.warning = std::string(block_strategy_name(strategy)) + " asks for " + std::to_string(wanted) +
                    " blocks but the encoder has " + std::to_string(num_blocks) + "; clipped";
      return num_blocks;
    }
    return wanted;
  };
  auto top = [&](std::size_t k) {
    const std::size_t n = clip(k);
    for (std::size_t b = num_blocks - n + 1; b <= num_blocks; ++b) sel.blocks.push_back(b);
  };
  auto bottom = [&](std::size_t k) {
    const std::size_t n = clip(k);
    for (std::size_t b = 1; b <= n; ++b) sel.blocks.push_back(b);
  };
  switch (strategy) {
    case BlockStrategy::all: bottom(num_blocks); break;
    case BlockStrategy::top1: top(1); break;
    case BlockStrategy::top3: top(3); break;
    case BlockStrategy::top6: top(6); break;
    case BlockStrategy::bottom3: bottom(3); break;
    case BlockStrategy::bottom6: bottom(6); break;
    case BlockStrategy::alternating6: {
      const std::size_t available = (num_blocks + 1) / 2;
      const std::size_t n = std::min<std::size_t>(6, available);
      if (n < 6) {
        sel.warning = "alternating-6 yields only " + std::to_string(n) + " blocks on a " + std::to_string(num_blocks) +
                      "-block encoder; clipped";
      }
      for (std::size_t i = 0; i < n; ++i) sel.blocks.push_back(num_blocks - 2 * i);
      std::sort(sel.blocks.begin(), sel.blocks.end());
      break;
    }
  }
  return sel;
}

// ---- configuration -----------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(alpha >= 0) || !(beta >= 0)) throw std::invalid_argument("train: alpha and beta must be non-negative");
  if (!(learning_rate > 0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (grad_clip < 0) throw std::invalid_argument("train: grad_clip must be non-negative");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) || !(adam_eps > 0)) {
    throw std::invalid_argument("train: invalid optimizer moments");
  }
}

std::size_t TrainConfig::total_steps(std::size_t dataset_size) const {
  if (steps > 0) return steps;
  const std::size_t per_epoch = (dataset_size + batch_size - 1) / batch_size;
  return per_epoch * epochs;
}

std::string config_hash(const TrainConfig& c, const EncoderConfig& e) {
  std::ostringstream os;
  os << std::setprecision(17) << "alpha=" << c.alpha << ";beta=" << c.beta << ";blocks=" << block_strategy_name(c.block_strategy)
     << ";lr=" << c.learning_rate << ";batch=" << c.batch_size
     << ";seed=" << c.seed << ";er=" << c.switches.er << ";sa=" << c.switches.sa << ";si=" << c.switches.si
     << ";sa_norm=" << (c.sa_norm == SaNorm::absolute ? "abs" : "sq") << ";clip=" << c.grad_clip
     << ";b1=" << c.adam_beta1 << ";b2=" << c.adam_beta2 << ";eps=" << c.adam_eps << ";vocab=" << e.vocab_size
     << ";nb=" << e.num_blocks << ";nh=" << e.num_heads << ";d=" << e.d_model << ";ff=" << e.d_ff
     << ";len=" << e.max_len << ";ata=" << e.ata_dim << ";init=" << e.init_std << ";ln=" << e.ln_eps;
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : os.str()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << h;
  return hex.str();
}

TrainingDiverged::TrainingDiverged(std::size_t step, std::string last_checkpoint)
    : std::runtime_error("non-finite loss at step " + std::to_string(step) + "; last good checkpoint: " +
                         (last_checkpoint.empty() ? std::string("<none>") : last_checkpoint)),
      step_(step),
      last_checkpoint_(std::move(last_checkpoint)) {}

// ---- objective graph -----------------------------------------------------------------

BatchGraph build_batch_loss(Tape& tape, const Encoder& encoder, std::span<const LabeledSequence> batch,
                            const TrainConfig& config, std::span<const std::size_t> supervised_blocks) {
  if (batch.empty()) throw std::invalid_argument("build_batch_loss: empty batch");
  if (config.beta > 0 && supervised_blocks.empty()) {
    throw std::invalid_argument("build_batch_loss: beta > 0 requires supervised blocks");
  }
  const std::size_t depth = encoder.config().num_blocks;
  const bool use_er = config.switches.er && config.alpha > 0;
  const bool use_sa = config.switches.sa && config.beta > 0;
  const bool use_si = config.switches.si && config.beta > 0;
  const std::size_t sub_depth = supervised_blocks.empty() ? 0 : supervised_blocks.back();
  const double aux_weight =
      supervised_blocks.empty() ? 0.0 : config.beta / static_cast<double>(supervised_blocks.size());

  std::vector<LossBundle> bundles;
  bundles.reserve(batch.size());
  std::optional<Var> batch_total;
  for (const LabeledSequence& ex : batch) {
    if (ex.labels.size() != ex.tokens.size() || ex.targets.size() != ex.tokens.size()) {
      throw std::invalid_argument("build_batch_loss: example is not fully labeled");
    }
    auto reps = encoder.forward(tape, ex.tokens, depth);
    Var final_weights = encoder.ata(tape, reps.back()).normalized;
    Var main_logits = encoder.relation_logits(tape, reps.back(), final_weights);
    Var total = loss_main_from_logits(main_logits, ex.gold);
    std::map<std::size_t, double> l_sa, l_si;
    double l_er = 0.0;

    if (use_er) {
      Var er = loss_er_from_logits(encoder.token_logits(tape, reps.back()), ex.labels);
      l_er = er.value().item();
      total = add(total, scale(er, config.alpha));
    }
    if (use_sa || use_si) {
      std::optional<Var> aux;
      auto accumulate = [&](Var term) { aux = aux ? add(*aux, term) : term; };
      std::vector<Var> psi_reps, sigma_reps;
      if (use_si) {
        psi_reps = encoder.forward(tape, ex.psi_tokens, sub_depth);
        sigma_reps = encoder.forward(tape, ex.sigma_tokens, sub_depth);
      }
      for (std::size_t h : supervised_blocks) {
        Var reps_h = reps[h - 1];
        if (use_sa) {
          Var sa = loss_sa(Encoder::cls_attention(reps_h), ex.targets, config.sa_norm);
          l_sa[h] = sa.value().item();
          accumulate(sa);
        }
        if (use_si) {
          Var main_h = h == depth ? softmax(main_logits) : encoder.relation_distribution(tape, reps_h);
          Var si = loss_si(main_h, encoder.relation_distribution(tape, psi_reps[h - 1]),
                           encoder.relation_distribution(tape, sigma_reps[h - 1]));
          l_si[h] = si.value().item();
          accumulate(si);
        }
      }
      if (aux) total = add(total, scale(*aux, aux_weight));
    }
    const double l_main = loss_main_from_logits(main_logits, ex.gold).value().item();
    bundles.push_back(total_loss(l_main, l_er, l_sa, l_si, config.alpha, config.beta, supervised_blocks));
    batch_total = batch_total ? add(*batch_total, total) : total;
  }
  BatchGraph out{scale(*batch_total, 1.0 / static_cast<double>(batch.size())), mean_bundle(bundles)};
  return out;
}

// ---- trainer ------------------------------------------------------------------------

Trainer::Trainer(Encoder& encoder, TrainConfig config) : encoder_(encoder), config_(std::move(config)) {
  config_.validate();
  BlockSelection sel = resolve_blocks(config_.block_strategy, encoder_.config().num_blocks);
  blocks_ = std::move(sel.blocks);
  block_warning_ = std::move(sel.warning);
  adam_.m = Gradients::zeros_like(encoder_.params());
  adam_.v = Gradients::zeros_like(encoder_.params());
}

BatchResult Trainer::compute(std::span<const LabeledSequence> batch) const {
  Tape tape;
  BatchGraph graph = build_batch_loss(tape, encoder_, batch, config_, blocks_);
  Gradients grads = tape.backward(graph.total, encoder_.params());
  return {graph.bundle, std::move(grads)};
}

LossBundle Trainer::train_step(std::span<const LabeledSequence> batch) {
  // A poisoned parameter would otherwise surface as a bad-input error from the forward pass.
  if (!encoder_.params().all_finite()) throw TrainingDiverged(adam_.step, "");
  BatchResult r = compute(batch);
  if (!std::isfinite(r.bundle.total) || !r.grads.all_finite()) throw TrainingDiverged(adam_.step, "");

  if (config_.grad_clip > 0) {
    const double norm = r.grads.global_norm();
    if (norm > config_.grad_clip) r.grads.scale(config_.grad_clip / norm);
  }
  ++adam_.step;
  const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_.step));
  ParamStore& params = encoder_.params();
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& w = params[p].value.data;
    auto& m = adam_.m.per_param[p].data;
    auto& v = adam_.v.per_param[p].data;
    const auto& g = r.grads.per_param[p].data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= config_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_eps);
    }
  }
  return r.bundle;
}

// ---- checkpoints ------------------------------------------------------------------

Encoder Checkpoint::make_encoder() const {
  ParamStore copy;
  for (const auto& p : params.all()) copy.add(p.name, p.value);
  return Encoder(encoder_config, std::move(copy));
}

Vocabulary Checkpoint::vocabulary() const { return Vocabulary::from_words(vocab_words); }

namespace {

nlohmann::json tensor_json(const Tensor& t) { return {{"shape", t.shape}, {"data", t.data}}; }

Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<std::vector<std::size_t>>(), j.at("data").get<std::vector<double>>());
}

nlohmann::json grads_json(const Gradients& g, const ParamStore& params) {
  nlohmann::json out = nlohmann::json::object();
  for (std::size_t i = 0; i < g.per_param.size(); ++i) out[params[i].name] = tensor_json(g.per_param[i]);
  return out;
}

Gradients grads_from_json(const nlohmann::json& j, const ParamStore& params) {
  Gradients g = Gradients::zeros_like(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    g.per_param[i] = tensor_from_json(j.at(params[i].name));
    if (g.per_param[i].shape != params[i].value.shape) {
      throw std::runtime_error("checkpoint: optimizer moment shape mismatch for " + params[i].name);
    }
  }
  return g;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["version"] = std::to_string(kCheckpointMajor) + "." + std::to_string(kCheckpointMinor);
  const EncoderConfig& e = ck.encoder_config;
  j["encoder"] = {{"vocab_size", e.vocab_size}, {"num_blocks", e.num_blocks}, {"num_heads", e.num_heads},
                  {"d_model", e.d_model},       {"d_ff", e.d_ff},             {"max_len", e.max_len},
                  {"ata_dim", e.ata_dim},       {"init_std", e.init_std},     {"ln_eps", e.ln_eps}};
  j["vocab"] = ck.vocab_words;
  j["step"] = ck.step;
  j["config_hash"] = ck.config_hash;
  j["seed"] = ck.seed;
  j["supervised_blocks"] = ck.supervised_blocks;
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (const auto& p : ck.params.all()) params.push_back({{"name", p.name}, {"shape", p.value.shape}, {"data", p.value.data}});
  j["params"] = std::move(params);
  j["optimizer"] = {{"step", ck.optimizer.step},
                    {"m", grads_json(ck.optimizer.m, ck.params)},
                    {"v", grads_json(ck.optimizer.v, ck.params)}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << j.dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw std::runtime_error("not an ebdreg checkpoint");
    const std::string version = j.at("version").get<std::string>();
    if (std::stoi(version.substr(0, version.find('.'))) != kCheckpointMajor) {
      throw std::runtime_error("unsupported checkpoint version " + version);
    }
    Checkpoint ck;
    const auto& e = j.at("encoder");
    ck.encoder_config.vocab_size = e.at("vocab_size");
    ck.encoder_config.num_blocks = e.at("num_blocks");
    ck.encoder_config.num_heads = e.at("num_heads");
    ck.encoder_config.d_model = e.at("d_model");
    ck.encoder_config.d_ff = e.at("d_ff");
    ck.encoder_config.max_len = e.at("max_len");
    ck.encoder_config.ata_dim = e.at("ata_dim");
    ck.encoder_config.init_std = e.at("init_std");
    ck.encoder_config.ln_eps = e.at("ln_eps");
    ck.vocab_words = j.at("vocab").get<std::vector<std::string>>();
    ck.step = j.at("step");
    ck.config_hash = j.at("config_hash");
    ck.seed = j.at("seed");
    ck.supervised_blocks = j.at("supervised_blocks").get<std::vector<std::size_t>>();
    for (const auto& p : j.at("params")) {
      ck.params.add(p.at("name").get<std::string>(),
                    Tensor(p.at("shape").get<std::vector<std::size_t>>(), p.at("data").get<std::vector<double>>()));
    }
    const auto& opt = j.at("optimizer");
    ck.optimizer.step = opt.at("step");
    ck.optimizer.m = grads_from_json(opt.at("m"), ck.params);
    ck.optimizer.v = grads_from_json(opt.at("v"), ck.params);
    if (ck.vocab_words.size() + Vocabulary::num_specials != ck.encoder_config.vocab_size) {
      throw std::runtime_error("vocabulary size does not match encoder");
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint " + path.string() + " is malformed: " + e.what());
  }
}

// ---- loop -----------------------------------------------------------------------------

std::string metrics_json_line(const MetricsRow& row) {
  nlohmann::ordered_json j;
  j["step"] = row.step;
  j["l_main"] = row.l_main;
  j["l_er"] = row.l_er;
  j["l_sa_sum"] = row.l_sa_sum;
  j["l_si_sum"] = row.l_si_sum;
  j["total"] = row.total;
  return j.dump();
}

std::vector<std::size_t> batch_indices(std::size_t step, std::size_t dataset_size, std::size_t batch_size,
                                       std::uint64_t seed) {
  if (dataset_size == 0 || batch_size == 0) throw std::invalid_argument("batch_indices: empty dataset or batch");
  const std::size_t per_epoch = (dataset_size + batch_size - 1) / batch_size;
  const std::size_t epoch = step / per_epoch;
  const std::size_t slot = step % per_epoch;
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (epoch + 1)));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t begin = slot * batch_size;
  const std::size_t end = std::min(dataset_size, begin + batch_size);
  return std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                  order.begin() + static_cast<std::ptrdiff_t>(end));
}

TrainOutputs train(std::span<const LabeledSequence> dataset, const Vocabulary& vocab, const EncoderConfig& encoder_config,
                   const TrainConfig& config, const Checkpoint* resume) {
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  config.validate();
  EncoderConfig ecfg = encoder_config;
  ecfg.vocab_size = vocab.size();

  Encoder encoder = resume ? resume->make_encoder() : Encoder(ecfg, config.seed);
  if (resume && !(resume->encoder_config == ecfg)) throw std::invalid_argument("train: checkpoint encoder does not match configuration");
  Trainer trainer(encoder, config);
  if (trainer.block_warning()) std::clog << "warning: " << *trainer.block_warning() << '\n';
  if (resume) trainer.optimizer() = resume->optimizer;

  const std::size_t start = resume ? resume->step : 0;
  const std::size_t total = config.total_steps(dataset.size());
  const std::string hash = config_hash(config, ecfg);

  auto snapshot = [&](std::size_t step) {
    Checkpoint ck;
    ck.encoder_config = ecfg;
    ck.vocab_words.assign(vocab.ordinary_words().begin(), vocab.ordinary_words().end());
    for (const auto& p : encoder.params().all()) ck.params.add(p.name, p.value);
    ck.optimizer = trainer.optimizer();
    ck.step = step;
    ck.config_hash = hash;
    ck.seed = config.seed;
    ck.supervised_blocks = trainer.supervised_blocks();
    return ck;
  };

  std::optional<std::ofstream> metrics_out;
  if (!config.metrics_path.empty()) {
    const std::filesystem::path mp(config.metrics_path);
    if (mp.has_parent_path()) std::filesystem::create_directories(mp.parent_path());
    metrics_out.emplace(mp, resume ? std::ios::app : std::ios::trunc);
    if (!*metrics_out) throw std::runtime_error("cannot write metrics log " + config.metrics_path);
  }

  TrainOutputs out;
  std::string last_good;
  std::vector<LabeledSequence> batch;
  for (std::size_t step = start; step < total; ++step) {
    batch.clear();
    for (std::size_t i : batch_indices(step, dataset.size(), config.batch_size, config.seed)) batch.push_back(dataset[i]);
    LossBundle bundle;
    try {
      bundle = trainer.train_step(batch);
    } catch (const TrainingDiverged&) {
      throw TrainingDiverged(step, last_good);
    }
    MetricsRow row{step, bundle.l_main, bundle.l_er, bundle.l_sa_sum(), bundle.l_si_sum(), bundle.total};
    if (metrics_out) *metrics_out << metrics_json_line(row) << '\n';
    out.metrics.push_back(row);
    if (config.checkpoint_interval > 0 && !config.checkpoint_path.empty() && (step + 1) % config.checkpoint_interval == 0 &&
        step + 1 < total) {
      save_checkpoint(config.checkpoint_path, snapshot(step + 1));
      last_good = config.checkpoint_path;
    }
  }
  out.checkpoint = snapshot(std::max(start, total));
  if (!config.checkpoint_path.empty()) save_checkpoint(config.checkpoint_path, out.checkpoint);
  return out;
}

}  // namespace ebd
