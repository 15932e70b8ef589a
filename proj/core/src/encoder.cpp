#include "ebd/encoder.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace ebd {

namespace {

std::string block_name(std::size_t index, const char* suffix) {
  return "blocks." + std::to_string(index) + "." + suffix;
}

template <std::size_t N>
std::array<double, N> to_array(const Tensor& t, std::size_t offset = 0) {
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = t.data[offset + i];
  return out;
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size <= Vocabulary::num_specials) throw std::invalid_argument("encoder: vocab_size must exceed the special ids");
  if (num_blocks == 0) throw std::invalid_argument("encoder: num_blocks must be at least 1");
  if (num_heads == 0 || d_model == 0 || d_model % num_heads != 0) {
    throw std::invalid_argument("encoder: d_model must be a positive multiple of num_heads");
  }
  if (d_ff == 0 || ata_dim == 0 || max_len == 0) throw std::invalid_argument("encoder: d_ff, ata_dim and max_len must be positive");
  if (!(init_std > 0) || !(ln_eps > 0)) throw std::invalid_argument("encoder: init_std and ln_eps must be positive");
}

Encoder::Encoder(EncoderConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  init_params(seed);
}

Encoder::Encoder(EncoderConfig config, ParamStore params) : config_(config) {
  config_.validate();
  init_params(0);
  if (params.size() != params_.size()) throw std::invalid_argument("encoder: parameter count does not match configuration");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto found = params.find(params_[i].name);
    if (!found) throw std::invalid_argument("encoder: missing parameter '" + params_[i].name + "'");
    const Tensor& src = params[*found].value;
    if (src.shape != params_[i].value.shape) {
      throw std::invalid_argument("encoder: parameter '" + params_[i].name + "' has shape " + shape_string(src.shape) +
                                  ", expected " + shape_string(params_[i].value.shape));
    }
    params_[i].value.data = src.data;
  }
}

void Encoder::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, config_.init_std);
  const std::size_t d = config_.d_model;
  auto weight = [&](std::string name, std::size_t rows, std::size_t cols) {
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data) v = normal(rng);
    params_.add(std::move(name), std::move(t));
  };
  auto vec = [&](std::string name, std::size_t n, double value) {
    params_.add(std::move(name), Tensor({n}, std::vector<double>(n, value)));
  };
  auto linear = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    weight(prefix + ".w", in, out);
    vec(prefix + ".b", out, 0.0);
  };

  weight("embed.token", config_.vocab_size, d);
  weight("embed.position", config_.max_len, d);
  vec("embed.ln.gamma", d, 1.0);
  vec("embed.ln.beta", d, 0.0);
  for (std::size_t b = 0; b < config_.num_blocks; ++b) {
    linear(block_name(b, "attn.query"), d, d);
    linear(block_name(b, "attn.key"), d, d);
    linear(block_name(b, "attn.value"), d, d);
    linear(block_name(b, "attn.output"), d, d);
    vec(block_name(b, "ln1.gamma"), d, 1.0);
    vec(block_name(b, "ln1.beta"), d, 0.0);
    linear(block_name(b, "ffn.in"), d, config_.d_ff);
    linear(block_name(b, "ffn.out"), config_.d_ff, d);
    vec(block_name(b, "ln2.gamma"), d, 1.0);
    vec(block_name(b, "ln2.beta"), d, 0.0);
  }
  linear("ata.w1", d, config_.ata_dim);
  linear("ata.w2", config_.ata_dim, 1);
  linear("head.relation", d, kNumRelations);
  linear("head.token", d, kNumTokenLabels);
}

void Encoder::check_tokens(std::span<const TokenId> tokens) const {
  if (tokens.empty() || tokens.size() > config_.max_len) {
    throw std::invalid_argument("encoder: sequence length " + std::to_string(tokens.size()) + " outside [1, " +
                                std::to_string(config_.max_len) + "]");
  }
  for (TokenId id : tokens) {
    if (id >= config_.vocab_size) {
      throw std::out_of_range("encoder: token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(config_.vocab_size));
    }
  }
}

Var Encoder::param(Tape& tape, const std::string& name) const { return tape.parameter(params_, name); }
Var Encoder::param(Tape& tape, const char* name) const { return tape.parameter(params_, std::string_view(name)); }

Var Encoder::linear(Tape& tape, Var x, const std::string& prefix) const {
  return add_bias(matmul(x, param(tape, prefix + ".w")), param(tape, prefix + ".b"));
}

Var Encoder::block(Tape& tape, Var x, std::size_t index) const {
  const std::size_t heads = config_.num_heads;
  const std::size_t dh = config_.d_model / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Var q = linear(tape, x, block_name(index, "attn.query"));
  Var k = linear(tape, x, block_name(index, "attn.key"));
  Var v = linear(tape, x, block_name(index, "attn.value"));
  std::vector<Var> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Var weights = softmax(scale(matmul_nt(qh, kh), inv_sqrt_dh));
    head_out.push_back(matmul(weights, vh));
  }
  Var attn = linear(tape, heads == 1 ? head_out[0] : concat_cols(head_out), block_name(index, "attn.output"));
  Var h1 = layer_norm(add(x, attn), param(tape, block_name(index, "ln1.gamma")),
                      param(tape, block_name(index, "ln1.beta")), config_.ln_eps);
  Var ff = linear(tape, gelu(linear(tape, h1, block_name(index, "ffn.in"))), block_name(index, "ffn.out"));
  return layer_norm(add(h1, ff), param(tape, block_name(index, "ln2.gamma")), param(tape, block_name(index, "ln2.beta")),
                    config_.ln_eps);
}

std::vector<Var> Encoder::forward(Tape& tape, std::span<const TokenId> tokens, std::size_t depth) const {
  check_tokens(tokens);
  if (depth == 0 || depth > config_.num_blocks) throw std::invalid_argument("encoder: depth outside [1, num_blocks]");
  std::vector<std::size_t> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  Var x = add(embedding(param(tape, "embed.token"), tokens), embedding(param(tape, "embed.position"), positions));
  x = layer_norm(x, param(tape, "embed.ln.gamma"), param(tape, "embed.ln.beta"), config_.ln_eps);
  std::vector<Var> reps;
  reps.reserve(depth);
  for (std::size_t b = 0; b < depth; ++b) {
    x = block(tape, x, b);
    reps.push_back(x);
  }
  return reps;
}

AtaGraph Encoder::ata(Tape& tape, Var reps) const {
  Var hidden = tanh(linear(tape, reps, "ata.w1"));
  Var scores = linear(tape, hidden, "ata.w2");
  Var raw = sigmoid(reshape(scores, {reps.value().rows()}));
  return {raw, normalize_sum(raw)};
}

Var Encoder::relation_logits(Tape& tape, Var reps, Var weights) const {
  const double inv_len = 1.0 / static_cast<double>(reps.value().rows());
  Var pooled = scale(sum_rows(scale_rows(reps, weights)), inv_len);
  return add(matmul(pooled, param(tape, "head.relation.w")), param(tape, "head.relation.b"));
}

Var Encoder::relation_distribution(Tape& tape, Var reps) const {
  return softmax(relation_logits(tape, reps, ata(tape, reps).normalized));
}

Var Encoder::token_logits(Tape& tape, Var reps) const { return linear(tape, reps, "head.token"); }

Var Encoder::cls_attention(Var reps) {
  const double len = static_cast<double>(reps.value().rows());
  return softmax(matmul_nt(row(reps, 0), reps), std::sqrt(len));
}

// ---- value API ----------------------------------------------------------------

BlockOutputs Encoder::encode(std::span<const TokenId> tokens) const {
  Tape tape(false);
  auto reps = forward(tape, tokens, config_.num_blocks);
  BlockOutputs out;
  for (Var r : reps) {
    out.block_reps.push_back(r.value());
    AtaGraph w = ata(tape, r);
    out.ata_raw.push_back(w.raw.value().data);
    out.ata_normalized.push_back(w.normalized.value().data);
    out.cls_attention.push_back(cls_attention(r).value().data);
    out.block_distribution.push_back(to_array<kNumRelations>(softmax(relation_logits(tape, r, w.normalized)).value()));
  }
  out.main_distribution = out.block_distribution.back();
  Tensor probs = softmax(token_logits(tape, reps.back())).value();
  for (std::size_t i = 0; i < probs.rows(); ++i) out.token_probs.push_back(to_array<kNumTokenLabels>(probs, i * kNumTokenLabels));
  return out;
}

Distribution Encoder::predict(std::span<const TokenId> tokens) const {
  Tape tape(false);
  auto reps = forward(tape, tokens, config_.num_blocks);
  return to_array<kNumRelations>(relation_distribution(tape, reps.back()).value());
}

Distribution Encoder::sub_distribution(std::size_t block, std::span<const TokenId> tokens) const {
  if (block == 0 || block > config_.num_blocks) {
    throw std::out_of_range("sub_distribution: block " + std::to_string(block) + " outside [1, " +
                            std::to_string(config_.num_blocks) + "]");
  }
  Tape tape(false);
  auto reps = forward(tape, tokens, block);
  return to_array<kNumRelations>(relation_distribution(tape, reps.back()).value());
}

std::vector<double> Encoder::ata_weights(const Tensor& reps, std::vector<double>* raw) const {
  Tape tape(false);
  AtaGraph w = ata(tape, tape.constant(reps));
  if (raw != nullptr) *raw = w.raw.value().data;
  return w.normalized.value().data;
}

Distribution Encoder::classify_main(const Tensor& reps, std::span<const double> weights) const {
  if (weights.size() != reps.rows()) throw std::invalid_argument("classify_main: one weight per position required");
  Tape tape(false);
  Var logits = relation_logits(tape, tape.constant(reps), tape.constant(Tensor::vector(weights)));
  return to_array<kNumRelations>(softmax(logits).value());
}

std::vector<std::array<double, kNumTokenLabels>> Encoder::classify_tokens(const Tensor& reps) const {
  Tape tape(false);
  Tensor probs = softmax(token_logits(tape, tape.constant(reps))).value();
  std::vector<std::array<double, kNumTokenLabels>> out;
  for (std::size_t i = 0; i < probs.rows(); ++i) out.push_back(to_array<kNumTokenLabels>(probs, i * kNumTokenLabels));
  return out;
}

std::vector<double> Encoder::cls_attention(const Tensor& reps) {
  if (reps.rank() != 2 || reps.rows() == 0) throw std::invalid_argument("cls_attention: non-empty (l, d) matrix required");
  Tape tape(false);
  return cls_attention(tape.constant(reps)).value().data;
}

}  // namespace ebd
