#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ebd/autograd.hpp"
#include "ebd/corpus.hpp"
#include "ebd/tensor.hpp"

namespace ebd {

using Distribution = std::array<double, kNumRelations>;

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t num_blocks = 4;
  std::size_t num_heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t max_len = 64;
  std::size_t ata_dim = 32;
  double init_std = 0.1;
  double ln_eps = 1e-12;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// ATA pooling weights: raw sigmoid scores and their normalization.
struct AtaGraph {
  Var raw;
  Var normalized;
};

// Value snapshot of one forward pass. Block vectors are indexed by block - 1.
struct BlockOutputs {
  std::vector<Tensor> block_reps;                 // (l, d) per block
  std::vector<std::vector<double>> ata_raw;       // lambda per block
  std::vector<std::vector<double>> ata_normalized;
  std::vector<std::vector<double>> cls_attention;  // attn^h per block
  std::vector<Distribution> block_distribution;   // relation distribution per block
  Distribution main_distribution{};               // final block; the evaluation path
  std::vector<std::array<double, kNumTokenLabels>> token_probs;  // final block, per position

  const Tensor& final_reps() const { return block_reps.back(); }
};

// Post-layer-norm transformer encoder with ATA pooling, a relation head and a
// token-label head. Blocks are numbered from 1 (bottom) to num_blocks (top).
class Encoder {
 public:
  Encoder(EncoderConfig config, std::uint64_t seed);
  // Adopts existing parameters; names and shapes must match the configuration.
  Encoder(EncoderConfig config, ParamStore params);

  const EncoderConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // ---- graph building ----
  // Representations after blocks 1..depth.
  std::vector<Var> forward(Tape& tape, std::span<const TokenId> tokens, std::size_t depth) const;
  AtaGraph ata(Tape& tape, Var reps) const;
  // W_y * ((1/l) sum_i weights_i v_i) + b_y
  Var relation_logits(Tape& tape, Var reps, Var weights) const;
  // softmax(relation_logits(reps, ata(reps).normalized))
  Var relation_distribution(Tape& tape, Var reps) const;
  // Per-position logits over the three token labels.
  Var token_logits(Tape& tape, Var reps) const;
  // softmax over positions of v_1 . v_i / sqrt(l).
  static Var cls_attention(Var reps);

  // ---- value API ----
  BlockOutputs encode(std::span<const TokenId> tokens) const;
  Distribution predict(std::span<const TokenId> tokens) const;
  // Relation distribution from block h's representations of a (masked) sequence.
  Distribution sub_distribution(std::size_t block, std::span<const TokenId> tokens) const;

  std::vector<double> ata_weights(const Tensor& reps, std::vector<double>* raw = nullptr) const;
  Distribution classify_main(const Tensor& reps, std::span<const double> weights) const;
  std::vector<std::array<double, kNumTokenLabels>> classify_tokens(const Tensor& reps) const;
  static std::vector<double> cls_attention(const Tensor& reps);

 private:
  void init_params(std::uint64_t seed);
  void check_tokens(std::span<const TokenId> tokens) const;
  Var param(Tape& tape, const char* name) const;
  Var param(Tape& tape, const std::string& name) const;
  Var linear(Tape& tape, Var x, const std::string& prefix) const;
  Var block(Tape& tape, Var x, std::size_t index) const;

  EncoderConfig config_;
  ParamStore params_;
};

}  // namespace ebd
