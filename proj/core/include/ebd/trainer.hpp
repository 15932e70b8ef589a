#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ebd/autograd.hpp"
#include "ebd/corpus.hpp"
#include "ebd/encoder.hpp"
#include "ebd/objectives.hpp"

namespace ebd {

// Which blocks receive the attention and sub-inference supervision.
enum class BlockStrategy { all, top1, top3, top6, bottom3, bottom6, alternating6 };

std::string_view block_strategy_name(BlockStrategy s);
std::optional<BlockStrategy> parse_block_strategy(std::string_view text);

struct BlockSelection {
  std::vector<std::size_t> blocks;  // 1-based, ascending
  std::optional<std::string> warning;
};

BlockSelection resolve_blocks(BlockStrategy strategy, std::size_t num_blocks);

struct LossSwitches {
  bool er = true;
  bool sa = true;
  bool si = true;
  bool operator==(const LossSwitches&) const = default;
};

struct TrainConfig {
  double alpha = 0.4;
  double beta = 0.8;
  BlockStrategy block_strategy = BlockStrategy::top3;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t steps = 0;   // 0: derive from epochs
  std::size_t epochs = 1;
  std::uint64_t seed = 13;
  LossSwitches switches;
  SaNorm sa_norm = SaNorm::absolute;
  double grad_clip = 1.0;  // global norm; 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::string checkpoint_path;
  std::string metrics_path;

  void validate() const;
  std::size_t total_steps(std::size_t dataset_size) const;
};

struct AdamState {
  std::size_t step = 0;
  Gradients m;
  Gradients v;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, std::string last_checkpoint);
  std::size_t step() const { return step_; }
  const std::string& last_checkpoint() const { return last_checkpoint_; }

 private:
  std::size_t step_;
  std::string last_checkpoint_;
};

// Full objective of a batch on a tape; the recorded scalar is the batch mean.
struct BatchGraph {
  Var total;
  LossBundle bundle;  // batch mean of the components
};

BatchGraph build_batch_loss(Tape& tape, const Encoder& encoder, std::span<const LabeledSequence> batch,
                            const TrainConfig& config, std::span<const std::size_t> supervised_blocks);

struct BatchResult {
  LossBundle bundle;
  Gradients grads;
};

class Trainer {
 public:
  Trainer(Encoder& encoder, TrainConfig config);

  const TrainConfig& config() const { return config_; }
  const std::vector<std::size_t>& supervised_blocks() const { return blocks_; }
  const std::optional<std::string>& block_warning() const { return block_warning_; }

  // Loss and gradients without touching parameters.
  BatchResult compute(std::span<const LabeledSequence> batch) const;
  // One optimizer update. Throws TrainingDiverged on a non-finite loss or gradient.
  LossBundle train_step(std::span<const LabeledSequence> batch);

  AdamState& optimizer() { return adam_; }
  const AdamState& optimizer() const { return adam_; }

 private:
  Encoder& encoder_;
  TrainConfig config_;
  std::vector<std::size_t> blocks_;
  std::optional<std::string> block_warning_;
  AdamState adam_;
};

// FNV-1a 64 digest (hex) of the settings a resumed run must share; the run
// length and output paths are excluded.
std::string config_hash(const TrainConfig& config, const EncoderConfig& encoder_config);

// ---- checkpoints -----------------------------------------------------------------

struct Checkpoint {
  EncoderConfig encoder_config;
  std::vector<std::string> vocab_words;  // ordinary words in id order
  ParamStore params;
  AdamState optimizer;
  std::size_t step = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::size_t> supervised_blocks;

  Encoder make_encoder() const;
  Vocabulary vocabulary() const;
};

inline constexpr std::string_view kCheckpointFormat = "ebdreg-checkpoint";
inline constexpr int kCheckpointMajor = 1;
inline constexpr int kCheckpointMinor = 0;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- training loop -----------------------------------------------------------------

struct MetricsRow {
  std::size_t step = 0;
  double l_main = 0.0;
  double l_er = 0.0;
  double l_sa_sum = 0.0;
  double l_si_sum = 0.0;
  double total = 0.0;
};

std::string metrics_json_line(const MetricsRow& row);

struct TrainOutputs {
  std::vector<MetricsRow> metrics;
  Checkpoint checkpoint;
};

// Batch order for a step: epoch permutations are derived from (seed, epoch).
std::vector<std::size_t> batch_indices(std::size_t step, std::size_t dataset_size, std::size_t batch_size,
                                       std::uint64_t seed);

// Runs steps [start, total_steps). Starts from a fresh encoder seeded with
// config.seed, or from `resume` when given.
TrainOutputs train(std::span<const LabeledSequence> dataset, const Vocabulary& vocab, const EncoderConfig& encoder_config,
                   const TrainConfig& config, const Checkpoint* resume = nullptr);

}  // namespace ebd
