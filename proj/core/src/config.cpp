#include "ebd/config.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace ebd {

namespace {

using json = nlohmann::json;

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where.empty() ? "config must be a JSON object" : where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, const std::string& where, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_unsigned()) throw ConfigError("");
    }
    out = it->get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
  }
}

}  // namespace

LoadOptions DataConfig::load_options() const {
  LoadOptions o;
  o.on_malformed = skip_malformed ? OnMalformed::skip : OnMalformed::fatal;
  return o;
}

LabelOptions DataConfig::label_options() const {
  LabelOptions o;
  o.stopwords.insert(stopwords.begin(), stopwords.end());
  return o;
}

ExperimentConfig parse_config(const json& j) {
  check_keys(j, "", {"seed", "data", "model", "train", "eval", "synthetic"});
  ExperimentConfig c;
  read(j, "seed", "", c.seed);

  if (auto it = j.find("data"); it != j.end()) {
    check_keys(*it, "data", {"train", "dev", "test", "skip_malformed", "min_count", "stopwords"});
    read(*it, "train", "data", c.data.train);
    read(*it, "dev", "data", c.data.dev);
    read(*it, "test", "data", c.data.test);
    read(*it, "skip_malformed", "data", c.data.skip_malformed);
    read(*it, "min_count", "data", c.data.min_count);
    read(*it, "stopwords", "data", c.data.stopwords);
  }

  if (auto it = j.find("model"); it != j.end()) {
    check_keys(*it, "model", {"num_blocks", "num_heads", "d_model", "d_ff", "max_len", "ata_dim", "init_std", "ln_eps"});
    read(*it, "num_blocks", "model", c.model.num_blocks);
    read(*it, "num_heads", "model", c.model.num_heads);
    read(*it, "d_model", "model", c.model.d_model);
    read(*it, "d_ff", "model", c.model.d_ff);
    read(*it, "max_len", "model", c.model.max_len);
    read(*it, "ata_dim", "model", c.model.ata_dim);
    read(*it, "init_std", "model", c.model.init_std);
    read(*it, "ln_eps", "model", c.model.ln_eps);
  }

  if (auto it = j.find("train"); it != j.end()) {
    check_keys(*it, "train",
               {"alpha", "beta", "block_strategy", "learning_rate", "batch_size", "steps", "epochs", "loss_er", "loss_sa",
                "loss_si", "sa_norm", "grad_clip", "adam_beta1", "adam_beta2", "adam_eps", "checkpoint_interval",
                "checkpoint_path", "metrics_path"});
    TrainConfig& t = c.train;
    read(*it, "alpha", "train", t.alpha);
    read(*it, "beta", "train", t.beta);
    std::string strategy(block_strategy_name(t.block_strategy));
    read(*it, "block_strategy", "train", strategy);
    auto parsed = parse_block_strategy(strategy);
    if (!parsed) throw ConfigError("train.block_strategy: unknown strategy '" + strategy + "'");
    t.block_strategy = *parsed;
    read(*it, "learning_rate", "train", t.learning_rate);
    read(*it, "batch_size", "train", t.batch_size);
    read(*it, "steps", "train", t.steps);
    read(*it, "epochs", "train", t.epochs);
    read(*it, "loss_er", "train", t.switches.er);
    read(*it, "loss_sa", "train", t.switches.sa);
    read(*it, "loss_si", "train", t.switches.si);
    std::string norm = t.sa_norm == SaNorm::absolute ? "l1" : "l2";
    read(*it, "sa_norm", "train", norm);
    if (norm == "l1") t.sa_norm = SaNorm::absolute;
    else if (norm == "l2") t.sa_norm = SaNorm::squared;
    else throw ConfigError("train.sa_norm must be \"l1\" or \"l2\"");
    read(*it, "grad_clip", "train", t.grad_clip);
    read(*it, "adam_beta1", "train", t.adam_beta1);
    read(*it, "adam_beta2", "train", t.adam_beta2);
    read(*it, "adam_eps", "train", t.adam_eps);
    read(*it, "checkpoint_interval", "train", t.checkpoint_interval);
    read(*it, "checkpoint_path", "train", t.checkpoint_path);
    read(*it, "metrics_path", "train", t.metrics_path);
  }
  c.train.seed = c.seed;
  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  if (auto it = j.find("eval"); it != j.end()) {
    check_keys(*it, "eval", {"checkpoint", "dataset", "lexicon", "category", "rounds", "blocks"});
    read(*it, "checkpoint", "eval", c.eval.checkpoint);
    read(*it, "dataset", "eval", c.eval.dataset);
    read(*it, "lexicon", "eval", c.eval.lexicon);
    read(*it, "category", "eval", c.eval.category);
    read(*it, "rounds", "eval", c.eval.rounds);
    read(*it, "blocks", "eval", c.eval.blocks);
    if (!parse_swap_category(c.eval.category)) throw ConfigError("eval.category: unknown category '" + c.eval.category + "'");
  }

  if (auto it = j.find("synthetic"); it != j.end()) {
    check_keys(*it, "synthetic",
               {"activity_groups", "subjects", "locations", "premise_templates", "hypothesis_templates", "spurious_token",
                "spurious_label", "rho_train", "rho_ood", "train_size", "dev_size", "ood_size"});
    SyntheticSpec& s = c.synthetic;
    read(*it, "activity_groups", "synthetic", s.activity_groups);
    read(*it, "subjects", "synthetic", s.subjects);
    read(*it, "locations", "synthetic", s.locations);
    read(*it, "premise_templates", "synthetic", s.premise_templates);
    read(*it, "hypothesis_templates", "synthetic", s.hypothesis_templates);
    read(*it, "spurious_token", "synthetic", s.spurious_token);
    std::string label(relation_name(s.spurious_label));
    read(*it, "spurious_label", "synthetic", label);
    auto rel = parse_relation(label);
    if (!rel) throw ConfigError("synthetic.spurious_label: unknown relation '" + label + "'");
    s.spurious_label = *rel;
    read(*it, "rho_train", "synthetic", s.rho_train);
    read(*it, "rho_ood", "synthetic", s.rho_ood);
    read(*it, "train_size", "synthetic", s.train_size);
    read(*it, "dev_size", "synthetic", s.dev_size);
    read(*it, "ood_size", "synthetic", s.ood_size);
  }
  c.synthetic.seed = c.seed;
  return c;
}

ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

json load_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

void apply_override(json& j, const std::string& dotted_key, const std::string& value) {
  if (dotted_key.empty()) throw ConfigError("override with an empty key");
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;
  }
  json* node = &j;
  std::stringstream ss(dotted_key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("malformed override key '" + dotted_key + "'");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override '" + dotted_key + "' descends into a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError("override '" + dotted_key + "' descends into a non-object");
  (*node)[parts.back()] = std::move(parsed);
}

nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["data"] = {{"train", c.data.train},         {"dev", c.data.dev},
               {"test", c.data.test},           {"skip_malformed", c.data.skip_malformed},
               {"min_count", c.data.min_count}, {"stopwords", c.data.stopwords}};
  j["model"] = {{"num_blocks", c.model.num_blocks}, {"num_heads", c.model.num_heads}, {"d_model", c.model.d_model},
                {"d_ff", c.model.d_ff},             {"max_len", c.model.max_len},     {"ata_dim", c.model.ata_dim},
                {"init_std", c.model.init_std},     {"ln_eps", c.model.ln_eps}};
  const TrainConfig& t = c.train;
  j["train"] = {{"alpha", t.alpha},
                {"beta", t.beta},
                {"block_strategy", std::string(block_strategy_name(t.block_strategy))},
                {"learning_rate", t.learning_rate},
                {"batch_size", t.batch_size},
                {"steps", t.steps},
                {"epochs", t.epochs},
                {"loss_er", t.switches.er},
                {"loss_sa", t.switches.sa},
                {"loss_si", t.switches.si},
                {"sa_norm", t.sa_norm == SaNorm::absolute ? "l1" : "l2"},
                {"grad_clip", t.grad_clip},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},
                {"checkpoint_interval", t.checkpoint_interval},
                {"checkpoint_path", t.checkpoint_path},
                {"metrics_path", t.metrics_path}};
  j["eval"] = {{"checkpoint", c.eval.checkpoint}, {"dataset", c.eval.dataset}, {"lexicon", c.eval.lexicon},
               {"category", c.eval.category},     {"rounds", c.eval.rounds},   {"blocks", c.eval.blocks}};
  const SyntheticSpec& s = c.synthetic;
  j["synthetic"] = {{"activity_groups", s.activity_groups},
                    {"subjects", s.subjects},
                    {"locations", s.locations},
                    {"premise_templates", s.premise_templates},
                    {"hypothesis_templates", s.hypothesis_templates},
                    {"spurious_token", s.spurious_token},
                    {"spurious_label", std::string(relation_name(s.spurious_label))},
                    {"rho_train", s.rho_train},
                    {"rho_ood", s.rho_ood},
                    {"train_size", s.train_size},
                    {"dev_size", s.dev_size},
                    {"ood_size", s.ood_size}};
  return j;
}

std::string experiment_hash(const ExperimentConfig& config) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : to_json(config).dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace ebd
