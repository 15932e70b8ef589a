#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "ebd/config.hpp"
#include "ebd/corpus.hpp"
#include "ebd/diagnostics.hpp"
#include "ebd/evaluator.hpp"
#include "ebd/synthetic.hpp"
#include "ebd/trainer.hpp"

namespace ebd::cli {

namespace {

namespace fs = std::filesystem;

// Thrown for problems the user fixes on the command line or in the config.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string verb;
  std::string config_path;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string resume;
};

std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

ExperimentConfig resolve_config(const Options& o, bool required) {
  nlohmann::json j = nlohmann::json::object();
  if (!o.config_path.empty()) {
    try {
      j = load_config_json(o.config_path);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  } else if (required) {
    throw UsageError("'" + o.verb + "' requires --config PATH");
  }
  try {
    for (const auto& kv : o.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      apply_override(j, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed) j["seed"] = *o.seed;
    return parse_config(j);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

void write_manifest(const fs::path& dir, const Options& o, const ExperimentConfig& cfg) {
  nlohmann::ordered_json m;
  m["verb"] = o.verb;
  m["version"] = std::string(EBDREG_VERSION) + "+" + EBDREG_GIT_REV;
  m["seed"] = cfg.seed;
  m["timestamp"] = timestamp_utc();
  m["config_hash"] = experiment_hash(cfg);
  m["config"] = to_json(cfg);
  write_text(dir / (o.verb + ".manifest.json"), m.dump(2) + "\n");
}

std::vector<Record> load_records(const std::string& path, const DataConfig& data, bool require_explanation,
                                 std::ostream& err) {
  if (path.empty()) throw UsageError("no dataset path configured");
  LoadOptions opts = data.load_options();
  opts.require_explanation = require_explanation;
  LoadResult res = load_jsonl(path, opts);
  for (const auto& issue : res.issues) err << "warning: " << path << ":" << issue.line << ": " << issue.message << "\n";
  if (res.records.empty()) throw std::runtime_error("dataset " + path + " contains no usable records");
  return std::move(res.records);
}

std::string eval_dataset_path(const ExperimentConfig& cfg) {
  if (!cfg.eval.dataset.empty()) return cfg.eval.dataset;
  if (!cfg.data.test.empty()) return cfg.data.test;
  return cfg.data.dev;
}

Checkpoint load_eval_checkpoint(const ExperimentConfig& cfg, const Options& o) {
  const fs::path path = cfg.eval.checkpoint.empty() ? fs::path(o.out) / "checkpoint.json" : fs::path(cfg.eval.checkpoint);
  return load_checkpoint(path);
}

// ---- verbs ---------------------------------------------------------------------

int cmd_gen(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o, false);
  SyntheticCorpus corpus = generate_synthetic(cfg.synthetic);
  write_synthetic(o.out, corpus);
  write_manifest(o.out, o, cfg);
  out << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/" << corpus.ood.size()
      << " train/dev/ood records to " << o.out << "\n";
  out << "spurious correlation: train " << spurious_correlation(corpus.train, cfg.synthetic.spurious_token, cfg.synthetic.spurious_label)
      << ", ood " << spurious_correlation(corpus.ood, cfg.synthetic.spurious_token, cfg.synthetic.spurious_label) << "\n";
  return 0;
}

int cmd_label(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(o, true);
  const std::string path = cfg.data.train.empty() ? eval_dataset_path(cfg) : cfg.data.train;
  const auto records = load_records(path, cfg.data, false, err);
  const Vocabulary vocab = Vocabulary::build(records, cfg.data.min_count);
  const LabelOptions lopts = cfg.data.label_options();

  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  std::size_t unlabeled = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Record& r = records[i];
    PairSequence pair = assemble_pair(r.premise, r.hypothesis, vocab);
    auto labels = label_tokens(pair, r.premise, r.hypothesis, r.explanation, lopts);
    nlohmann::ordered_json e;
    e["index"] = i;
    e["label"] = relation_name(r.label);
    e["tokens"] = pair.words;
    if (labels) {
      std::vector<std::size_t> ids;
      for (TokenLabel l : *labels) ids.push_back(label_index(l));
      NormalizedTargets t = normalize_labels(*labels);
      e["e"] = ids;
      e["targets"] = t.values;
      e["uniform_fallback"] = t.uniform_fallback;
    } else {
      e["e"] = nullptr;
      ++unlabeled;
    }
    list.push_back(std::move(e));
  }
  fs::path target = fs::path(o.out).extension() == ".json" ? fs::path(o.out) : fs::path(o.out) / "labels.json";
  write_text(target, list.dump(2) + "\n");
  write_manifest(target.has_parent_path() ? target.parent_path() : fs::path("."), o, cfg);
  out << "labeled " << records.size() - unlabeled << " of " << records.size() << " records -> " << target.string() << "\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = resolve_config(o, true);
  if (cfg.train.checkpoint_path.empty()) cfg.train.checkpoint_path = (fs::path(o.out) / "checkpoint.json").string();
  if (cfg.train.metrics_path.empty()) cfg.train.metrics_path = (fs::path(o.out) / "metrics.jsonl").string();
  const auto records = load_records(cfg.data.train, cfg.data, true, err);

  std::optional<Checkpoint> resume;
  if (!o.resume.empty()) resume = load_checkpoint(o.resume);
  const Vocabulary vocab = resume ? resume->vocabulary() : Vocabulary::build(records, cfg.data.min_count);
  EncoderConfig ecfg = cfg.model;
  ecfg.vocab_size = vocab.size();
  if (resume && resume->config_hash != config_hash(cfg.train, ecfg)) {
    throw UsageError("checkpoint " + o.resume + " was produced by a different configuration");
  }

  std::vector<LabeledSequence> data;
  const LabelOptions lopts = cfg.data.label_options();
  for (const auto& r : records) {
    if (auto seq = build_labeled(r, vocab, lopts)) data.push_back(std::move(*seq));
  }
  if (data.empty()) throw std::runtime_error("no training record carries an explanation");
  fs::create_directories(o.out);
  write_manifest(o.out, o, cfg);

  TrainOutputs res = train(data, vocab, ecfg, cfg.train, resume ? &*resume : nullptr);
  if (!res.metrics.empty()) {
    const MetricsRow& last = res.metrics.back();
    out << "step " << last.step << " total " << last.total << " (main " << last.l_main << ")\n";
  }
  out << "checkpoint: " << cfg.train.checkpoint_path << "\nmetrics: " << cfg.train.metrics_path << "\n";
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(o, true);
  const Checkpoint ck = load_eval_checkpoint(cfg, o);
  const Encoder encoder = ck.make_encoder();
  const Vocabulary vocab = ck.vocabulary();
  const auto records = load_records(eval_dataset_path(cfg), cfg.data, false, err);

  const EvalReport rep = evaluate(encoder, vocab, records);
  std::optional<TokenF1Report> f1;
  if (std::any_of(records.begin(), records.end(), [](const Record& r) { return r.supervisable(); })) {
    f1 = token_f1(encoder, vocab, records, cfg.data.label_options());
  }
  write_text(fs::path(o.out) / "eval.csv", eval_csv(rep, f1));
  write_manifest(o.out, o, cfg);
  out << "accuracy " << rep.accuracy << " (" << rep.correct << "/" << rep.total << ")\n";
  if (f1) {
    out << "token macro-F1 " << f1->macro_f1 << ", micro-F1 " << f1->micro_f1 << "\n";
    for (std::size_t c : f1->empty_classes) out << "note: token class " << c << " is empty in gold and predictions; F1 = 0\n";
  }
  return 0;
}

int cmd_swap(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(o, true);
  const Checkpoint ck = load_eval_checkpoint(cfg, o);
  const Encoder encoder = ck.make_encoder();
  const Vocabulary vocab = ck.vocabulary();
  const auto records = load_records(eval_dataset_path(cfg), cfg.data, true, err);
  if (cfg.eval.lexicon.empty()) throw UsageError("swap-eval needs eval.lexicon");
  const Lexicon lexicon = load_lexicon(cfg.eval.lexicon);

  std::vector<SwapResult> results;
  results.push_back(swap_eval(encoder, vocab, records, lexicon, *parse_swap_category(cfg.eval.category), cfg.eval.rounds,
                              cfg.seed, cfg.data.label_options()));
  if (results.back().warning) err << "warning: " << *results.back().warning << "\n";
  write_text(fs::path(o.out) / "swap.csv", swap_csv(results));
  write_manifest(o.out, o, cfg);
  const SwapResult& r = results.back();
  out << swap_category_name(r.category) << ": baseline " << r.baseline_accuracy;
  for (double a : r.round_accuracy) out << ' ' << a;
  out << "\n";
  return 0;
}

std::vector<std::size_t> report_blocks(const ExperimentConfig& cfg, const Checkpoint& ck) {
  if (!cfg.eval.blocks.empty()) return cfg.eval.blocks;
  if (!ck.supervised_blocks.empty()) return ck.supervised_blocks;
  return {ck.encoder_config.num_blocks};
}

int cmd_attn(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(o, true);
  const Checkpoint ck = load_eval_checkpoint(cfg, o);
  const Encoder encoder = ck.make_encoder();
  const auto records = load_records(eval_dataset_path(cfg), cfg.data, true, err);
  const auto blocks = report_blocks(cfg, ck);
  const AttentionReport rep = attention_report(encoder, ck.vocabulary(), records, blocks, cfg.data.label_options());
  write_text(fs::path(o.out) / "attention.json", rep.to_json() + "\n");
  write_manifest(o.out, o, cfg);
  out << "mean keyword mass " << rep.mean_keyword_mass() << " over " << rep.examples.size() << " examples\n";
  return 0;
}

int cmd_sub(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(o, true);
  const Checkpoint ck = load_eval_checkpoint(cfg, o);
  const Encoder encoder = ck.make_encoder();
  const auto records = load_records(eval_dataset_path(cfg), cfg.data, true, err);
  const auto blocks = report_blocks(cfg, ck);
  const std::size_t top = *std::max_element(blocks.begin(), blocks.end());
  const SubInferenceReport rep = sub_inference_report(encoder, ck.vocabulary(), records, top, cfg.data.label_options());
  write_text(fs::path(o.out) / "sub_inference.json", rep.to_json() + "\n");
  write_manifest(o.out, o, cfg);
  out << "block " << top << ": consistency " << rep.consistency_rate << " over " << rep.rows.size() << " examples\n";
  return 0;
}

int cmd_grad_check(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o, false);
  constexpr double tolerance = 1e-4;
  bool ok = true;
  for (const auto& c : check_loss_gradients(cfg.seed)) {
    const bool pass = c.result.passed(tolerance);
    ok = ok && pass;
    out << c.term << " max_rel_error " << c.result.max_rel_error << " (" << c.result.worst_parameter << "["
        << c.result.worst_coordinate << "], " << c.result.coordinates_checked << " coordinates)"
        << (c.result.non_finite.empty() ? "" : " non-finite probes") << (pass ? "" : "  FAIL") << "\n";
  }
  return ok ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Explanation-based bias decoupling for NLI", "ebdreg"};
  app.require_subcommand(1);
  Options o;

  const std::vector<std::pair<const char*, const char*>> verbs = {
      {"gen", "generate a synthetic biased corpus"},
      {"label", "dump explanation-derived token labels"},
      {"train", "train an encoder"},
      {"eval", "accuracy and token F1 of a checkpoint"},
      {"swap-eval", "accuracy under synonym swaps"},
      {"attn-report", "normalized [CLS] attention per block"},
      {"sub-report", "sub-inference consistency"},
      {"grad-check", "finite-difference check of every loss term"}};
  for (const auto& [name, help] : verbs) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "JSON config file");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "override the config seed");
    sub->add_option("--set", o.overrides, "override a config key (dotted key=value)")->take_all();
    if (std::string(name) == "train") sub->add_option("--resume", o.resume, "continue from a checkpoint");
    sub->callback([&o, n = std::string(name)] { o.verb = n; });
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (o.verb == "gen") return cmd_gen(o, out);
    if (o.verb == "label") return cmd_label(o, out, err);
    if (o.verb == "train") return cmd_train(o, out, err);
    if (o.verb == "eval") return cmd_eval(o, out, err);
    if (o.verb == "swap-eval") return cmd_swap(o, out, err);
    if (o.verb == "attn-report") return cmd_attn(o, out, err);
    if (o.verb == "sub-report") return cmd_sub(o, out, err);
    if (o.verb == "grad-check") return cmd_grad_check(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << "error: unknown verb\n";
  return 2;
}

}  // namespace ebd::cli
