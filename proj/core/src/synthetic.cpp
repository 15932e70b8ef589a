#include "ebd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_set>

namespace ebd {

namespace {

// Explanation connectives per relation; none of these may occur in a pair.
const std::vector<std::vector<std::string>>& connectives() {
  static const std::vector<std::vector<std::string>> c = {
      {"implies"}, {"does", "not", "imply"}, {"rules", "out"}};
  return c;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == ' ' || ch == '\t') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::size_t count_placeholder(const std::string& tmpl, const std::string& name) {
  auto words = split_words(tmpl);
  return static_cast<std::size_t>(std::count(words.begin(), words.end(), name));
}

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

std::vector<std::string> fill(const std::string& tmpl, const std::string& subject, const std::string& activity,
                              const std::string& location) {
  std::vector<std::string> out;
  for (auto& w : split_words(tmpl)) {
    if (w == "{subject}") out.push_back(subject);
    else if (w == "{activity}") out.push_back(activity);
    else if (w == "{location}") out.push_back(location);
    else out.push_back(w);
  }
  return out;
}

struct Draw {
  Relation label;
  bool spurious;
};

// Exact label and spurious-presence counts realizing a Pearson coefficient rho
// between presence and (label == target).
std::vector<Draw> plan_draws(std::size_t n, double rho, Relation target, std::mt19937_64& rng) {
  std::vector<std::size_t> per_label(kNumRelations, n / kNumRelations);
  for (std::size_t i = 0; i < n % kNumRelations; ++i) ++per_label[i];
  const std::size_t n_y = per_label[relation_index(target)];
  const double p_y = static_cast<double>(n_y) / static_cast<double>(n);
  // A presence rate of 1/3 leaves room for strong positive coupling with a
  // one-third label; 2/3 does the same for negative coupling.
  const double p_z_wanted = rho >= 0 ? 1.0 / 3.0 : 2.0 / 3.0;
  const auto n_z = static_cast<std::size_t>(std::llround(p_z_wanted * static_cast<double>(n)));
  const double p_z = static_cast<double>(n_z) / static_cast<double>(n);
  const double p11 = p_z * p_y + rho * std::sqrt(p_z * (1 - p_z) * p_y * (1 - p_y));
  const auto lo = static_cast<long long>(n_z + n_y > n ? n_z + n_y - n : 0);
  const auto hi = static_cast<long long>(std::min(n_z, n_y));
  const auto n11 = static_cast<std::size_t>(std::clamp(std::llround(p11 * static_cast<double>(n)), lo, hi));

  std::vector<Draw> on_target, off_target;
  for (std::size_t i = 0; i < n_y; ++i) on_target.push_back({target, i < n11});
  for (std::size_t r = 0; r < kNumRelations; ++r) {
    if (r == relation_index(target)) continue;
    for (std::size_t i = 0; i < per_label[r]; ++i) off_target.push_back({relation_from_index(r), false});
  }
  std::shuffle(off_target.begin(), off_target.end(), rng);
  for (std::size_t i = 0; i < n_z - n11 && i < off_target.size(); ++i) off_target[i].spurious = true;
  std::vector<Draw> all = std::move(on_target);
  all.insert(all.end(), off_target.begin(), off_target.end());
  std::shuffle(all.begin(), all.end(), rng);
  return all;
}

std::vector<Record> generate_split(const SyntheticSpec& spec, std::size_t n, double rho, std::uint64_t stream) {
  std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + stream);
  const std::size_t groups = spec.activity_groups.size();
  std::vector<Record> out;
  out.reserve(n);
  for (const Draw& d : plan_draws(n, rho, spec.spurious_label, rng)) {
    const std::size_t gp = std::uniform_int_distribution<std::size_t>(0, groups - 1)(rng);
    std::vector<std::size_t> candidates;
    for (std::size_t g = 0; g < groups; ++g) {
      if ((g + kNumRelations - gp % kNumRelations) % kNumRelations == relation_index(d.label)) candidates.push_back(g);
    }
    const std::size_t gh = pick(candidates, rng);
    const std::string& act_p = pick(spec.activity_groups[gp], rng);
    const std::string& act_h = pick(spec.activity_groups[gh], rng);
    const std::string& subject = pick(spec.subjects, rng);

    Record r;
    r.label = d.label;
    r.premise = fill(pick(spec.premise_templates, rng), subject, act_p, pick(spec.locations, rng));
    r.hypothesis = fill(pick(spec.hypothesis_templates, rng), subject, act_h, pick(spec.locations, rng));
    if (d.spurious) {
      const std::size_t at = std::uniform_int_distribution<std::size_t>(0, r.hypothesis.size())(rng);
      r.hypothesis.insert(r.hypothesis.begin() + static_cast<std::ptrdiff_t>(at), spec.spurious_token);
    }
    r.explanation.push_back(act_p);
    for (const auto& w : connectives()[relation_index(d.label)]) r.explanation.push_back(w);
    r.explanation.push_back(act_h);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

SyntheticSpec SyntheticSpec::defaults() {
  SyntheticSpec s;
  s.activity_groups = {{"playing", "performing"}, {"singing", "chanting"}, {"running", "jogging"}};
  s.subjects = {"man", "woman", "girl", "boy", "child", "chef", "student", "worker"};
  s.locations = {"park", "street", "kitchen", "beach", "garden", "hall"};
  s.premise_templates = {"a {subject} is {activity} in the {location}", "the {subject} is {activity} near a {location}",
                         "a young {subject} is {activity} at the {location}"};
  s.hypothesis_templates = {"the {subject} is {activity}", "a {subject} is {activity} today",
                            "someone is {activity} in a {location}"};
  return s;
}

void SyntheticSpec::validate() const {
  if (!(rho_train >= -1 && rho_train <= 1) || !(rho_ood >= -1 && rho_ood <= 1)) {
    throw std::invalid_argument("synthetic: correlations must lie in [-1, 1]");
  }
  if (train_size == 0 || dev_size == 0 || ood_size == 0) throw std::invalid_argument("synthetic: split sizes must be >= 1");
  if (activity_groups.size() < kNumRelations) {
    throw std::invalid_argument("synthetic: at least 3 activity groups are needed to realize every relation");
  }
  if (subjects.empty() || locations.empty() || premise_templates.empty() || hypothesis_templates.empty()) {
    throw std::invalid_argument("synthetic: word pools and template sets must be non-empty");
  }
  std::unordered_set<std::string> causal;
  for (const auto& g : activity_groups) {
    if (g.empty()) throw std::invalid_argument("synthetic: empty activity group");
    for (const auto& w : g) {
      if (!causal.insert(w).second) throw std::invalid_argument("synthetic: activity word '" + w + "' appears twice");
    }
  }
  if (spurious_token.empty() || split_words(spurious_token).size() != 1) {
    throw std::invalid_argument("synthetic: spurious token must be a single word");
  }
  if (causal.count(spurious_token)) {
    throw std::invalid_argument("synthetic: spurious token '" + spurious_token + "' is one of the causal words");
  }
  std::unordered_set<std::string> other(subjects.begin(), subjects.end());
  other.insert(locations.begin(), locations.end());
  for (const auto* set : {&premise_templates, &hypothesis_templates}) {
    for (const auto& t : *set) {
      if (count_placeholder(t, "{activity}") != 1) {
        throw std::invalid_argument("synthetic: template '" + t + "' needs exactly one {activity}");
      }
      for (const auto& w : split_words(t)) other.insert(w);
    }
  }
  if (other.count(spurious_token)) {
    throw std::invalid_argument("synthetic: spurious token '" + spurious_token + "' also occurs in the templates or pools");
  }
  for (const auto& words : connectives()) {
    for (const auto& w : words) {
      if (other.count(w) || causal.count(w)) {
        throw std::invalid_argument("synthetic: explanation connective '" + w + "' collides with the word pools");
      }
    }
  }
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticCorpus c;
  c.train = generate_split(spec, spec.train_size, spec.rho_train, 1);
  c.dev = generate_split(spec, spec.dev_size, spec.rho_train, 2);
  c.ood = generate_split(spec, spec.ood_size, spec.rho_ood, 3);
  return c;
}

void write_synthetic(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
  std::filesystem::create_directories(dir);
  write_jsonl(dir / "train.jsonl", corpus.train);
  write_jsonl(dir / "dev.jsonl", corpus.dev);
  write_jsonl(dir / "ood.jsonl", corpus.ood);
}

double spurious_correlation(std::span<const Record> records, const std::string& token, Relation label) {
  if (records.empty()) throw std::invalid_argument("spurious_correlation: no records");
  double sz = 0, sy = 0, szy = 0;
  for (const auto& r : records) {
    const double z = std::find(r.hypothesis.begin(), r.hypothesis.end(), token) != r.hypothesis.end() ? 1.0 : 0.0;
    const double y = r.label == label ? 1.0 : 0.0;
    sz += z;
    sy += y;
    szy += z * y;
  }
  const double n = static_cast<double>(records.size());
  const double cov = szy / n - (sz / n) * (sy / n);
  const double var_z = sz / n * (1 - sz / n);
  const double var_y = sy / n * (1 - sy / n);
  if (var_z == 0 || var_y == 0) return 0.0;
  return cov / std::sqrt(var_z * var_y);
}

}  // namespace ebd
