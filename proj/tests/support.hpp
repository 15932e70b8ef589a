#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ebd/autograd.hpp"
#include "ebd/corpus.hpp"

namespace ebd::test {

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data) v = u(rng);
  return t;
}

inline std::vector<double> random_distribution(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(n);
  double s = 0;
  for (double& v : p) {
    v = u(rng) + 1e-6;
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

inline double rel_error(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

// Gradient of f at x by central differences, computed without the tape.
inline std::vector<double> central_difference(const std::function<double(const std::vector<Tensor>&)>& f,
                                              std::vector<Tensor> inputs, std::size_t which, double h = 1e-6) {
  std::vector<double> g(inputs[which].data.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double orig = inputs[which].data[i];
    inputs[which].data[i] = orig + h;
    const double up = f(inputs);
    inputs[which].data[i] = orig - h;
    const double down = f(inputs);
    inputs[which].data[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

using OpBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Largest relative error between tape gradients and central differences of
// sum(w * op(inputs)) for a random projection w, over every input.
inline double op_gradient_error(const OpBuilder& op, const std::vector<Tensor>& inputs, std::mt19937_64& rng) {
  Tensor w;
  {
    Tape probe(false);
    std::vector<Var> vs;
    for (const auto& t : inputs) vs.push_back(probe.constant(t));
    w = random_tensor(op(probe, vs).value().shape, rng, -1.0, 1.0);
  }
  auto value = [&](const std::vector<Tensor>& xs) {
    Tape tape(false);
    std::vector<Var> vs;
    for (const auto& t : xs) vs.push_back(tape.constant(t));
    const Tensor& y = op(tape, vs).value();
    double s = 0;
    for (std::size_t i = 0; i < y.data.size(); ++i) s += w.data[i] * y.data[i];
    return s;
  };
  Tape tape;
  std::vector<Var> vs;
  for (auto t : inputs) {
    t.requires_grad = true;
    vs.push_back(tape.constant(std::move(t)));
  }
  Var loss = sum(mul(op(tape, vs), tape.constant(w)));
  tape.backward(loss);
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = tape.grad(vs[k]);
    const auto numeric = central_difference(value, inputs, k);
    for (std::size_t i = 0; i < numeric.size(); ++i) worst = std::max(worst, rel_error(analytic.data[i], numeric[i]));
  }
  return worst;
}

inline Record make_record(const std::string& p, const std::string& h, const std::string& e, Relation y) {
  return Record{tokenize(p), tokenize(h), tokenize(e), y};
}

// Random record over a small word pool; the explanation reuses some pair words.
inline Record random_record(std::mt19937_64& rng, bool with_explanation = true) {
  static const std::vector<std::string> pool = {"a",     "the",   "dog",  "cat",  "runs", "sleeps", "in",
                                                "park",  "house", "red",  "big",  "man",  "woman",  "eats",
                                                "food",  "near",  "two",  "kids", "play", "ball",   "not"};
  std::uniform_int_distribution<std::size_t> word(0, pool.size() - 1), len(1, 7);
  std::bernoulli_distribution coin(0.4);
  Record r;
  for (std::size_t i = len(rng); i > 0; --i) r.premise.push_back(pool[word(rng)]);
  for (std::size_t i = len(rng); i > 0; --i) r.hypothesis.push_back(pool[word(rng)]);
  if (with_explanation) {
    for (const auto& w : r.premise)
      if (coin(rng)) r.explanation.push_back(w);
    for (const auto& w : r.hypothesis)
      if (coin(rng)) r.explanation.push_back(w);
    r.explanation.push_back("because");
  }
  r.label = relation_from_index(std::uniform_int_distribution<std::size_t>(0, 2)(rng));
  return r;
}

}  // namespace ebd::test
