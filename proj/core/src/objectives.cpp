#include "ebd/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace ebd {

namespace {

void require_distribution_shape(const Tensor& t, const char* op) {
  if (t.rank() != 1 || t.numel() != kNumRelations) {
    throw std::invalid_argument(std::string(op) + ": expected a distribution over " + std::to_string(kNumRelations) +
                                " relations, got shape " + shape_string(t.shape));
  }
}

template <typename Build>
double evaluate_scalar(Build&& build) {
  Tape tape(false);
  return build(tape).value().item();
}

}  // namespace

// ---- graph versions ---------------------------------------------------------

Var loss_main(Var pred, Relation gold) { return scale(log_floor(pick(pred, relation_index(gold)), kLogFloor), -1.0); }

Var loss_main_from_logits(Var logits, Relation gold) {
  return scale(clamp_min(pick(log_softmax(logits), relation_index(gold)), std::log(kLogFloor)), -1.0);
}

Var loss_er(Var token_probs, std::span<const TokenLabel> labels) {
  if (token_probs.value().rows() != labels.size()) throw std::invalid_argument("loss_er: one label per position required");
  std::vector<std::size_t> cols(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) cols[i] = label_index(labels[i]);
  return scale(mean(log_floor(pick_per_row(token_probs, cols), kLogFloor)), -1.0);
}

Var loss_er_from_logits(Var token_logits, std::span<const TokenLabel> labels) {
  if (token_logits.value().rows() != labels.size()) {
    throw std::invalid_argument("loss_er: one label per position required");
  }
  std::vector<std::size_t> cols(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) cols[i] = label_index(labels[i]);
  Var picked = pick_per_row(log_softmax(token_logits), cols);
  return scale(mean(clamp_min(picked, std::log(kLogFloor))), -1.0);
}

Var loss_sa(Var attn, std::span<const double> targets, SaNorm norm) {
  if (attn.value().numel() != targets.size()) throw std::invalid_argument("loss_sa: attention and targets differ in length");
  Var diff = sub(attn, attn.tape->constant(Tensor::vector(targets)));
  return sum(norm == SaNorm::absolute ? abs(diff) : square(diff));
}

Var joint_distribution(Var p_psi, Var p_sigma) {
  const Tensor& p = p_psi.value();
  const Tensor& q = p_sigma.value();
  require_distribution_shape(p, "joint_distribution");
  require_distribution_shape(q, "joint_distribution");
  // Index order is entailed, neutral, contradicted, so the lower-priority
  // outcome of a pair is the larger index.
  Tensor out = Tensor::zeros({kNumRelations});
  for (std::size_t a = 0; a < kNumRelations; ++a)
    for (std::size_t b = 0; b < kNumRelations; ++b) out.data[std::max(a, b)] += p.data[a] * q.data[b];
  return p_psi.tape->record(std::move(out), {p_psi, p_sigma}, [](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    const std::size_t pp = t.parent(self, 0), pq = t.parent(self, 1);
    const Tensor& p2 = t.value(pp);
    const Tensor& q2 = t.value(pq);
    const bool need_p = t.needs_grad(Var{&t, pp});
    const bool need_q = t.needs_grad(Var{&t, pq});
    for (std::size_t a = 0; a < kNumRelations; ++a)
      for (std::size_t b = 0; b < kNumRelations; ++b) {
        const double g = dy->data[std::max(a, b)];
        if (need_p) t.grad_buffer(pp).data[a] += g * q2.data[b];
        if (need_q) t.grad_buffer(pq).data[b] += g * p2.data[a];
      }
  });
}

Var js_divergence(Var p, Var q) {
  if (p.value().shape != q.value().shape) throw std::invalid_argument("js_divergence: shape mismatch");
  Var log_m = log_floor(scale(add(p, q), 0.5), kLogFloor);
  Var kl_p = sum(mul(p, sub(log_floor(p, kLogFloor), log_m)));
  Var kl_q = sum(mul(q, sub(log_floor(q, kLogFloor), log_m)));
  return scale(add(kl_p, kl_q), 0.5);
}

Var loss_si(Var main, Var p_psi, Var p_sigma) { return js_divergence(main, joint_distribution(p_psi, p_sigma)); }

// ---- value versions -----------------------------------------------------------

double loss_main(std::span<const double> pred, Relation gold) {
  return evaluate_scalar([&](Tape& t) { return loss_main(t.constant(Tensor::vector(pred)), gold); });
}

double loss_er(std::span<const std::array<double, kNumTokenLabels>> token_probs, std::span<const TokenLabel> labels) {
  Tensor probs = Tensor::zeros({token_probs.size(), kNumTokenLabels});
  for (std::size_t i = 0; i < token_probs.size(); ++i)
    for (std::size_t c = 0; c < kNumTokenLabels; ++c) probs(i, c) = token_probs[i][c];
  return evaluate_scalar([&](Tape& t) { return loss_er(t.constant(std::move(probs)), labels); });
}

double loss_sa(std::span<const double> attn, std::span<const double> targets, SaNorm norm) {
  return evaluate_scalar([&](Tape& t) { return loss_sa(t.constant(Tensor::vector(attn)), targets, norm); });
}

Distribution joint_distribution(std::span<const double> p_psi, std::span<const double> p_sigma) {
  Tape tape(false);
  Var j = joint_distribution(tape.constant(Tensor::vector(p_psi)), tape.constant(Tensor::vector(p_sigma)));
  Distribution out{};
  for (std::size_t i = 0; i < kNumRelations; ++i) out[i] = j.value().data[i];
  return out;
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  return evaluate_scalar([&](Tape& t) { return js_divergence(t.constant(Tensor::vector(p)), t.constant(Tensor::vector(q))); });
}

double loss_si(std::span<const double> main, std::span<const double> p_psi, std::span<const double> p_sigma) {
  return evaluate_scalar([&](Tape& t) {
    return loss_si(t.constant(Tensor::vector(main)), t.constant(Tensor::vector(p_psi)), t.constant(Tensor::vector(p_sigma)));
  });
}

// ---- combination ------------------------------------------------------------------

double LossBundle::l_sa_sum() const {
  double s = 0.0;
  for (const auto& [h, v] : l_sa) s += v;
  return s;
}

double LossBundle::l_si_sum() const {
  double s = 0.0;
  for (const auto& [h, v] : l_si) s += v;
  return s;
}

double LossBundle::recombine() const {
  double aux = 0.0;
  if (supervised_count > 0) aux = beta / static_cast<double>(supervised_count) * (l_sa_sum() + l_si_sum());
  return l_main + alpha * l_er + aux;
}

LossBundle total_loss(double l_main, double l_er, const std::map<std::size_t, double>& l_sa,
                      const std::map<std::size_t, double>& l_si, double alpha, double beta,
                      std::span<const std::size_t> supervised_blocks) {
  if (alpha < 0 || beta < 0) throw std::invalid_argument("total_loss: alpha and beta must be non-negative");
  if (beta > 0 && supervised_blocks.empty()) throw std::invalid_argument("total_loss: beta > 0 requires supervised blocks");
  LossBundle b;
  b.l_main = l_main;
  b.l_er = l_er;
  b.l_sa = l_sa;
  b.l_si = l_si;
  b.alpha = alpha;
  b.beta = beta;
  b.supervised_count = supervised_blocks.size();
  b.total = b.recombine();
  return b;
}

LossBundle mean_bundle(std::span<const LossBundle> bundles) {
  if (bundles.empty()) throw std::invalid_argument("mean_bundle: no bundles");
  LossBundle out;
  out.alpha = bundles[0].alpha;
  out.beta = bundles[0].beta;
  out.supervised_count = bundles[0].supervised_count;
  const double inv = 1.0 / static_cast<double>(bundles.size());
  for (const auto& b : bundles) {
    out.l_main += b.l_main * inv;
    out.l_er += b.l_er * inv;
    for (const auto& [h, v] : b.l_sa) out.l_sa[h] += v * inv;
    for (const auto& [h, v] : b.l_si) out.l_si[h] += v * inv;
  }
  out.total = out.recombine();
  return out;
}

}  // namespace ebd
