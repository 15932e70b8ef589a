#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "ebd/autograd.hpp"
#include "ebd/corpus.hpp"
#include "ebd/encoder.hpp"

namespace ebd {

// Floor applied inside every logarithm.
inline constexpr double kLogFloor = 1e-12;

enum class SaNorm { absolute, squared };

// ---- graph versions ---------------------------------------------------------

// -log max(pred[gold], floor)
Var loss_main(Var pred, Relation gold);
// Same quantity computed from logits through log-sum-exp.
Var loss_main_from_logits(Var logits, Relation gold);
// Mean over positions of -log max(P(e_i), floor); rows of token_probs are distributions.
Var loss_er(Var token_probs, std::span<const TokenLabel> labels);
Var loss_er_from_logits(Var token_logits, std::span<const TokenLabel> labels);
// sum_i |target_i - attn_i| (or squared differences).
Var loss_sa(Var attn, std::span<const double> targets, SaNorm norm = SaNorm::absolute);
// Outcome grid of two independent sub-inferences collapsed by minimum priority.
Var joint_distribution(Var p_psi, Var p_sigma);
// Jensen-Shannon divergence, natural log.
Var js_divergence(Var p, Var q);
// js_divergence(main, joint_distribution(p_psi, p_sigma))
Var loss_si(Var main, Var p_psi, Var p_sigma);

// ---- value versions -----------------------------------------------------------

double loss_main(std::span<const double> pred, Relation gold);
double loss_er(std::span<const std::array<double, kNumTokenLabels>> token_probs, std::span<const TokenLabel> labels);
double loss_sa(std::span<const double> attn, std::span<const double> targets, SaNorm norm = SaNorm::absolute);
Distribution joint_distribution(std::span<const double> p_psi, std::span<const double> p_sigma);
double js_divergence(std::span<const double> p, std::span<const double> q);
double loss_si(std::span<const double> main, std::span<const double> p_psi, std::span<const double> p_sigma);

// ---- combination ------------------------------------------------------------------

struct LossBundle {
  double l_main = 0.0;
  double l_er = 0.0;
  std::map<std::size_t, double> l_sa;  // keyed by block number
  std::map<std::size_t, double> l_si;
  double total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  std::size_t supervised_count = 0;  // H

  double l_sa_sum() const;
  double l_si_sum() const;
  // l_main + alpha l_er + (beta / H) sum_h (l_sa[h] + l_si[h])
  double recombine() const;
};

// Fills total from the components. Rejects beta > 0 with no supervised blocks.
LossBundle total_loss(double l_main, double l_er, const std::map<std::size_t, double>& l_sa,
                      const std::map<std::size_t, double>& l_si, double alpha, double beta,
                      std::span<const std::size_t> supervised_blocks);

// Bundle averaged component-wise; totals recombined from the averages.
LossBundle mean_bundle(std::span<const LossBundle> bundles);

}  // namespace ebd
