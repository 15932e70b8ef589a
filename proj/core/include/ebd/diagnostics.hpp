#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ebd/grad_check.hpp"

namespace ebd {

struct LossTermCheck {
  std::string term;  // l_main, l_er, l_sa, l_si, total
  GradCheckResult result;
};

// Central-difference check of every loss term through a 2-block, d = 8
// encoder on a batch of two labeled pairs, over all parameters.
std::vector<LossTermCheck> check_loss_gradients(std::uint64_t seed, double step = 1e-5);

}  // namespace ebd
