#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ebd/autograd.hpp"

namespace ebd {

struct NonFiniteProbe {
  std::string parameter;
  std::size_t coordinate = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_coordinate = 0;
  std::size_t coordinates_checked = 0;
  std::vector<NonFiniteProbe> non_finite;

  bool passed(double tolerance) const { return non_finite.empty() && max_rel_error < tolerance; }
};

// |a - n| / max(1, |a|, |n|) for one coordinate.
double gradient_relative_error(double analytic, double numeric);

// Central differences of f around point, compared against a supplied analytic gradient.
GradCheckResult finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> point, std::span<const double> analytic, double step);

// Builds the loss with `build` on a fresh tape, differentiates it, and compares every
// parameter coordinate against central differences. Parameters are restored on exit.
using LossBuilder = std::function<Var(Tape&, const ParamStore&)>;
GradCheckResult finite_diff_check(const LossBuilder& build, ParamStore& params, double step);

}  // namespace ebd
