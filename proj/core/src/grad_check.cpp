#include "ebd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ebd {

namespace {

void require_step(double step) {
  if (!(step >= 1e-7 && step <= 1e-3)) throw std::invalid_argument("finite_diff_check: step must lie in [1e-7, 1e-3]");
}

}  // namespace

double gradient_relative_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / denom;
}

GradCheckResult finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> point, std::span<const double> analytic, double step) {
  require_step(step);
  if (point.size() != analytic.size()) throw std::invalid_argument("finite_diff_check: gradient size mismatch");
  GradCheckResult result;
  std::vector<double> x(point.begin(), point.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f(x);
    x[i] = orig - step;
    const double down = f(x);
    x[i] = orig;
    ++result.coordinates_checked;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      result.non_finite.push_back({"x", i});
      continue;
    }
    const double err = gradient_relative_error(analytic[i], (up - down) / (2.0 * step));
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_parameter = "x";
      result.worst_coordinate = i;
    }
  }
  return result;
}

GradCheckResult finite_diff_check(const LossBuilder& build, ParamStore& params, double step) {
  require_step(step);
  Gradients analytic;
  {
    Tape tape;
    Var loss = build(tape, params);
    analytic = tape.backward(loss, params);
  }
  auto evaluate = [&] {
    Tape tape(false);
    return build(tape, params).value().item();
  };

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& values = params[p].value.data;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + step;
      const double up = evaluate();
      values[i] = orig - step;
      const double down = evaluate();
      values[i] = orig;
      ++result.coordinates_checked;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        result.non_finite.push_back({params[p].name, i});
        continue;
      }
      const double err = gradient_relative_error(analytic.per_param[p].data[i], (up - down) / (2.0 * step));
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_parameter = params[p].name;
        result.worst_coordinate = i;
      }
    }
  }
  return result;
}

}  // namespace ebd
