#pragma once

// Central finite-difference gradient checking. Independent of the backward
// implementation: only forward evaluations are used for the numeric side.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "csanct/autodiff.hpp"

namespace csanct {

struct GradCheckResult {
  Real max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  Real worst_analytic = 0;
  Real worst_numeric = 0;
};

// Below the floor the central difference is dominated by roundoff
// (~1e-16·|loss|/step), so tiny gradients are compared on an absolute scale.
inline Real relative_error(Real analytic, Real numeric, Real floor = 1e-7) {
  const Real denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares backward() gradients of loss_fn against central differences for
/// every element of every named parameter. loss_fn must be deterministic.
inline GradCheckResult check_gradients(const std::vector<std::pair<std::string, Tensor>>& params,
                                       const std::function<Tensor()>& loss_fn, Real step = 1e-4,
                                       Real floor = 1e-7) {
  for (auto [name, t] : params) t.zero_grad();
  backward(loss_fn());

  GradCheckResult result;
  for (auto [name, t] : params) {
    std::vector<Real> analytic(t.size(), Real{0});
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real saved = values[i];
      Real plus, minus;
      {
        NoGradGuard guard;
        values[i] = saved + step;
        plus = loss_fn().item();
        values[i] = saved - step;
        minus = loss_fn().item();
      }
      values[i] = saved;
      const Real numeric = (plus - minus) / (2 * step);
      const Real err = relative_error(analytic[i], numeric, floor);
      ++result.checked;
      if (result.checked == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = name;
        result.worst_index = i;
        result.worst_analytic = analytic[i];
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace csanct
