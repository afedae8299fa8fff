#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "dtg/nn.hpp"

namespace dtg::testing {

struct GradCheckResult {
  double relative_error = 0.0;  // ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)
  double analytic_norm = 0.0;
  long checked = 0;
};

// Central differences over every parameter accepted by `include`. The
// numeric objective `value` must be evaluated on the current parameters;
// `accumulate` must add the analytic gradient into Parameter::grad.
inline GradCheckResult gradient_check(
    ParameterStore& store, const std::function<double()>& value,
    const std::function<void()>& accumulate, double step = 1e-3,
    const std::function<bool(const Parameter&)>& include = nullptr) {
  store.zero_grad();
  accumulate();
  double diff_sq = 0.0;
  double a_sq = 0.0;
  double n_sq = 0.0;
  GradCheckResult r;
  for (auto& p : store.all()) {
    if (include && !include(*p)) continue;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double orig = x;
      x = orig + step;
      const double up = value();
      x = orig - step;
      const double down = value();
      x = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad.data()[i];
      diff_sq += (analytic - numeric) * (analytic - numeric);
      a_sq += analytic * analytic;
      n_sq += numeric * numeric;
      ++r.checked;
    }
  }
  const double denom = std::max(std::sqrt(a_sq), std::sqrt(n_sq));
  r.relative_error = denom > 0 ? std::sqrt(diff_sq) / denom : 0.0;
  r.analytic_norm = std::sqrt(a_sq);
  return r;
}

}  // namespace dtg::testing
