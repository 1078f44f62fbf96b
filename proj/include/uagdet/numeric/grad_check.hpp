#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "uagdet/numeric/rng.hpp"
#include "uagdet/numeric/tensor.hpp"

namespace uagdet {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

struct GradCheckOptions {
  double step = 1e-4;
  // Denominator floor for the relative error, so coordinates whose true
  // gradient is ~0 are judged by absolute error instead.
  double abs_floor = 1e-6;
  // 0 means every coordinate; otherwise a seeded random subset per tensor.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

/// Compares analytic gradients against central differences.
///
/// `loss_and_grad` must compute the scalar loss from the current parameter
/// values and accumulate its gradient into the params' grad tensors. Grads are
/// zeroed before the analytic pass. Parameter values are restored on return.
inline GradCheckResult finite_diff_check(std::span<const ParamRef> params,
                                         const std::function<double()>& loss_and_grad,
                                         const GradCheckOptions& opts = {}) {
  zero_grads(params);
  loss_and_grad();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.emplace_back(p.param->grad.values());

  GradCheckResult result;
  RngStream rng(opts.seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto values = params[t].param->value.data();
    std::vector<std::size_t> coords(values.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opts.max_coords_per_param != 0 && coords.size() > opts.max_coords_per_param) {
      // Partial Fisher-Yates.
      for (std::size_t i = 0; i < opts.max_coords_per_param; ++i) {
        const auto j = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(coords.size() - 1)));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(opts.max_coords_per_param);
    }
    for (std::size_t idx : coords) {
      const double saved = values[idx];
      values[idx] = saved + opts.step;
      const double f_plus = loss_and_grad();
      values[idx] = saved - opts.step;
      const double f_minus = loss_and_grad();
      values[idx] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * opts.step);
      const double a = analytic[t][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coords_checked;
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = rel;
        result.worst_param = params[t].name;
        result.worst_index = idx;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  // Leave the analytic gradient in place for callers that inspect it.
  zero_grads(params);
  loss_and_grad();
  return result;
}

}  // namespace uagdet
