#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "icar/numcore/autograd.hpp"

namespace icar::nc {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Five-point central stencil (O(eps^4)); otherwise the two-point one.
  bool five_point = true;
};

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParamGradError> params;
  double max_rel_error = 0.0;
};

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

/// Compares reverse-mode gradients of a scalar loss against central finite
/// differences. Runs in 64-bit only. Throws ContractError if two evaluations
/// of `loss_fn` at the same point differ (non-deterministic loss).
GradCheckReport grad_check(const std::function<Var<double>()>& loss_fn,
                           const std::vector<std::pair<std::string, Var<double>>>& params,
                           const GradCheckOptions& options = {});

}  // namespace icar::nc
