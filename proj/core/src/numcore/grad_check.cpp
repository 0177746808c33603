#include "icar/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "icar/error.hpp"

namespace icar::nc {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

GradCheckReport grad_check(const std::function<Var<double>()>& loss_fn,
                           const std::vector<std::pair<std::string, Var<double>>>& params,
                           const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw ContractError("grad_check: eps must be positive");

  const double first = loss_fn().item();
  const double second = loss_fn().item();
  if (first != second) {
    throw ContractError(fmt::format("grad_check: loss_fn is non-deterministic ({} vs {})", first, second));
  }

  for (const auto& [_, p] : params) Var<double>(p).zero_grad();
  backward(loss_fn());

  GradCheckReport report;
  const double h = options.eps;
  for (const auto& [name, p] : params) {
    Var<double> param = p;
    const Tensor<double> analytic = param.grad();
    Tensor<double>& value = param.mutable_value();
    ParamGradError err{name};
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double orig = value[i];
      auto at = [&](double offset) {
        value[i] = orig + offset;
        return loss_fn().item();
      };
      double numeric;
      if (options.five_point) {
        const double near = at(h) - at(-h);
        const double far = at(2 * h) - at(-2 * h);
        numeric = (8 * near - far) / (12 * h);
      } else {
        numeric = (at(h) - at(-h)) / (2 * h);
      }
      value[i] = orig;
      const double rel = relative_error(analytic[i], numeric);
      if (i == 0 || rel > err.max_rel_error) {
        err.max_rel_error = rel;
        err.worst_index = i;
        err.analytic = analytic[i];
        err.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, err.max_rel_error);
    report.params.push_back(std::move(err));
  }
  return report;
}

}  // namespace icar::nc
