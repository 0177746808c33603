#include "icar/numcore/optim.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "icar/error.hpp"

namespace icar::nc {

template <typename T>
OptimizerState<T> OptimizerState<T>::for_params(const std::vector<Var<T>>& params, AdamWConfig hyper) {
  OptimizerState s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

template <typename T>
void adamw_step(const std::vector<Var<T>>& params, OptimizerState<T>& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError(fmt::format("adamw_step: {} parameters but {} moment slots", params.size(), state.m.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].numel() != params[i].value().numel() || state.v[i].numel() != params[i].value().numel()) {
      throw ShapeError(fmt::format("adamw_step: moment shape {} does not match parameter {}",
                                   shape_str(state.m[i].shape()), shape_str(params[i].shape())));
    }
    const Tensor<T>& g = params[i].grad();
    if (!g.all_finite()) {
      spdlog::error("adamw_step refused: non-finite gradient in parameter #{} {}", i, shape_str(g.shape()));
      throw NumericError(fmt::format("adamw_step: non-finite gradient in parameter #{}", i));
    }
  }

  const AdamWConfig& h = state.hyper;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<T> p = params[i];
    Tensor<T>& theta = p.mutable_value();
    const Tensor<T>& g = p.grad();
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    for (std::size_t j = 0; j < theta.numel(); ++j) {
      const double gj = g[j];
      const double mj = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
      const double vj = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / bc1;
      const double v_hat = vj / bc2;
      const double denom = std::sqrt(v_hat) + h.eps;
      const double update = denom > 0.0 ? m_hat / denom : 0.0;
      double th = theta[j];
      th -= lr * h.weight_decay * th;
      th -= lr * update;
      theta[j] = static_cast<T>(th);
    }
  }
}

double cosine_lr(std::uint64_t step, const LrSchedule& schedule) {
  if (schedule.total_steps == 0) throw ContractError("cosine_lr: total_steps must be positive");
  if (step > schedule.total_steps) {
    throw ContractError(fmt::format("cosine_lr: step {} outside [0, {}]", step, schedule.total_steps));
  }
  const double frac = static_cast<double>(step) / static_cast<double>(schedule.total_steps);
  return schedule.initial_lr * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adamw_step<float>(const std::vector<Var<float>>&, OptimizerState<float>&, double);
template void adamw_step<double>(const std::vector<Var<double>>&, OptimizerState<double>&, double);

}  // namespace icar::nc
