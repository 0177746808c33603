#pragma once

#include <cstdint>
#include <vector>

#include "icar/numcore/autograd.hpp"

namespace icar::nc {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Per-parameter first/second moments plus the shared step counter.
template <typename T>
struct OptimizerState {
  AdamWConfig hyper;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;

  static OptimizerState for_params(const std::vector<Var<T>>& params, AdamWConfig hyper = {});
};

/// One AdamW update with decoupled weight decay and bias-corrected moments,
/// reading gradients from the parameters. Refuses (throws NumericError,
/// nothing modified) if any gradient is non-finite.
template <typename T>
void adamw_step(const std::vector<Var<T>>& params, OptimizerState<T>& state, double lr);

struct LrSchedule {
  double initial_lr = 2e-4;
  std::uint64_t total_steps = 1;
};

/// initial_lr * (1 + cos(pi * step / total_steps)) / 2 for step in [0, total_steps].
double cosine_lr(std::uint64_t step, const LrSchedule& schedule);

extern template struct OptimizerState<float>;
extern template struct OptimizerState<double>;

}  // namespace icar::nc
