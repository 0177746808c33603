#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "icar/numcore/autograd.hpp"
#include "icar/numcore/rng.hpp"

namespace icar::nc {

/// Ordered, named collection of trainable leaves. The order is the checkpoint
/// and optimizer-state order.
template <typename T>
class ParamStore {
 public:
  using Entry = std::pair<std::string, Var<T>>;

  Var<T> add(std::string name, Tensor<T> init);
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Var<T>> vars() const;
  const Var<T>* find(std::string_view name) const;
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t numel() const;
  void zero_grad();
  bool all_finite() const;

 private:
  std::vector<Entry> entries_;
};

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng);

template <typename T>
struct Linear {
  Var<T> weight;  // [in, out]
  Var<T> bias;    // [1, out]

  static Linear create(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                       double init_std, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;
  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
};

template <typename T>
struct LayerNorm {
  Var<T> gain;
  Var<T> bias;

  static LayerNorm create(ParamStore<T>& store, const std::string& name, std::size_t width);
  Var<T> operator()(const Var<T>& x) const;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template struct Linear<float>;
extern template struct Linear<double>;
extern template struct LayerNorm<float>;
extern template struct LayerNorm<double>;

}  // namespace icar::nc
