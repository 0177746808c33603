#include "icar/numcore/params.hpp"

#include <fmt/format.h>

#include "icar/error.hpp"
#include "icar/numcore/ops.hpp"

namespace icar::nc {

template <typename T>
Var<T> ParamStore<T>::add(std::string name, Tensor<T> init) {
  if (find(name)) throw ContractError(fmt::format("duplicate parameter name '{}'", name));
  Var<T> v = Var<T>::parameter(std::move(init));
  entries_.emplace_back(std::move(name), v);
  return v;
}

template <typename T>
std::vector<Var<T>> ParamStore<T>::vars() const {
  std::vector<Var<T>> out;
  out.reserve(entries_.size());
  for (const auto& [_, v] : entries_) out.push_back(v);
  return out;
}

template <typename T>
const Var<T>* ParamStore<T>::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.first == name) return &e.second;
  return nullptr;
}

template <typename T>
std::size_t ParamStore<T>::numel() const {
  std::size_t n = 0;
  for (const auto& [_, v] : entries_) n += v.value().numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [_, v] : entries_) v.zero_grad();
}

template <typename T>
bool ParamStore<T>::all_finite() const {
  for (const auto& [_, v] : entries_)
    if (!v.value().all_finite()) return false;
  return true;
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : t.data()) x = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Linear<T> Linear<T>::create(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                            double init_std, Rng& rng) {
  Linear l;
  l.weight = store.add(name + ".weight", normal_tensor<T>(Shape{in, out}, init_std, rng));
  l.bias = store.add(name + ".bias", Tensor<T>(Shape{1, out}));
  return l;
}

template <typename T>
Var<T> Linear<T>::operator()(const Var<T>& x) const {
  return add(matmul(x, weight), bias);
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ParamStore<T>& store, const std::string& name, std::size_t width) {
  LayerNorm n;
  n.gain = store.add(name + ".gain", Tensor<T>(Shape{1, width}, T{1}));
  n.bias = store.add(name + ".bias", Tensor<T>(Shape{1, width}));
  return n;
}

template <typename T>
Var<T> LayerNorm<T>::operator()(const Var<T>& x) const {
  return layer_norm(x, gain, bias);
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template Tensor<float> normal_tensor<float>(Shape, double, Rng&);
template Tensor<double> normal_tensor<double>(Shape, double, Rng&);

}  // namespace icar::nc
