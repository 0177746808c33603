#include "icar/types.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "icar/error.hpp"

namespace icar {

std::string_view to_string(Domain d) noexcept { return d == Domain::A ? "A" : "B"; }

Domain domain_from_string(std::string_view s) {
  if (s == "A") return Domain::A;
  if (s == "B") return Domain::B;
  throw FormatError(fmt::format("unknown domain tag '{}'", s));
}

ItemPool::ItemPool(std::vector<Item> items) : items_(std::move(items)) {
  std::sort(items_.begin(), items_.end(), [](const Item& a, const Item& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const Item& it = items_[i];
    if (!by_id_.emplace(it.id.value, i).second) {
      throw ContractError(fmt::format("item pool: duplicate item id {}", it.id.value));
    }
    if (it.embedding.size() != items_.front().embedding.size()) {
      throw ContractError(fmt::format("item pool: item {} has dim {}, expected {}", it.id.value,
                                      it.embedding.size(), items_.front().embedding.size()));
    }
    if (it.category >= buckets_.size()) buckets_.resize(it.category + 1);
    buckets_[it.category].push_back(i);
  }
}

const Item* ItemPool::find(ItemId id) const {
  auto it = by_id_.find(id.value);
  return it == by_id_.end() ? nullptr : &items_[it->second];
}

const Item& ItemPool::at(ItemId id) const {
  if (const Item* item = find(id)) return *item;
  throw NotFoundError(fmt::format("unknown item id {}", id.value));
}

std::span<const std::size_t> ItemPool::in_category(std::size_t category) const {
  if (category >= buckets_.size()) return {};
  return buckets_[category];
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError(fmt::format("dot: dims {} and {}", a.size(), b.size()));
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const float> a, std::span<const float> b) {
  const double d = norm(a) * norm(b);
  return d > 0 ? dot(a, b) / d : 0.0;
}

Embedding normalized(std::span<const double> v) {
  double ss = 0;
  for (double x : v) ss += x * x;
  const double n = std::sqrt(ss);
  if (!(n > 0)) throw NumericError("normalized: zero vector");
  Embedding out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

Embedding normalized(std::span<const float> v) {
  std::vector<double> d(v.begin(), v.end());
  return normalized(std::span<const double>(d));
}

}  // namespace icar
