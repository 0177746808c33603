#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace icar {

struct ItemId {
  std::uint64_t value = 0;
  friend auto operator<=>(const ItemId&, const ItemId&) = default;
};

enum class Domain : std::uint8_t { A, B };

std::string_view to_string(Domain d) noexcept;
Domain domain_from_string(std::string_view s);

/// Unit-norm float vector; the currency of both stages.
using Embedding = std::vector<float>;

struct Item {
  ItemId id;
  std::size_t category = 0;
  Domain domain = Domain::A;
  Embedding embedding;
  std::uint16_t hue_deg = 0;  // glyph colour
  int style_label = -1;       // hidden ground truth; -1 when unknown
};

struct SceneInstance {
  std::uint64_t id = 0;
  Embedding scene_embedding;
  std::vector<Item> items;
  int style_label = -1;
};

/// Cross-domain catalogue with per-category buckets. Immutable once built.
class ItemPool {
 public:
  ItemPool() = default;
  /// Throws ContractError on duplicate ids or mixed embedding dimensions.
  explicit ItemPool(std::vector<Item> items);

  const std::vector<Item>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }
  std::size_t dim() const noexcept { return items_.empty() ? 0 : items_.front().embedding.size(); }
  /// One past the largest category index present.
  std::size_t num_categories() const noexcept { return buckets_.size(); }

  const Item* find(ItemId id) const;
  const Item& at(ItemId id) const;  // NotFoundError when absent
  /// Indices into items() of every item in `category` (ascending id order).
  std::span<const std::size_t> in_category(std::size_t category) const;

 private:
  std::vector<Item> items_;
  std::vector<std::vector<std::size_t>> buckets_;
  std::unordered_map<std::uint64_t, std::size_t> by_id_;
};

double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> a);
double cosine(std::span<const float> a, std::span<const float> b);
Embedding normalized(std::span<const double> v);
Embedding normalized(std::span<const float> v);

}  // namespace icar

template <>
struct std::hash<icar::ItemId> {
  std::size_t operator()(const icar::ItemId& id) const noexcept { return std::hash<std::uint64_t>{}(id.value); }
};
