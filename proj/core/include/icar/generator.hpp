#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "icar/fbt.hpp"
#include "icar/types.hpp"

namespace icar::gen {

/// Encoded (scene, prefix) pair: one step of auto-regressive completion.
class QueryContext {
 public:
  virtual ~QueryContext() = default;
  /// Distribution over C + 1 classes, the last one being STOP.
  virtual std::vector<double> category_probs() const = 0;
  /// Next-item embedding for a length C + 1 category vector.
  virtual Embedding embedding(std::span<const double> category_vector) const = 0;
};

class CompletionModel {
 public:
  virtual ~CompletionModel() = default;
  virtual std::size_t num_categories() const = 0;
  virtual std::unique_ptr<QueryContext> encode(const Embedding& scene, const std::vector<Embedding>& prefix) const = 0;
};

/// Adapter over a trained FBT; the model must outlive it.
class FbtCompletion final : public CompletionModel {
 public:
  explicit FbtCompletion(const fbt::FbtModel<float>& model) : model_(model) {}
  std::size_t num_categories() const override { return model_.config.num_categories; }
  std::unique_ptr<QueryContext> encode(const Embedding& scene, const std::vector<Embedding>& prefix) const override;

 private:
  const fbt::FbtModel<float>& model_;
};

struct Neighbor {
  ItemId id;
  std::size_t category = 0;
  double score = 0;  // cosine similarity
};

/// Exact per-category cosine search. Immutable after construction.
class RetrievalIndex {
 public:
  /// Throws ContractError on an empty pool or duplicate ids.
  explicit RetrievalIndex(const ItemPool& pool);
  explicit RetrievalIndex(const std::vector<Item>& items);

  const ItemPool& pool() const noexcept { return pool_; }
  std::size_t dim() const noexcept { return pool_.dim(); }

  /// Top-k by descending cosine, ties by ascending id. Throws ContractError
  /// ("category N empty") when nothing is left after exclusions.
  std::vector<Neighbor> nearest(std::span<const float> query, std::size_t category, std::size_t k,
                                const std::unordered_set<ItemId>& exclusions = {}) const;

 private:
  void build();

  ItemPool pool_;
  // per category: unit-normalized rows, row-major, aligned with pool_.in_category()
  std::vector<std::vector<float>> blocks_;
};

enum class Mode { predict_category, given_category };
enum class StopReason { none, stop_token, max_items, categories_exhausted };

std::string_view to_string(Mode m) noexcept;
Mode mode_from_string(std::string_view s);
std::string_view to_string(StopReason r) noexcept;

struct GenerationRequest {
  Embedding scene;
  Mode mode = Mode::predict_category;
  std::vector<std::size_t> given_categories;  // multiset, given mode only
  std::vector<Item> partial;                  // already chosen
  std::size_t max_items = 9;                  // total set size cap, partial included
  std::unordered_set<ItemId> exclusions;
};

struct GeneratedItem {
  std::size_t category = 0;
  Item item;
  double score = 0;
};

struct GenerationResult {
  std::vector<GeneratedItem> items;  // new items only, in generation order
  StopReason reason = StopReason::none;
};

/// One completion step: the category to fill next and its ranked candidates.
struct Proposal {
  StopReason stop = StopReason::none;  // set when there is nothing to propose
  std::size_t category = 0;
  std::vector<double> category_probs;
  std::vector<Neighbor> ranked;
};

/// Shared by generate_set and interactive sessions. `chosen` is the current
/// set; `remaining` the unconsumed given categories (given mode).
Proposal propose_next(const CompletionModel& model, const RetrievalIndex& index, const Embedding& scene,
                      const std::vector<Item>& chosen, Mode mode, const std::vector<std::size_t>& remaining,
                      std::size_t max_items, const std::unordered_set<ItemId>& exclusions, std::size_t k = 1);

GenerationResult generate_set(const CompletionModel& model, const RetrievalIndex& index, const GenerationRequest& request);

/// Candidate with the highest cosine to the predicted embedding for the blank
/// (ties to the lower id). The context is put in id order and shuffled with
/// `eval_seed` before encoding.
ItemId fitb_predict(const CompletionModel& model, const Embedding& scene, std::size_t blank_category,
                    const std::vector<Item>& context, const std::vector<Item>& candidates, std::uint64_t eval_seed,
                    Mode mode = Mode::given_category);

// Stub models for tests and harnesses.

/// Emits the embeddings of `targets` in order, then STOP.
class ScriptedModel final : public CompletionModel {
 public:
  ScriptedModel(std::size_t num_categories, std::vector<Item> targets, bool never_stop = false)
      : c_(num_categories), targets_(std::move(targets)), never_stop_(never_stop) {}
  std::size_t num_categories() const override { return c_; }
  std::unique_ptr<QueryContext> encode(const Embedding& scene, const std::vector<Embedding>& prefix) const override;

 private:
  std::size_t c_;
  std::vector<Item> targets_;
  bool never_stop_;
};

/// Looks up the ground-truth item of the requested category in a known set of
/// scenes. Predicts the scene's categories in item-id order, then STOP.
class OracleModel final : public CompletionModel {
 public:
  OracleModel(std::size_t num_categories, const std::vector<SceneInstance>& scenes);
  std::size_t num_categories() const override { return c_; }
  std::unique_ptr<QueryContext> encode(const Embedding& scene, const std::vector<Embedding>& prefix) const override;

 private:
  std::size_t c_;
  std::vector<SceneInstance> scenes_;
};

/// Emits a random unit embedding per query, seeded by the query content.
class RandomModel final : public CompletionModel {
 public:
  RandomModel(std::size_t num_categories, std::size_t dim, std::uint64_t seed) : c_(num_categories), dim_(dim), seed_(seed) {}
  std::size_t num_categories() const override { return c_; }
  std::unique_ptr<QueryContext> encode(const Embedding& scene, const std::vector<Embedding>& prefix) const override;

 private:
  std::size_t c_, dim_;
  std::uint64_t seed_;
};

}  // namespace icar::gen
