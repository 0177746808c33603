#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icar/fbt.hpp"
#include "icar/numcore/rng.hpp"
#include "icar/types.hpp"

namespace icar::train {

struct LossWeights {
  double ce = 1.0;
  double triplet = 1.0;
  double reg = 0.05;
};

enum class Masking { random_length, fixed_length };

struct TrainingExample {
  std::uint64_t scene_id = 0;
  Embedding scene;
  std::vector<Item> items;  // shuffled
  std::size_t m = 0;        // unmasked prefix length
  std::size_t target_category = 0;  // == C for STOP
  Embedding target;                 // zero vector for STOP
  std::optional<ItemId> target_id;
  std::optional<Embedding> negative;
  std::optional<ItemId> negative_id;

  bool is_stop() const noexcept { return !target_id.has_value(); }
};

struct SamplerOptions {
  Masking masking = Masking::random_length;
  std::size_t fixed_m = 1;  // unmasked length under fixed-length masking (capped at N)
};

/// Items are put in id order, then shuffled, so the draw does not depend on
/// how the scene lists them. Negatives come from `pool` (same category,
/// different id). `num_categories` is the STOP index.
TrainingExample sample_training_example(const SceneInstance& scene, const ItemPool& pool, std::size_t num_categories,
                                        Rng& rng, const SamplerOptions& options = {});

struct LossBreakdown {
  double ce = 0;
  double triplet = 0;
  double reg = 0;
  double total = 0;
  bool reg_skipped = false;

  static double weighted(double ce, double triplet, double reg, const LossWeights& w) {
    return w.ce * ce + w.triplet * triplet + w.reg * reg;
  }
};

/// Three-term objective; STOP examples contribute cross-entropy only. The
/// embedding arm is fed the one-hot target category.
template <typename T>
nc::Var<T> compute_loss(const fbt::FbtModel<T>& model, const std::vector<TrainingExample>& batch,
                        const LossWeights& weights, LossBreakdown* parts = nullptr);

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t first_epoch = 0;  // > 0 when resuming
  std::size_t batch_size = 256;
  double initial_lr = 2e-4;
  std::size_t num_negatives = 1;
  LossWeights weights;
  SamplerOptions sampler;
  nc::AdamWConfig adamw;
  std::uint64_t seed = 1;
  std::optional<std::filesystem::path> log_path;         // JSON lines, one record per epoch
  std::optional<std::filesystem::path> checkpoint_path;  // last good state, rewritten every epoch

  void validate() const;
};

/// Laptop-scale model: 2 layers, 4 heads, 64-wide tokens, 128-wide FFN.
fbt::FbtConfig desk_model_config(std::size_t num_categories, std::size_t embedding_dim, std::uint64_t seed = 1);
/// 100 epochs of batch 64 at 1e-3.
TrainConfig desk_train_config(std::uint64_t seed = 1);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double ce = 0;
  double triplet = 0;
  double reg = 0;
  double total = 0;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainResult {
  std::vector<EpochRecord> log;
  nc::OptimizerState<float> optimizer;
  bool diverged = false;
  std::string message;
};

/// Batches in epoch e are a pure function of (seed, e, scene ids), so the
/// dataset's order never matters. On a non-finite loss or gradient the model
/// is rolled back to the start of the failing epoch and training stops with
/// `diverged` set. `resume` continues from a saved optimizer state.
TrainResult train_fbt(const std::vector<SceneInstance>& scenes, const ItemPool& pool, fbt::FbtModel<float>& model,
                      const TrainConfig& config, const nc::OptimizerState<float>* resume = nullptr);

/// Examples of one epoch, in batch order.
std::vector<TrainingExample> epoch_examples(const std::vector<SceneInstance>& scenes, const ItemPool& pool,
                                            std::size_t num_categories, const TrainConfig& config, std::size_t epoch);

/// Mean loss over the examples a given epoch would draw, without training.
LossBreakdown evaluate_loss(const fbt::FbtModel<float>& model, const std::vector<SceneInstance>& scenes,
                            const ItemPool& pool, const TrainConfig& config, std::size_t epoch);

/// Permutation-marginalized log-likelihood of generating `set` for `scene`:
/// log sum over orders of prod_t p(c_t | prefix) p(item_t | c_t, prefix),
/// where p(item | c) is a softmax of cos(x_hat, e)/tau over the not yet
/// chosen pool items of category c. |set| <= 5; pool <= 64 items.
double brute_force_set_likelihood(const fbt::FbtModel<float>& model, const Embedding& scene,
                                  const std::vector<Item>& set, const ItemPool& pool, double tau = 0.1);

}  // namespace icar::train
