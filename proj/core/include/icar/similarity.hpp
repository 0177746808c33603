#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "icar/numcore/ops.hpp"
#include "icar/numcore/params.hpp"
#include "icar/store.hpp"
#include "icar/synthworld.hpp"
#include "icar/types.hpp"

namespace icar::sim {

struct SimilarityConfig {
  std::size_t embedding_dim = 32;
  std::size_t patches = 4;   // feature-map rows pooled per sample
  std::size_t hidden = 64;   // feature-map width
  double gem_p = 3.0;
  double tau = 0.05;
  double w_proxy = 1.0;
  double w_triplet = 1.0;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double lr = 5e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const SimilarityConfig& c);
void from_json(const nlohmann::json& j, SimilarityConfig& c);

/// Plain-value pooling over a list of equal-length vectors.
std::vector<double> gem_avg_pool(const std::vector<std::vector<double>>& maps, double p);

/// Batched pooling: `maps` is [n * group, h] with each sample's rows
/// consecutive; returns [n, h] = (mean + GeM_p) / 2.
template <typename T>
nc::Var<T> gem_avg_pool(const nc::Var<T>& maps, std::size_t group, T p);

/// Cross-entropy over cos(embedding, proxy_c)/tau; rows are samples.
template <typename T>
nc::Var<T> normalized_softmax_loss(const nc::Var<T>& embeddings, const nc::Var<T>& proxies,
                                   std::span<const std::size_t> labels, T tau);

/// Mean over rows of ln(1 + exp(d(a,p) - d(a,n))).
template <typename T>
nc::Var<T> soft_margin_triplet_loss(const nc::Var<T>& anchor, const nc::Var<T>& positive,
                                    const nc::Var<T>& negative);

struct Triplets {
  std::vector<std::size_t> anchor, positive, negative;
};

/// Batch-hard mining on the current embeddings: farthest same-class positive
/// and nearest other-class negative per anchor. Anchors without either are
/// skipped. Ties go to the lower row.
Triplets mine_batch_hard(const nc::Tensor<double>& embeddings, std::span<const std::size_t> labels);

template <typename T>
struct SimilarityEncoder {
  SimilarityConfig config;
  std::size_t raw_dim = 0;
  std::size_t num_classes = 0;
  nc::ParamStore<T> params;
  nc::Linear<T> projection;  // raw -> patches * hidden
  nc::Linear<T> head;        // hidden -> embedding
  nc::Var<T> proxies;        // [classes, embedding], unit rows

  static SimilarityEncoder create(const SimilarityConfig& config, std::size_t raw_dim, std::size_t num_classes,
                                  Rng& rng);

  /// [n, raw_dim] -> unit-norm [n, embedding_dim].
  nc::Var<T> forward(const nc::Var<T>& raw) const;
  void renormalize_proxies();
};

struct LossParts {
  double proxy = 0;
  double triplet = 0;
  double total = 0;
};

/// The combined stage-1 objective on one batch, plus its breakdown.
template <typename T>
nc::Var<T> similarity_loss(const SimilarityEncoder<T>& enc, const nc::Tensor<T>& raw,
                           std::span<const std::size_t> labels, LossParts* parts = nullptr);

struct LabeledRaw {
  std::vector<float> raw;
  std::size_t label = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double proxy = 0;
  double triplet = 0;
  double total = 0;
};

struct TrainedEncoder {
  SimilarityEncoder<float> encoder;
  std::vector<EpochLog> log;
};

/// Throws ContractError when a class has fewer than 2 samples or a label lies
/// outside [0, num_classes).
TrainedEncoder train_similarity(const std::vector<LabeledRaw>& data, std::size_t num_classes,
                                const SimilarityConfig& config);

Embedding embed(const SimilarityEncoder<float>& enc, std::span<const float> raw);
std::vector<Embedding> embed_batch(const SimilarityEncoder<float>& enc, const std::vector<std::vector<float>>& raws);

store::Checkpoint to_checkpoint(const SimilarityEncoder<float>& enc);
SimilarityEncoder<float> from_checkpoint(const store::Checkpoint& ckpt);

/// Fraction of rows whose nearest other row (cosine) has the same label.
double recall_at_1(const std::vector<Embedding>& embeddings, std::span<const std::size_t> labels);

/// Style-labelled raws of a world: every scene and item except the scenes in
/// `held_out` (by index into world.scenes) and their items.
std::vector<LabeledRaw> stage1_training_set(const synth::World& world, const std::vector<std::size_t>& held_out = {});

/// Copy of `world` whose scene and item embeddings come from the encoder.
synth::World embed_world(const SimilarityEncoder<float>& enc, const synth::World& world);

extern template struct SimilarityEncoder<float>;
extern template struct SimilarityEncoder<double>;

}  // namespace icar::sim
