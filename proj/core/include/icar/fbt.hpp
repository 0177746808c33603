#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "icar/numcore/ops.hpp"
#include "icar/numcore/optim.hpp"
#include "icar/numcore/params.hpp"
#include "icar/store.hpp"
#include "icar/types.hpp"

namespace icar::fbt {

struct FbtConfig {
  std::size_t num_layers = 6;
  std::size_t num_heads = 8;
  std::size_t token_dim = 256;
  std::size_t ffn_dim = 0;     // 0 -> 4 * token_dim
  std::size_t arm_hidden = 0;  // 0 -> token_dim
  std::size_t num_categories = 8;
  std::size_t max_set_size = 9;
  std::size_t embedding_dim = 32;
  double init_std = 0.02;
  std::uint64_t seed = 1;

  std::size_t ffn() const { return ffn_dim ? ffn_dim : 4 * token_dim; }
  std::size_t hidden() const { return arm_hidden ? arm_hidden : token_dim; }
  /// Real categories plus the reserved STOP class at index num_categories.
  std::size_t num_classes() const { return num_categories + 1; }
  std::size_t stop_class() const { return num_categories; }
  void validate() const;
};

void to_json(nlohmann::json& j, const FbtConfig& c);
void from_json(const nlohmann::json& j, FbtConfig& c);

/// Scene embedding, the M unmasked items in order, then MASK and query.
struct TokenSequence {
  Embedding scene;
  std::vector<Embedding> items;

  std::size_t unmasked() const noexcept { return items.size(); }
  std::size_t length() const noexcept { return items.size() + 3; }
};

/// Keeps the first M items; never reads past them. Throws ContractError for
/// M > items.size() and ShapeError for a dimension or norm violation.
TokenSequence build_input_sequence(const Embedding& scene, const std::vector<Embedding>& items, std::size_t m,
                                   std::size_t embedding_dim);

template <typename T>
struct EncoderLayer {
  nc::LayerNorm<T> ln_attn;
  nc::Linear<T> wq, wk, wv, wo;
  nc::LayerNorm<T> ln_ffn;
  nc::Linear<T> ff_in, ff_out;
};

template <typename T>
struct FbtModel {
  FbtConfig config;
  nc::ParamStore<T> params;
  nc::Linear<T> input;  // E
  nc::Var<T> mask_token;
  nc::Var<T> query_token;
  std::vector<EncoderLayer<T>> layers;
  nc::LayerNorm<T> final_ln;
  nc::Linear<T> cat_hidden, cat_out;
  nc::Linear<T> emb_hidden, emb_out;

  /// Fresh parameters drawn from config.seed.
  static FbtModel create(const FbtConfig& config);
  /// Deep copy with independent parameter storage.
  FbtModel clone() const;
};

/// q' for every sequence of the batch: [batch, token_dim]. Sequences attend
/// only within themselves and carry no positional information.
template <typename T>
nc::Var<T> fbt_forward(const FbtModel<T>& model, const std::vector<TokenSequence>& batch);

/// [batch, token_dim] -> [batch, C + 1] logits; the last class is STOP.
template <typename T>
nc::Var<T> predict_category(const FbtModel<T>& model, const nc::Var<T>& q);

/// MLP over concat[q', category vector], L2-normalized: [batch, embedding_dim].
template <typename T>
nc::Var<T> predict_embedding(const FbtModel<T>& model, const nc::Var<T>& q, const nc::Var<T>& category);

/// -(1/N) sum_i ln(max(min_j |z_i - z_j| / 4, 1e-6)); N >= 2 rows.
template <typename T>
nc::Var<T> entropy_regularizer(const nc::Var<T>& z);

store::Checkpoint to_checkpoint(const FbtModel<float>& model,
                                const std::optional<nc::OptimizerState<float>>& optimizer = std::nullopt);
/// Rebuilds a model from the checkpoint's own config.
FbtModel<float> from_checkpoint(const store::Checkpoint& ckpt, nc::OptimizerState<float>* optimizer = nullptr);
/// As above, but first requires the checkpoint digest to equal the digest of
/// `expected`; the error names both.
FbtModel<float> load_checkpoint(const store::Checkpoint& ckpt, const FbtConfig& expected,
                                nc::OptimizerState<float>* optimizer = nullptr);

template <typename U, typename T>
FbtModel<U> convert(const FbtModel<T>& model);

extern template struct FbtModel<float>;
extern template struct FbtModel<double>;

}  // namespace icar::fbt
