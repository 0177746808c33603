#include "icar/fbt.hpp"

#include <cmath>

#include <fmt/format.h>

#include "icar/error.hpp"
#include "icar/numcore/rng.hpp"

namespace icar::fbt {

using namespace icar::nc;

void FbtConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("fbt config: " + m); };
  if (num_layers == 0) fail("num_layers must be >= 1");
  if (num_heads == 0 || token_dim % num_heads != 0) {
    fail(fmt::format("token_dim {} not divisible by num_heads {}", token_dim, num_heads));
  }
  if (num_categories < 1) fail("num_categories must be >= 1");
  if (max_set_size < 1) fail("max_set_size must be >= 1");
  if (embedding_dim < 1) fail("embedding_dim must be >= 1");
  if (!(init_std > 0)) fail("init_std must be > 0");
}

void to_json(nlohmann::json& j, const FbtConfig& c) {
  j = {{"num_layers", c.num_layers},       {"num_heads", c.num_heads},   {"token_dim", c.token_dim},
       {"ffn_dim", c.ffn_dim},             {"arm_hidden", c.arm_hidden}, {"num_categories", c.num_categories},
       {"max_set_size", c.max_set_size},   {"embedding_dim", c.embedding_dim},
       {"init_std", c.init_std},           {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, FbtConfig& c) {
  c = FbtConfig{};
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("num_layers", c.num_layers);
  get("num_heads", c.num_heads);
  get("token_dim", c.token_dim);
  get("ffn_dim", c.ffn_dim);
  get("arm_hidden", c.arm_hidden);
  get("num_categories", c.num_categories);
  get("max_set_size", c.max_set_size);
  get("embedding_dim", c.embedding_dim);
  get("init_std", c.init_std);
  get("seed", c.seed);
}

namespace {

void check_embedding(const Embedding& e, std::size_t dim, const char* what) {
  if (e.size() != dim) throw ShapeError(fmt::format("build_input_sequence: {} has dim {}, expected {}", what, e.size(), dim));
  const double n = norm(e);
  if (std::abs(n - 1.0) > 1e-3) throw ShapeError(fmt::format("build_input_sequence: {} is not unit-norm (|x| = {})", what, n));
}

}  // namespace

TokenSequence build_input_sequence(const Embedding& scene, const std::vector<Embedding>& items, std::size_t m,
                                   std::size_t embedding_dim) {
  if (m > items.size()) {
    throw ContractError(fmt::format("build_input_sequence: M = {} exceeds the {} available items", m, items.size()));
  }
  check_embedding(scene, embedding_dim, "scene embedding");
  TokenSequence s;
  s.scene = scene;
  s.items.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    check_embedding(items[i], embedding_dim, "item embedding");
    s.items.push_back(items[i]);
  }
  return s;
}

template <typename T>
FbtModel<T> FbtModel<T>::create(const FbtConfig& c) {
  c.validate();
  Rng rng = make_rng(c.seed, {0xfb7});
  const double sd = c.init_std;
  FbtModel m;
  m.config = c;
  auto& P = m.params;
  m.input = Linear<T>::create(P, "input", c.embedding_dim, c.token_dim, sd, rng);
  m.mask_token = P.add("mask_token", normal_tensor<T>(Shape{1, c.token_dim}, sd, rng));
  m.query_token = P.add("query_token", normal_tensor<T>(Shape{1, c.token_dim}, sd, rng));
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string p = fmt::format("layer{}.", l);
    EncoderLayer<T> L;
    L.ln_attn = LayerNorm<T>::create(P, p + "ln_attn", c.token_dim);
    L.wq = Linear<T>::create(P, p + "wq", c.token_dim, c.token_dim, sd, rng);
    L.wk = Linear<T>::create(P, p + "wk", c.token_dim, c.token_dim, sd, rng);
    L.wv = Linear<T>::create(P, p + "wv", c.token_dim, c.token_dim, sd, rng);
    L.wo = Linear<T>::create(P, p + "wo", c.token_dim, c.token_dim, sd, rng);
    L.ln_ffn = LayerNorm<T>::create(P, p + "ln_ffn", c.token_dim);
    L.ff_in = Linear<T>::create(P, p + "ff_in", c.token_dim, c.ffn(), sd, rng);
    L.ff_out = Linear<T>::create(P, p + "ff_out", c.ffn(), c.token_dim, sd, rng);
    m.layers.push_back(L);
  }
  m.final_ln = LayerNorm<T>::create(P, "final_ln", c.token_dim);
  m.cat_hidden = Linear<T>::create(P, "category.hidden", c.token_dim, c.hidden(), sd, rng);
  m.cat_out = Linear<T>::create(P, "category.out", c.hidden(), c.num_classes(), sd, rng);
  m.emb_hidden = Linear<T>::create(P, "embedding.hidden", c.token_dim + c.num_classes(), c.hidden(), sd, rng);
  m.emb_out = Linear<T>::create(P, "embedding.out", c.hidden(), c.embedding_dim, sd, rng);
  return m;
}

template <typename T>
FbtModel<T> FbtModel<T>::clone() const {
  return convert<T>(*this);
}

template <typename U, typename T>
FbtModel<U> convert(const FbtModel<T>& model) {
  FbtModel<U> out = FbtModel<U>::create(model.config);
  const auto& src = model.params.entries();
  const auto& dst = out.params.entries();
  for (std::size_t i = 0; i < src.size(); ++i) {
    Var<U> v = dst[i].second;
    v.mutable_value() = src[i].second.value().template cast<U>();
  }
  return out;
}

template <typename T>
Var<T> fbt_forward(const FbtModel<T>& model, const std::vector<TokenSequence>& batch) {
  const auto& c = model.config;
  if (batch.empty()) throw ContractError("fbt_forward: empty batch");
  std::size_t emb_rows = 0;
  for (const auto& s : batch) emb_rows += 1 + s.items.size();
  Tensor<T> x = Tensor<T>::matrix(emb_rows, c.embedding_dim);
  std::vector<RowPick> picks;
  std::vector<Segment> segments;
  std::vector<std::size_t> query_rows;
  std::size_t er = 0, tr = 0;
  auto put = [&](const Embedding& e) {
    if (e.size() != c.embedding_dim) {
      throw ShapeError(fmt::format("fbt_forward: embedding dim {} != model dim {}", e.size(), c.embedding_dim));
    }
    std::copy(e.begin(), e.end(), x.row_span(er).begin());
    picks.push_back({0, er++});
  };
  for (const auto& s : batch) {
    put(s.scene);
    for (const auto& it : s.items) put(it);
    picks.push_back({1, 0});
    picks.push_back({2, 0});
    segments.push_back({tr, s.length()});
    tr += s.length();
    query_rows.push_back(tr - 1);
  }
  Var<T> h = assemble_rows<T>({model.input(Var<T>::constant(std::move(x))), model.mask_token, model.query_token}, picks);
  for (const auto& L : model.layers) {
    const Var<T> a = L.ln_attn(h);
    h = add(h, L.wo(attention(L.wq(a), L.wk(a), L.wv(a), segments, c.num_heads)));
    h = add(h, L.ff_out(gelu(L.ff_in(L.ln_ffn(h)))));
  }
  return gather_rows(model.final_ln(h), std::span<const std::size_t>(query_rows));
}

template <typename T>
Var<T> predict_category(const FbtModel<T>& model, const Var<T>& q) {
  if (q.cols() != model.config.token_dim) {
    throw ShapeError(fmt::format("predict_category: q' width {} != token_dim {}", q.cols(), model.config.token_dim));
  }
  return model.cat_out(gelu(model.cat_hidden(q)));
}

template <typename T>
Var<T> predict_embedding(const FbtModel<T>& model, const Var<T>& q, const Var<T>& category) {
  const auto& c = model.config;
  if (q.cols() != c.token_dim) {
    throw ShapeError(fmt::format("predict_embedding: q' width {} != token_dim {}", q.cols(), c.token_dim));
  }
  if (category.cols() != c.num_classes() || category.rows() != q.rows()) {
    throw ShapeError(fmt::format("predict_embedding: category vector {} must be [{}, {}]", shape_str(category.shape()),
                                 q.rows(), c.num_classes()));
  }
  return l2_normalize_rows(model.emb_out(gelu(model.emb_hidden(concat_cols<T>({q, category})))));
}

template <typename T>
Var<T> entropy_regularizer(const Var<T>& z) {
  if (z.rows() < 2) throw ContractError(fmt::format("entropy_regularizer: need >= 2 embeddings, got {}", z.rows()));
  return scale(mean(nc::log(clamp_min(scale(nn_distance(z), T(0.25)), T(1e-6)))), T(-1));
}

store::Checkpoint to_checkpoint(const FbtModel<float>& model, const std::optional<OptimizerState<float>>& optimizer) {
  store::Checkpoint ck;
  ck.kind = "fbt";
  ck.config = model.config;
  ck.config_digest = store::config_digest(ck.config);
  for (const auto& [name, v] : model.params.entries()) ck.tensors.push_back({name, v.shape(), v.value().storage()});
  if (optimizer) {
    store::OptimizerSnapshot o;
    o.step = optimizer->t;
    o.beta1 = optimizer->hyper.beta1;
    o.beta2 = optimizer->hyper.beta2;
    o.eps = optimizer->hyper.eps;
    o.weight_decay = optimizer->hyper.weight_decay;
    for (const auto& m : optimizer->m) o.m.push_back(m.storage());
    for (const auto& v : optimizer->v) o.v.push_back(v.storage());
    ck.optimizer = std::move(o);
  }
  return ck;
}

FbtModel<float> from_checkpoint(const store::Checkpoint& ck, OptimizerState<float>* optimizer) {
  if (ck.kind != "fbt") throw FormatError(fmt::format("checkpoint kind '{}' is not an fbt model", ck.kind));
  const auto digest = store::config_digest(ck.config);
  if (digest != ck.config_digest) {
    throw FormatError(fmt::format("config digest mismatch: checkpoint header {:016x}, stored config {:016x}",
                                  ck.config_digest, digest));
  }
  FbtModel<float> m = FbtModel<float>::create(ck.config.get<FbtConfig>());
  const auto& entries = m.params.entries();
  if (entries.size() != ck.tensors.size()) {
    throw FormatError(fmt::format("fbt checkpoint: {} tensors, model has {}", ck.tensors.size(), entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& t = ck.tensors[i];
    Var<float> v = entries[i].second;
    if (t.name != entries[i].first || t.shape != v.shape()) {
      throw FormatError(fmt::format("fbt checkpoint: tensor '{}' {} does not match '{}' {}", t.name, shape_str(t.shape),
                                    entries[i].first, shape_str(v.shape())));
    }
    v.mutable_value().storage() = t.data;
  }
  if (optimizer) {
    if (!ck.optimizer) throw FormatError("fbt checkpoint: no optimizer state stored");
    const auto& o = *ck.optimizer;
    *optimizer = OptimizerState<float>::for_params(m.params.vars(), {o.beta1, o.beta2, o.eps, o.weight_decay});
    optimizer->t = o.step;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      optimizer->m[i].storage() = o.m[i];
      optimizer->v[i].storage() = o.v[i];
    }
  }
  return m;
}

FbtModel<float> load_checkpoint(const store::Checkpoint& ck, const FbtConfig& expected, OptimizerState<float>* optimizer) {
  const auto want = store::config_digest(nlohmann::json(expected));
  if (want != ck.config_digest) {
    throw FormatError(fmt::format("config digest mismatch: expected {:016x}, checkpoint has {:016x}", want,
                                  ck.config_digest));
  }
  return from_checkpoint(ck, optimizer);
}

#define ICAR_FBT_INSTANTIATE(T)                                                                 \
  template struct FbtModel<T>;                                                                  \
  template Var<T> fbt_forward<T>(const FbtModel<T>&, const std::vector<TokenSequence>&);        \
  template Var<T> predict_category<T>(const FbtModel<T>&, const Var<T>&);                       \
  template Var<T> predict_embedding<T>(const FbtModel<T>&, const Var<T>&, const Var<T>&);       \
  template Var<T> entropy_regularizer<T>(const Var<T>&);

ICAR_FBT_INSTANTIATE(float)
ICAR_FBT_INSTANTIATE(double)
template FbtModel<float> convert<float, float>(const FbtModel<float>&);
template FbtModel<double> convert<double, float>(const FbtModel<float>&);
template FbtModel<float> convert<float, double>(const FbtModel<double>&);
template FbtModel<double> convert<double, double>(const FbtModel<double>&);

}  // namespace icar::fbt
