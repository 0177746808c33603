#include "icar/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "icar/error.hpp"
#include "icar/numcore/optim.hpp"

namespace icar::sim {

using namespace icar::nc;

void to_json(nlohmann::json& j, const SimilarityConfig& c) {
  j = {{"embedding_dim", c.embedding_dim}, {"patches", c.patches}, {"hidden", c.hidden},
       {"gem_p", c.gem_p},                 {"tau", c.tau},         {"w_proxy", c.w_proxy},
       {"w_triplet", c.w_triplet},         {"epochs", c.epochs},   {"batch_size", c.batch_size},
       {"lr", c.lr},                       {"weight_decay", c.weight_decay}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SimilarityConfig& c) {
  c = SimilarityConfig{};
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("embedding_dim", c.embedding_dim);
  get("patches", c.patches);
  get("hidden", c.hidden);
  get("gem_p", c.gem_p);
  get("tau", c.tau);
  get("w_proxy", c.w_proxy);
  get("w_triplet", c.w_triplet);
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("lr", c.lr);
  get("weight_decay", c.weight_decay);
  get("seed", c.seed);
}

std::vector<double> gem_avg_pool(const std::vector<std::vector<double>>& maps, double p) {
  if (maps.empty()) throw ContractError("gem_avg_pool: empty feature map");
  if (!(p > 0)) throw ContractError("gem_avg_pool: p must be > 0");
  const std::size_t h = maps.front().size();
  std::vector<double> mean(h, 0.0), gem(h, 0.0);
  for (const auto& v : maps) {
    if (v.size() != h) throw ShapeError(fmt::format("gem_avg_pool: vector of length {} among length {}", v.size(), h));
    for (std::size_t i = 0; i < h; ++i) {
      mean[i] += v[i];
      gem[i] += p > 1 ? std::pow(std::max(v[i], 1e-6), p) : std::pow(v[i], p);
    }
  }
  const double n = static_cast<double>(maps.size());
  std::vector<double> out(h);
  for (std::size_t i = 0; i < h; ++i) out[i] = 0.5 * (mean[i] / n + std::pow(gem[i] / n, 1.0 / p));
  return out;
}

template <typename T>
Var<T> gem_avg_pool(const Var<T>& maps, std::size_t group, T p) {
  if (group == 0 || maps.rows() == 0) throw ContractError("gem_avg_pool: empty feature map");
  if (!(p > T(0))) throw ContractError("gem_avg_pool: p must be > 0");
  const Var<T> avg = group_mean_rows(maps, group);
  if (p == T(1)) return avg;
  const Var<T> base = p > T(1) ? clamp_min(maps, T(1e-6)) : maps;
  const Var<T> gem = nc::pow(group_mean_rows(nc::pow(base, p), group), T(1) / p);
  return scale(add(avg, gem), T(0.5));
}

template <typename T>
Var<T> normalized_softmax_loss(const Var<T>& embeddings, const Var<T>& proxies, std::span<const std::size_t> labels,
                               T tau) {
  if (!(tau > T(0))) throw ContractError("normalized_softmax_loss: tau must be > 0");
  for (auto l : labels) {
    if (l >= proxies.rows()) {
      throw ContractError(fmt::format("normalized_softmax_loss: label {} out of range for {} classes", l, proxies.rows()));
    }
  }
  const Var<T> logits = scale(matmul_nt(embeddings, l2_normalize_rows(proxies)), T(1) / tau);
  return cross_entropy(logits, labels);
}

template <typename T>
Var<T> soft_margin_triplet_loss(const Var<T>& anchor, const Var<T>& positive, const Var<T>& negative) {
  return mean(softplus(sub(row_distance(anchor, positive), row_distance(anchor, negative))));
}

Triplets mine_batch_hard(const Tensor<double>& e, std::span<const std::size_t> labels) {
  const std::size_t n = e.rows();
  if (labels.size() != n) throw ShapeError("mine_batch_hard: label count does not match rows");
  Triplets t;
  auto dist2 = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < e.cols(); ++k) s += (e(i, k) - e(j, k)) * (e(i, k) - e(j, k));
    return s;
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t pos = n, neg = n;
    double dp = -1, dn = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = dist2(i, j);
      if (labels[j] == labels[i]) {
        if (d > dp) dp = d, pos = j;
      } else if (neg == n || d < dn) {
        dn = d, neg = j;
      }
    }
    if (pos == n || neg == n) continue;
    t.anchor.push_back(i);
    t.positive.push_back(pos);
    t.negative.push_back(neg);
  }
  return t;
}

template <typename T>
SimilarityEncoder<T> SimilarityEncoder<T>::create(const SimilarityConfig& c, std::size_t raw_dim,
                                                  std::size_t num_classes, Rng& rng) {
  if (raw_dim == 0 || num_classes == 0 || c.embedding_dim == 0 || c.patches == 0 || c.hidden == 0) {
    throw ContractError("similarity encoder: all dimensions must be positive");
  }
  if (!(c.tau > 0)) throw ContractError("similarity encoder: tau must be > 0");
  SimilarityEncoder e;
  e.config = c;
  e.raw_dim = raw_dim;
  e.num_classes = num_classes;
  e.projection = Linear<T>::create(e.params, "projection", raw_dim, c.patches * c.hidden,
                                   1.0 / std::sqrt(static_cast<double>(raw_dim)), rng);
  e.head = Linear<T>::create(e.params, "head", c.hidden, c.embedding_dim,
                             1.0 / std::sqrt(static_cast<double>(c.hidden)), rng);
  e.proxies = e.params.add("proxies", normal_tensor<T>({num_classes, c.embedding_dim}, 1.0, rng));
  e.renormalize_proxies();
  return e;
}

template <typename T>
Var<T> SimilarityEncoder<T>::forward(const Var<T>& raw) const {
  if (raw.cols() != raw_dim) {
    throw ShapeError(fmt::format("similarity encoder: raw dim {} != {}", raw.cols(), raw_dim));
  }
  const std::size_t n = raw.rows();
  Var<T> maps = relu(reshape(projection(raw), Shape{n * config.patches, config.hidden}));
  Var<T> pooled = gem_avg_pool(maps, config.patches, static_cast<T>(config.gem_p));
  return l2_normalize_rows(head(pooled));
}

template <typename T>
void SimilarityEncoder<T>::renormalize_proxies() {
  auto& v = proxies.mutable_value();
  for (std::size_t r = 0; r < v.rows(); ++r) {
    auto row = v.row_span(r);
    T ss{0};
    for (T x : row) ss += x * x;
    const T nrm = std::sqrt(ss);
    if (!(nrm > T(0))) throw NumericError("similarity encoder: zero proxy");
    for (T& x : row) x /= nrm;
  }
}

template <typename T>
Var<T> similarity_loss(const SimilarityEncoder<T>& enc, const Tensor<T>& raw, std::span<const std::size_t> labels,
                       LossParts* parts) {
  const Var<T> emb = enc.forward(Var<T>::constant(raw));
  const Var<T> proxy = normalized_softmax_loss(emb, enc.proxies, labels, static_cast<T>(enc.config.tau));
  Var<T> total = scale(proxy, static_cast<T>(enc.config.w_proxy));
  const Triplets t = mine_batch_hard(emb.value().template cast<double>(), labels);
  double triplet_value = 0;
  if (!t.anchor.empty()) {
    const Var<T> tri = soft_margin_triplet_loss(gather_rows(emb, std::span<const std::size_t>(t.anchor)),
                                                gather_rows(emb, std::span<const std::size_t>(t.positive)),
                                                gather_rows(emb, std::span<const std::size_t>(t.negative)));
    triplet_value = static_cast<double>(tri.item());
    total = add(total, scale(tri, static_cast<T>(enc.config.w_triplet)));
  }
  if (parts) {
    parts->proxy = static_cast<double>(proxy.item());
    parts->triplet = triplet_value;
    parts->total = static_cast<double>(total.item());
  }
  return total;
}

TrainedEncoder train_similarity(const std::vector<LabeledRaw>& data, std::size_t num_classes,
                                const SimilarityConfig& config) {
  if (data.empty()) throw ContractError("train_similarity: empty dataset");
  if (config.epochs == 0) throw ContractError("train_similarity: epochs must be >= 1");
  if (config.batch_size < 2) throw ContractError("train_similarity: batch_size must be >= 2");
  std::vector<std::size_t> counts(num_classes, 0);
  const std::size_t raw_dim = data.front().raw.size();
  for (const auto& d : data) {
    if (d.label >= num_classes) {
      throw ContractError(fmt::format("train_similarity: label {} outside [0, {})", d.label, num_classes));
    }
    if (d.raw.size() != raw_dim) throw ShapeError("train_similarity: mixed raw dimensions");
    ++counts[d.label];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] < 2) {
      throw ContractError(fmt::format("train_similarity: class {} has {} sample(s); triplet mining needs >= 2", c,
                                      counts[c]));
    }
  }

  Rng init = make_rng(config.seed, {0});
  TrainedEncoder out{SimilarityEncoder<float>::create(config, raw_dim, num_classes, init), {}};
  auto& enc = out.encoder;
  const auto params = enc.params.vars();
  OptimizerState<float> opt = OptimizerState<float>::for_params(params, {0.9, 0.999, 1e-8, config.weight_decay});
  const std::size_t steps_per_epoch = (data.size() + config.batch_size - 1) / config.batch_size;
  const LrSchedule sched{config.lr, steps_per_epoch * config.epochs};

  std::vector<std::size_t> order(data.size());
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(config.seed, {1, epoch});
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log{epoch, 0, 0, 0};
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      if (end - start < 2) continue;
      Tensor<float> raw = Tensor<float>::matrix(end - start, raw_dim);
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        const auto& d = data[order[i]];
        std::copy(d.raw.begin(), d.raw.end(), raw.row_span(i - start).begin());
        labels.push_back(d.label);
      }
      LossParts parts;
      enc.params.zero_grad();
      const Var<float> loss = similarity_loss(enc, raw, labels, &parts);
      if (!std::isfinite(parts.total)) throw NumericError(fmt::format("train_similarity: loss diverged at epoch {}", epoch));
      backward(loss);
      adamw_step(params, opt, cosine_lr(std::min(step, sched.total_steps), sched));
      ++step;
      enc.renormalize_proxies();
      log.proxy += parts.proxy;
      log.triplet += parts.triplet;
      log.total += parts.total;
      ++batches;
    }
    if (batches > 0) {
      log.proxy /= static_cast<double>(batches);
      log.triplet /= static_cast<double>(batches);
      log.total /= static_cast<double>(batches);
    }
    spdlog::debug("similarity epoch {}: proxy {:.4f} triplet {:.4f} total {:.4f}", epoch, log.proxy, log.triplet,
                  log.total);
    out.log.push_back(log);
  }
  return out;
}

Embedding embed(const SimilarityEncoder<float>& enc, std::span<const float> raw) {
  if (raw.size() != enc.raw_dim) throw ShapeError(fmt::format("embed: raw dim {} != {}", raw.size(), enc.raw_dim));
  const Var<float> out = enc.forward(Var<float>::constant(Tensor<float>::row(raw)));
  const auto row = out.value().row_span(0);
  return Embedding(row.begin(), row.end());
}

std::vector<Embedding> embed_batch(const SimilarityEncoder<float>& enc, const std::vector<std::vector<float>>& raws) {
  std::vector<Embedding> out;
  out.reserve(raws.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < raws.size(); start += kChunk) {
    const std::size_t end = std::min(raws.size(), start + kChunk);
    Tensor<float> raw = Tensor<float>::matrix(end - start, enc.raw_dim);
    for (std::size_t i = start; i < end; ++i) {
      if (raws[i].size() != enc.raw_dim) throw ShapeError(fmt::format("embed: raw dim {} != {}", raws[i].size(), enc.raw_dim));
      std::copy(raws[i].begin(), raws[i].end(), raw.row_span(i - start).begin());
    }
    const Var<float> e = enc.forward(Var<float>::constant(raw));
    for (std::size_t i = 0; i < end - start; ++i) {
      const auto row = e.value().row_span(i);
      out.emplace_back(row.begin(), row.end());
    }
  }
  return out;
}

store::Checkpoint to_checkpoint(const SimilarityEncoder<float>& enc) {
  store::Checkpoint c;
  c.kind = "similarity";
  c.config = {{"encoder", enc.config}, {"raw_dim", enc.raw_dim}, {"num_classes", enc.num_classes}};
  c.config_digest = store::config_digest(c.config);
  for (const auto& [name, var] : enc.params.entries()) {
    c.tensors.push_back({name, var.shape(), var.value().storage()});
  }
  return c;
}

SimilarityEncoder<float> from_checkpoint(const store::Checkpoint& ckpt) {
  if (ckpt.kind != "similarity") throw FormatError(fmt::format("checkpoint kind '{}' is not a similarity encoder", ckpt.kind));
  const auto digest = store::config_digest(ckpt.config);
  if (digest != ckpt.config_digest) {
    throw FormatError(fmt::format("checkpoint config digest mismatch: stored {:016x}, computed {:016x}",
                                  ckpt.config_digest, digest));
  }
  Rng rng(0);
  auto enc = SimilarityEncoder<float>::create(ckpt.config.at("encoder").get<SimilarityConfig>(),
                                              ckpt.config.at("raw_dim").get<std::size_t>(),
                                              ckpt.config.at("num_classes").get<std::size_t>(), rng);
  const auto& entries = enc.params.entries();
  if (entries.size() != ckpt.tensors.size()) throw FormatError("similarity checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& t = ckpt.tensors[i];
    Var<float> v = entries[i].second;
    if (t.name != entries[i].first || t.shape != v.shape()) {
      throw FormatError(fmt::format("similarity checkpoint: tensor '{}' {} does not match '{}' {}", t.name,
                                    shape_str(t.shape), entries[i].first, shape_str(v.shape())));
    }
    v.mutable_value().storage() = t.data;
  }
  return enc;
}

double recall_at_1(const std::vector<Embedding>& e, std::span<const std::size_t> labels) {
  if (e.size() < 2 || labels.size() != e.size()) throw ContractError("recall_at_1: need >= 2 labelled rows");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    double best_sim = cosine(e[i], e[best]);
    for (std::size_t j = 0; j < e.size(); ++j) {
      if (j == i) continue;
      const double s = cosine(e[i], e[j]);
      if (s > best_sim) best_sim = s, best = j;
    }
    hit += labels[best] == labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(e.size());
}

#define ICAR_SIM_INSTANTIATE(T)                                                                             \
  template Var<T> gem_avg_pool<T>(const Var<T>&, std::size_t, T);                                           \
  template Var<T> normalized_softmax_loss<T>(const Var<T>&, const Var<T>&, std::span<const std::size_t>, T); \
  template Var<T> soft_margin_triplet_loss<T>(const Var<T>&, const Var<T>&, const Var<T>&);                 \
  template struct SimilarityEncoder<T>;                                                                     \
  template Var<T> similarity_loss<T>(const SimilarityEncoder<T>&, const Tensor<T>&, std::span<const std::size_t>, \
                                     LossParts*);

ICAR_SIM_INSTANTIATE(float)
ICAR_SIM_INSTANTIATE(double)

std::vector<LabeledRaw> stage1_training_set(const synth::World& world, const std::vector<std::size_t>& held_out) {
  std::unordered_set<std::uint64_t> scenes, items;
  for (std::size_t idx : held_out) {
    const auto& sc = world.scenes.at(idx);
    scenes.insert(sc.id);
    for (const auto& it : sc.items) items.insert(it.id.value);
  }
  std::vector<LabeledRaw> out;
  for (const auto& r : world.raw) {
    if ((r.is_scene ? scenes : items).contains(r.id)) continue;
    out.push_back({r.raw, static_cast<std::size_t>(r.label)});
  }
  return out;
}

synth::World embed_world(const SimilarityEncoder<float>& enc, const synth::World& world) {
  std::vector<std::vector<float>> raws;
  raws.reserve(world.raw.size());
  for (const auto& r : world.raw) raws.push_back(r.raw);
  const auto emb = embed_batch(enc, raws);
  std::size_t next = 0;
  return synth::with_embeddings(world, [&](const std::vector<float>&) { return emb.at(next++); });
}

}  // namespace icar::sim
