#include "icar/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "icar/error.hpp"

namespace icar::train {

using namespace icar::nc;

TrainingExample sample_training_example(const SceneInstance& scene, const ItemPool& pool, std::size_t num_categories,
                                        Rng& rng, const SamplerOptions& options) {
  const std::size_t n = scene.items.size();
  if (n == 0) throw ContractError(fmt::format("sample_training_example: scene {} has no items", scene.id));
  TrainingExample ex;
  ex.scene_id = scene.id;
  ex.scene = scene.scene_embedding;
  ex.items = scene.items;
  std::sort(ex.items.begin(), ex.items.end(), [](const Item& a, const Item& b) { return a.id < b.id; });
  std::shuffle(ex.items.begin(), ex.items.end(), rng);
  if (options.masking == Masking::random_length) {
    ex.m = std::uniform_int_distribution<std::size_t>(0, n)(rng);
  } else {
    ex.m = std::min(options.fixed_m, n);
  }
  if (ex.m == n) {
    ex.target_category = num_categories;
    ex.target.assign(scene.scene_embedding.size(), 0.0f);
    return ex;
  }
  const Item& target = ex.items[ex.m];
  ex.target_category = target.category;
  ex.target = target.embedding;
  ex.target_id = target.id;
  std::vector<std::size_t> candidates;
  for (std::size_t idx : pool.in_category(target.category)) {
    if (pool.items()[idx].id != target.id) candidates.push_back(idx);
  }
  if (candidates.empty()) {
    throw ContractError(fmt::format("sample_training_example: no negative available for category {}", target.category));
  }
  const Item& neg = pool.items()[candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)]];
  ex.negative = neg.embedding;
  ex.negative_id = neg.id;
  return ex;
}

template <typename T>
Var<T> compute_loss(const fbt::FbtModel<T>& model, const std::vector<TrainingExample>& batch,
                    const LossWeights& weights, LossBreakdown* parts) {
  if (batch.size() < 2) throw ContractError(fmt::format("compute_loss: batch size {} < 2", batch.size()));
  const auto& c = model.config;
  std::vector<fbt::TokenSequence> seqs;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> live;  // non-STOP rows
  seqs.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    fbt::TokenSequence s;
    s.scene = ex.scene;
    for (std::size_t j = 0; j < ex.m; ++j) s.items.push_back(ex.items[j].embedding);
    seqs.push_back(std::move(s));
    if (ex.target_category > c.num_categories) {
      throw ContractError(fmt::format("compute_loss: target category {} out of range", ex.target_category));
    }
    labels.push_back(ex.target_category);
    if (!ex.is_stop()) live.push_back(i);
  }
  const Var<T> q = fbt::fbt_forward(model, seqs);
  const Var<T> ce = cross_entropy(fbt::predict_category(model, q), std::span<const std::size_t>(labels));
  Var<T> total = scale(ce, static_cast<T>(weights.ce));
  LossBreakdown out;
  out.ce = static_cast<double>(ce.item());
  if (!live.empty()) {
    const std::size_t n = live.size(), d = c.embedding_dim;
    Tensor<T> onehot = Tensor<T>::matrix(n, c.num_classes());
    Tensor<T> pos = Tensor<T>::matrix(n, d), neg = Tensor<T>::matrix(n, d);
    for (std::size_t r = 0; r < n; ++r) {
      const auto& ex = batch[live[r]];
      if (!ex.negative) throw ContractError(fmt::format("compute_loss: example for scene {} lacks a negative", ex.scene_id));
      onehot(r, ex.target_category) = T(1);
      for (std::size_t k = 0; k < d; ++k) {
        pos(r, k) = static_cast<T>(ex.target[k]);
        neg(r, k) = static_cast<T>((*ex.negative)[k]);
      }
    }
    const Var<T> xhat = fbt::predict_embedding(model, gather_rows(q, std::span<const std::size_t>(live)),
                                               Var<T>::constant(std::move(onehot)));
    const Var<T> anchor_pos = row_distance(xhat, Var<T>::constant(std::move(pos)));
    const Var<T> anchor_neg = row_distance(xhat, Var<T>::constant(std::move(neg)));
    const Var<T> tri = mean(softplus(sub(anchor_pos, anchor_neg)));
    out.triplet = static_cast<double>(tri.item());
    total = add(total, scale(tri, static_cast<T>(weights.triplet)));
    if (weights.reg > 0 && n >= 2) {
      const Var<T> reg = fbt::entropy_regularizer(xhat);
      out.reg = static_cast<double>(reg.item());
      total = add(total, scale(reg, static_cast<T>(weights.reg)));
    } else if (weights.reg > 0) {
      out.reg_skipped = true;
    }
  } else if (weights.reg > 0) {
    out.reg_skipped = true;
  }
  if (out.reg_skipped) spdlog::warn("compute_loss: fewer than 2 non-STOP examples in batch; regularizer skipped");
  out.total = static_cast<double>(total.item());
  if (parts) *parts = out;
  return total;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("train config: epochs must be >= 1");
  if (first_epoch >= epochs) throw ContractError("train config: first_epoch must be < epochs");
  if (batch_size < 2) throw ContractError("train config: batch_size must be >= 2");
  if (num_negatives != 1) throw ContractError("train config: only num_negatives = 1 is supported");
  if (!(initial_lr > 0)) throw ContractError("train config: initial_lr must be > 0");
  if (weights.ce < 0 || weights.triplet < 0 || weights.reg < 0) throw ContractError("train config: negative loss weight");
}

fbt::FbtConfig desk_model_config(std::size_t num_categories, std::size_t embedding_dim, std::uint64_t seed) {
  fbt::FbtConfig c;
  c.num_layers = 2;
  c.num_heads = 4;
  c.token_dim = 64;
  c.ffn_dim = 128;
  c.num_categories = num_categories;
  c.embedding_dim = embedding_dim;
  c.seed = seed;
  return c;
}

TrainConfig desk_train_config(std::uint64_t seed) {
  TrainConfig c;
  c.epochs = 100;
  c.batch_size = 64;
  c.initial_lr = 1e-3;
  c.seed = seed;
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"initial_lr", c.initial_lr},
       {"num_negatives", c.num_negatives},
       {"weights", {{"ce", c.weights.ce}, {"triplet", c.weights.triplet}, {"reg", c.weights.reg}}},
       {"masking", c.sampler.masking == Masking::random_length ? "random" : "fixed"},
       {"fixed_m", c.sampler.fixed_m},
       {"adamw",
        {{"beta1", c.adamw.beta1}, {"beta2", c.adamw.beta2}, {"eps", c.adamw.eps}, {"weight_decay", c.adamw.weight_decay}}},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  auto get = [](const nlohmann::json& o, const char* key, auto& field) {
    if (o.contains(key)) o.at(key).get_to(field);
  };
  get(j, "epochs", c.epochs);
  get(j, "batch_size", c.batch_size);
  get(j, "initial_lr", c.initial_lr);
  get(j, "num_negatives", c.num_negatives);
  get(j, "fixed_m", c.sampler.fixed_m);
  get(j, "seed", c.seed);
  if (j.contains("weights")) {
    get(j["weights"], "ce", c.weights.ce);
    get(j["weights"], "triplet", c.weights.triplet);
    get(j["weights"], "reg", c.weights.reg);
  }
  if (j.contains("adamw")) {
    const auto& a = j["adamw"];
    get(a, "beta1", c.adamw.beta1);
    get(a, "beta2", c.adamw.beta2);
    get(a, "eps", c.adamw.eps);
    get(a, "weight_decay", c.adamw.weight_decay);
  }
  if (j.contains("masking")) {
    const auto m = j.at("masking").get<std::string>();
    if (m == "random") c.sampler.masking = Masking::random_length;
    else if (m == "fixed") c.sampler.masking = Masking::fixed_length;
    else throw FormatError(fmt::format("train config: unknown masking '{}'", m));
  }
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"lr", r.lr}, {"ce", r.ce}, {"triplet", r.triplet}, {"reg", r.reg}, {"total", r.total}};
}

namespace {

// Splits n examples into ceil(n / b) batches of near-equal size, so no batch
// is a lone example when n >= 2.
std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t b) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t k = (n + b - 1) / b;
  for (std::size_t i = 0, start = 0; i < k; ++i) {
    const std::size_t len = n / k + (i < n % k ? 1 : 0);
    out.emplace_back(start, start + len);
    start += len;
  }
  return out;
}

}  // namespace

std::vector<TrainingExample> epoch_examples(const std::vector<SceneInstance>& scenes, const ItemPool& pool,
                                            std::size_t num_categories, const TrainConfig& config, std::size_t epoch) {
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  keyed.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    keyed.emplace_back(stream_seed(config.seed, {1, epoch, scenes[i].id}), i);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<TrainingExample> out;
  out.reserve(scenes.size());
  for (const auto& [key, idx] : keyed) {
    Rng rng = make_rng(config.seed, {2, scenes[idx].id, epoch});
    out.push_back(sample_training_example(scenes[idx], pool, num_categories, rng, config.sampler));
  }
  return out;
}

LossBreakdown evaluate_loss(const fbt::FbtModel<float>& model, const std::vector<SceneInstance>& scenes,
                            const ItemPool& pool, const TrainConfig& config, std::size_t epoch) {
  const auto examples = epoch_examples(scenes, pool, model.config.num_categories, config, epoch);
  if (examples.size() < 2) throw ContractError("evaluate_loss: need >= 2 scenes");
  LossBreakdown acc;
  const auto bounds = batch_bounds(examples.size(), config.batch_size);
  for (const auto& [a, b] : bounds) {
    std::vector<TrainingExample> batch(examples.begin() + static_cast<std::ptrdiff_t>(a),
                                       examples.begin() + static_cast<std::ptrdiff_t>(b));
    LossBreakdown p;
    compute_loss(model, batch, config.weights, &p);
    acc.ce += p.ce;
    acc.triplet += p.triplet;
    acc.reg += p.reg;
    acc.total += p.total;
  }
  const double k = static_cast<double>(bounds.size());
  acc.ce /= k;
  acc.triplet /= k;
  acc.reg /= k;
  acc.total /= k;
  return acc;
}

TrainResult train_fbt(const std::vector<SceneInstance>& scenes, const ItemPool& pool, fbt::FbtModel<float>& model,
                      const TrainConfig& config, const OptimizerState<float>* resume) {
  config.validate();
  if (scenes.size() < 2) throw ContractError("train_fbt: need >= 2 training scenes");
  const auto params = model.params.vars();
  TrainResult result;
  result.optimizer = resume ? *resume : OptimizerState<float>::for_params(params, config.adamw);
  auto& opt = result.optimizer;
  if (opt.m.size() != params.size()) throw ContractError("train_fbt: optimizer state does not match the model");
  const std::size_t batches = (scenes.size() + config.batch_size - 1) / config.batch_size;
  const LrSchedule sched{config.initial_lr, static_cast<std::uint64_t>(batches * config.epochs)};
  std::optional<std::ofstream> log_file;
  if (config.log_path) {
    log_file.emplace(*config.log_path, config.first_epoch == 0 ? std::ios::trunc : std::ios::app);
    if (!*log_file) throw Error(fmt::format("cannot open metrics log '{}'", config.log_path->string()));
  }

  for (std::size_t epoch = config.first_epoch; epoch < config.epochs; ++epoch) {
    std::vector<Tensor<float>> snapshot;
    for (const auto& p : params) snapshot.push_back(p.value());
    const OptimizerState<float> opt_snapshot = opt;
    auto rollback = [&](const std::string& why) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        Var<float> p = params[i];
        p.mutable_value() = snapshot[i];
      }
      opt = opt_snapshot;
      result.diverged = true;
      result.message = fmt::format("training diverged in epoch {}: {}; parameters restored to the start of the epoch",
                                   epoch, why);
      spdlog::error("{}", result.message);
    };

    const auto examples = epoch_examples(scenes, pool, model.config.num_categories, config, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cosine_lr(std::min<std::uint64_t>(opt.t, sched.total_steps), sched);
    const auto bounds = batch_bounds(examples.size(), config.batch_size);
    for (const auto& [a, b] : bounds) {
      std::vector<TrainingExample> batch(examples.begin() + static_cast<std::ptrdiff_t>(a),
                                         examples.begin() + static_cast<std::ptrdiff_t>(b));
      model.params.zero_grad();
      LossBreakdown parts;
      const Var<float> loss = compute_loss(model, batch, config.weights, &parts);
      if (!std::isfinite(parts.total)) {
        rollback("non-finite loss");
        return result;
      }
      backward(loss);
      try {
        adamw_step(params, opt, cosine_lr(std::min<std::uint64_t>(opt.t, sched.total_steps), sched));
      } catch (const NumericError& e) {
        rollback(e.what());
        return result;
      }
      rec.ce += parts.ce;
      rec.triplet += parts.triplet;
      rec.reg += parts.reg;
      rec.total += parts.total;
    }
    const double k = static_cast<double>(bounds.size());
    rec.ce /= k;
    rec.triplet /= k;
    rec.reg /= k;
    rec.total /= k;
    result.log.push_back(rec);
    spdlog::debug("fbt epoch {}: lr {:.3e} ce {:.4f} triplet {:.4f} reg {:.4f} total {:.4f}", epoch, rec.lr, rec.ce,
                  rec.triplet, rec.reg, rec.total);
    if (log_file) *log_file << to_json(rec).dump() << "\n" << std::flush;
    if (config.checkpoint_path) store::write_checkpoint(*config.checkpoint_path, fbt::to_checkpoint(model, opt));
  }
  return result;
}

double brute_force_set_likelihood(const fbt::FbtModel<float>& model, const Embedding& scene,
                                  const std::vector<Item>& set, const ItemPool& pool, double tau) {
  const std::size_t k = set.size();
  if (k == 0) throw ContractError("brute_force_set_likelihood: empty set");
  if (k > 5) throw ContractError(fmt::format("brute_force_set_likelihood: set of {} items is too large (max 5)", k));
  if (pool.size() > 64) {
    throw ContractError(fmt::format("brute_force_set_likelihood: pool of {} items is too large (max 64)", pool.size()));
  }
  if (!(tau > 0)) throw ContractError("brute_force_set_likelihood: tau must be > 0");
  for (const auto& it : set) {
    if (!pool.find(it.id)) throw NotFoundError(fmt::format("brute_force_set_likelihood: item {} not in pool", it.id.value));
  }
  const auto& c = model.config;

  // q' and the category distribution depend only on the prefix as a set
  struct PrefixState {
    Var<float> q;
    std::vector<double> log_p_cat;
  };
  std::map<unsigned, PrefixState> prefix_cache;
  auto prefix_state = [&](unsigned mask) -> const PrefixState& {
    auto it = prefix_cache.find(mask);
    if (it != prefix_cache.end()) return it->second;
    fbt::TokenSequence s;
    s.scene = scene;
    for (std::size_t i = 0; i < k; ++i)
      if (mask & (1u << i)) s.items.push_back(set[i].embedding);
    PrefixState st;
    st.q = fbt::fbt_forward(model, {s});
    const auto logits = fbt::predict_category(model, st.q).value();
    double mx = logits[0];
    for (std::size_t j = 1; j < logits.numel(); ++j) mx = std::max<double>(mx, logits[j]);
    double z = 0;
    for (std::size_t j = 0; j < logits.numel(); ++j) z += std::exp(logits[j] - mx);
    for (std::size_t j = 0; j < logits.numel(); ++j) st.log_p_cat.push_back(logits[j] - mx - std::log(z));
    return prefix_cache.emplace(mask, std::move(st)).first->second;
  };
  // log p(set[i] | category, prefix)
  std::map<std::pair<unsigned, std::size_t>, double> item_cache;
  auto log_p_item = [&](unsigned mask, std::size_t i) {
    const auto key = std::make_pair(mask, i);
    if (auto it = item_cache.find(key); it != item_cache.end()) return it->second;
    const auto& st = prefix_state(mask);
    Tensor<float> onehot = Tensor<float>::matrix(1, c.num_classes());
    onehot(0, set[i].category) = 1.0f;
    const auto xhat = fbt::predict_embedding(model, st.q, Var<float>::constant(std::move(onehot))).value();
    const std::span<const float> x = xhat.row_span(0);
    std::vector<double> logits;
    double own = 0;
    for (std::size_t idx : pool.in_category(set[i].category)) {
      const Item& cand = pool.items()[idx];
      bool chosen = false;
      for (std::size_t j = 0; j < k; ++j) chosen |= (mask & (1u << j)) && set[j].id == cand.id;
      if (chosen) continue;
      const double l = cosine(x, cand.embedding) / tau;
      if (cand.id == set[i].id) own = l;
      logits.push_back(l);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    const double v = own - mx - std::log(z);
    item_cache.emplace(key, v);
    return v;
  };

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> terms;
  do {
    double lp = 0;
    unsigned mask = 0;
    for (std::size_t i : order) {
      lp += prefix_state(mask).log_p_cat[set[i].category] + log_p_item(mask, i);
      mask |= 1u << i;
    }
    terms.push_back(lp);
  } while (std::next_permutation(order.begin(), order.end()));
  const double mx = *std::max_element(terms.begin(), terms.end());
  double z = 0;
  for (double t : terms) z += std::exp(t - mx);
  return mx + std::log(z);
}

template Var<float> compute_loss<float>(const fbt::FbtModel<float>&, const std::vector<TrainingExample>&,
                                        const LossWeights&, LossBreakdown*);
template Var<double> compute_loss<double>(const fbt::FbtModel<double>&, const std::vector<TrainingExample>&,
                                          const LossWeights&, LossBreakdown*);

}  // namespace icar::train
