#include "icar/generator.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include <fmt/format.h>

#include "icar/error.hpp"
#include "icar/numcore/rng.hpp"

namespace icar::gen {

using namespace icar::nc;

namespace {

class FbtContext final : public QueryContext {
 public:
  FbtContext(const fbt::FbtModel<float>& model, Var<float> q) : model_(model), q_(std::move(q)) {}

  std::vector<double> category_probs() const override {
    const auto logits = fbt::predict_category(model_, q_).value();
    const auto p = softmax_values<double>(std::vector<double>(logits.data().begin(), logits.data().end()));
    return p.storage();
  }

  Embedding embedding(std::span<const double> v) const override {
    if (v.size() != model_.config.num_classes()) {
      throw ShapeError(fmt::format("category vector has length {}, expected {}", v.size(), model_.config.num_classes()));
    }
    Tensor<float> c = Tensor<float>::matrix(1, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) c[i] = static_cast<float>(v[i]);
    const auto out = fbt::predict_embedding(model_, q_, Var<float>::constant(std::move(c))).value();
    return Embedding(out.data().begin(), out.data().end());
  }

 private:
  const fbt::FbtModel<float>& model_;
  Var<float> q_;
};

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::vector<double> one_hot(std::size_t n, std::size_t i) {
  std::vector<double> v(n, 0.0);
  v.at(i) = 1.0;
  return v;
}

}  // namespace

std::unique_ptr<QueryContext> FbtCompletion::encode(const Embedding& scene, const std::vector<Embedding>& prefix) const {
  fbt::TokenSequence s{scene, prefix};
  return std::make_unique<FbtContext>(model_, fbt::fbt_forward(model_, {s}));
}

RetrievalIndex::RetrievalIndex(const ItemPool& pool) : pool_(pool) { build(); }

RetrievalIndex::RetrievalIndex(const std::vector<Item>& items) : pool_(items) { build(); }

void RetrievalIndex::build() {
  if (pool_.empty()) throw ContractError("build_index: empty pool");
  const std::size_t d = pool_.dim();
  blocks_.assign(pool_.num_categories(), {});
  for (std::size_t c = 0; c < pool_.num_categories(); ++c) {
    for (std::size_t idx : pool_.in_category(c)) {
      const auto& e = pool_.items()[idx].embedding;
      const double n = norm(e);
      for (std::size_t j = 0; j < d; ++j) blocks_[c].push_back(n > 0 ? static_cast<float>(e[j] / n) : 0.0f);
    }
  }
}

std::vector<Neighbor> RetrievalIndex::nearest(std::span<const float> query, std::size_t category, std::size_t k,
                                              const std::unordered_set<ItemId>& exclusions) const {
  if (k == 0) throw ContractError("nearest: k must be >= 1");
  if (query.size() != dim()) throw ShapeError(fmt::format("nearest: query dim {} != index dim {}", query.size(), dim()));
  const auto members = pool_.in_category(category);
  const double qn = norm(query);
  std::vector<Neighbor> hits;
  hits.reserve(members.size());
  const std::size_t d = dim();
  for (std::size_t r = 0; r < members.size(); ++r) {
    const Item& it = pool_.items()[members[r]];
    if (exclusions.contains(it.id)) continue;
    double s = 0;
    const float* row = blocks_[category].data() + r * d;
    for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(row[j]) * query[j];
    hits.push_back({it.id, category, qn > 0 ? s / qn : 0.0});
  }
  if (hits.empty()) throw ContractError(fmt::format("nearest: category {} empty", category));
  const std::size_t take = std::min(k, hits.size());
  auto better = [](const Neighbor& a, const Neighbor& b) { return a.score != b.score ? a.score > b.score : a.id < b.id; };
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(), better);
  hits.resize(take);
  return hits;
}

std::string_view to_string(Mode m) noexcept { return m == Mode::given_category ? "given" : "predict"; }

Mode mode_from_string(std::string_view s) {
  if (s == "given" || s == "given_category") return Mode::given_category;
  if (s == "predict" || s == "predict_category") return Mode::predict_category;
  throw ContractError(fmt::format("unknown mode '{}' (expected 'given' or 'predict')", s));
}

std::string_view to_string(StopReason r) noexcept {
  switch (r) {
    case StopReason::stop_token: return "stop-token";
    case StopReason::max_items: return "max";
    case StopReason::categories_exhausted: return "categories-exhausted";
    default: return "none";
  }
}

Proposal propose_next(const CompletionModel& model, const RetrievalIndex& index, const Embedding& scene,
                      const std::vector<Item>& chosen, Mode mode, const std::vector<std::size_t>& remaining,
                      std::size_t max_items, const std::unordered_set<ItemId>& exclusions, std::size_t k) {
  Proposal p;
  if (chosen.size() >= max_items) {
    p.stop = StopReason::max_items;
    return p;
  }
  if (mode == Mode::given_category && remaining.empty()) {
    p.stop = StopReason::categories_exhausted;
    return p;
  }
  const std::size_t C = model.num_categories();
  std::vector<Embedding> prefix;
  for (const auto& it : chosen) prefix.push_back(it.embedding);
  const auto ctx = model.encode(scene, prefix);
  p.category_probs = ctx->category_probs();
  if (p.category_probs.size() != C + 1) throw ShapeError("propose_next: model returned a malformed category distribution");
  std::vector<double> vec;
  if (mode == Mode::predict_category) {
    if (argmax(p.category_probs) == C) {
      p.stop = StopReason::stop_token;
      return p;
    }
    p.category = argmax(std::span<const double>(p.category_probs).first(C));
    vec = p.category_probs;
  } else {
    p.category = remaining.front();
    for (std::size_t c : remaining) {
      if (c >= C) throw ContractError(fmt::format("given category {} out of range", c));
      if (p.category_probs[c] > p.category_probs[p.category] ||
          (p.category_probs[c] == p.category_probs[p.category] && c < p.category)) {
        p.category = c;
      }
    }
    vec = one_hot(C + 1, p.category);
  }
  const Embedding x = ctx->embedding(vec);
  std::unordered_set<ItemId> excl = exclusions;
  for (const auto& it : chosen) excl.insert(it.id);
  p.ranked = index.nearest(x, p.category, k, excl);
  return p;
}

GenerationResult generate_set(const CompletionModel& model, const RetrievalIndex& index, const GenerationRequest& req) {
  if (req.max_items < 1 || req.max_items > 9) throw ContractError(fmt::format("max_items {} not in [1, 9]", req.max_items));
  if (req.mode == Mode::given_category && req.given_categories.empty()) {
    throw ContractError("given-category mode needs at least one category");
  }
  GenerationResult out;
  std::vector<Item> chosen = req.partial;
  std::vector<std::size_t> remaining = req.given_categories;
  std::sort(remaining.begin(), remaining.end());
  for (;;) {
    const Proposal p = propose_next(model, index, req.scene, chosen, req.mode, remaining, req.max_items, req.exclusions);
    if (p.stop != StopReason::none) {
      out.reason = p.stop;
      return out;
    }
    const Item& item = index.pool().at(p.ranked.front().id);
    out.items.push_back({p.category, item, p.ranked.front().score});
    chosen.push_back(item);
    if (req.mode == Mode::given_category) remaining.erase(std::find(remaining.begin(), remaining.end(), p.category));
  }
}

ItemId fitb_predict(const CompletionModel& model, const Embedding& scene, std::size_t blank_category,
                    const std::vector<Item>& context, const std::vector<Item>& candidates, std::uint64_t eval_seed,
                    Mode mode) {
  if (candidates.empty()) throw ContractError("fitb_predict: empty candidate list");
  for (const auto& c : candidates) {
    if (c.category != blank_category) {
      throw ContractError(fmt::format("fitb_predict: candidate {} not of blank category {}", c.id.value, blank_category));
    }
  }
  std::vector<Item> ctx = context;
  std::sort(ctx.begin(), ctx.end(), [](const Item& a, const Item& b) { return a.id < b.id; });
  Rng rng(eval_seed);
  std::shuffle(ctx.begin(), ctx.end(), rng);
  std::vector<Embedding> prefix;
  for (const auto& it : ctx) prefix.push_back(it.embedding);
  const auto q = model.encode(scene, prefix);
  const std::size_t C = model.num_categories();
  if (blank_category >= C) throw ContractError(fmt::format("fitb_predict: category {} out of range", blank_category));
  const Embedding x = mode == Mode::given_category ? q->embedding(one_hot(C + 1, blank_category))
                                                   : q->embedding(q->category_probs());
  const Item* best = &candidates.front();
  double best_score = cosine(x, best->embedding);
  for (const auto& c : candidates) {
    const double s = cosine(x, c.embedding);
    if (s > best_score || (s == best_score && c.id < best->id)) {
      best = &c;
      best_score = s;
    }
  }
  return best->id;
}

namespace {

class FixedContext final : public QueryContext {
 public:
  FixedContext(std::vector<double> probs, std::function<Embedding(std::span<const double>)> emb)
      : probs_(std::move(probs)), emb_(std::move(emb)) {}
  std::vector<double> category_probs() const override { return probs_; }
  Embedding embedding(std::span<const double> v) const override { return emb_(v); }

 private:
  std::vector<double> probs_;
  std::function<Embedding(std::span<const double>)> emb_;
};

}  // namespace

std::unique_ptr<QueryContext> ScriptedModel::encode(const Embedding&, const std::vector<Embedding>& prefix) const {
  const std::size_t t = prefix.size();
  if (t < targets_.size()) {
    const Embedding e = targets_[t].embedding;
    return std::make_unique<FixedContext>(one_hot(c_ + 1, targets_[t].category),
                                          [e](std::span<const double>) { return e; });
  }
  if (!never_stop_) {
    return std::make_unique<FixedContext>(one_hot(c_ + 1, c_), [](std::span<const double>) -> Embedding {
      throw ContractError("scripted model: embedding requested after STOP");
    });
  }
  const Embedding e = targets_.empty() ? Embedding{} : targets_.front().embedding;
  return std::make_unique<FixedContext>(one_hot(c_ + 1, t % c_), [e](std::span<const double>) { return e; });
}

OracleModel::OracleModel(std::size_t num_categories, const std::vector<SceneInstance>& scenes)
    : c_(num_categories), scenes_(scenes) {}

std::unique_ptr<QueryContext> OracleModel::encode(const Embedding& scene, const std::vector<Embedding>& prefix) const {
  const SceneInstance* match = nullptr;
  for (const auto& s : scenes_)
    if (s.scene_embedding == scene) match = &s;
  if (!match) throw NotFoundError("oracle model: unknown scene");
  // half the mass on the scene's t-th category (id order), the rest spread
  // over its items; STOP once the prefix is as long as the scene
  std::vector<double> probs(c_ + 1, 0.0);
  const std::size_t t = prefix.size(), n = match->items.size();
  if (t >= n) {
    probs[c_] = 1.0;
  } else {
    std::vector<const Item*> sorted;
    for (const auto& it : match->items) sorted.push_back(&it);
    std::sort(sorted.begin(), sorted.end(), [](const Item* a, const Item* b) { return a->id < b->id; });
    probs[sorted[t]->category] += 0.5;
    for (const auto* it : sorted) probs[it->category] += 0.5 / static_cast<double>(n);
  }
  return std::make_unique<FixedContext>(probs, [match, c = c_](std::span<const double> v) {
    const std::size_t cat = argmax(v.first(c));
    for (const auto& it : match->items)
      if (it.category == cat) return it.embedding;
    throw NotFoundError(fmt::format("oracle model: scene {} has no category {}", match->id, cat));
  });
}

std::unique_ptr<QueryContext> RandomModel::encode(const Embedding& scene, const std::vector<Embedding>& prefix) const {
  std::uint64_t h = seed_;
  auto mix = [&h](const Embedding& e) {
    for (float x : e) h = splitmix64(h ^ std::bit_cast<std::uint32_t>(x));
  };
  mix(scene);
  for (const auto& p : prefix) mix(p);
  std::vector<double> probs(c_ + 1, 1.0 / static_cast<double>(c_));
  probs[c_] = 0;
  const std::size_t dim = dim_;
  return std::make_unique<FixedContext>(probs, [h, dim](std::span<const double>) {
    Rng rng(h);
    std::normal_distribution<double> nd;
    std::vector<double> v(dim);
    for (auto& x : v) x = nd(rng);
    return normalized(std::span<const double>(v));
  });
}

}  // namespace icar::gen
