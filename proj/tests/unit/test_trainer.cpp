#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <map>
#include <random>

#include "icar/error.hpp"
#include "icar/synthworld.hpp"
#include "icar/trainer.hpp"
#include "stats.hpp"

using namespace icar;
using namespace icar::nc;
using namespace icar::train;

namespace {

fbt::FbtConfig toy_config(std::size_t cats = 4, std::size_t dim = 8) {
  fbt::FbtConfig c;
  c.num_layers = 1;
  c.num_heads = 2;
  c.token_dim = 16;
  c.ffn_dim = 32;
  c.num_categories = cats;
  c.embedding_dim = dim;
  return c;
}

Embedding random_unit(std::size_t d, Rng& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> v(d);
  for (auto& x : v) x = nd(rng);
  return normalized(std::span<const double>(v));
}

struct ToyData {
  ItemPool pool;
  std::vector<SceneInstance> scenes;
};

ToyData toy_data(std::size_t n_scenes, std::uint64_t seed, std::size_t cats = 4, std::size_t dim = 8) {
  auto rng = make_rng(seed);
  std::vector<Item> items;
  for (std::uint64_t i = 0; i < 8 * cats; ++i) items.push_back({ItemId{i}, i % cats, Domain::A, random_unit(dim, rng)});
  ToyData d{ItemPool(items), {}};
  for (std::uint64_t s = 0; s < n_scenes; ++s) {
    SceneInstance sc{s, random_unit(dim, rng), {}};
    const std::size_t n = 1 + rng() % 4;
    std::vector<std::size_t> idx(items.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < n; ++j) sc.items.push_back(items[idx[j]]);
    d.scenes.push_back(std::move(sc));
  }
  return d;
}

TrainConfig small_train(std::size_t epochs = 3) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.initial_lr = 3e-3;
  return c;
}

}  // namespace

TEST_CASE("sampler: M and permutations are uniform") {
  const auto data = toy_data(0, 1);
  const std::size_t draws = 40000;
  for (std::size_t n = 1; n <= 4; ++n) {
    SceneInstance sc{7, Embedding(8, 0.0f), {}};
    for (std::size_t j = 0; j < n; ++j) sc.items.push_back(data.pool.items()[j]);
    std::vector<std::size_t> m_counts(n + 1, 0);
    std::map<std::vector<std::uint64_t>, std::size_t> perms;
    Rng rng = make_rng(n, {77});
    for (std::size_t t = 0; t < draws; ++t) {
      const auto ex = sample_training_example(sc, data.pool, 4, rng);
      ++m_counts[ex.m];
      std::vector<std::uint64_t> order;
      for (const auto& it : ex.items) order.push_back(it.id.value);
      ++perms[order];
      if (!ex.is_stop()) {
        CHECK(*ex.target_id == ex.items[ex.m].id);
        CHECK(data.pool.at(*ex.negative_id).category == ex.target_category);
        CHECK(*ex.negative_id != *ex.target_id);
      }
    }
    const double chi_m = testing::chi_square(m_counts, double(draws) / double(n + 1));
    CHECK(chi_m < testing::chi_square_critical_99(n));
    std::size_t fact = 1;
    for (std::size_t k = 2; k <= n; ++k) fact *= k;
    REQUIRE(perms.size() == fact);
    if (fact > 1) {
      std::vector<std::size_t> pc;
      for (const auto& [k, v] : perms) pc.push_back(v);
      CHECK(testing::chi_square(pc, double(draws) / double(fact)) < testing::chi_square_critical_99(fact - 1));
    }
  }
}

TEST_CASE("sampler: STOP, fixed masking, listing order, negatives") {
  const auto data = toy_data(0, 2);
  SceneInstance one{1, Embedding(8, 0.0f), {data.pool.items()[3]}};
  Rng rng = make_rng(3);
  bool saw_stop = false;
  for (int i = 0; i < 50; ++i) {
    const auto ex = sample_training_example(one, data.pool, 4, rng);
    if (ex.m == 1) {
      saw_stop = true;
      CHECK(ex.is_stop());
      CHECK(ex.target_category == 4);
      CHECK(std::all_of(ex.target.begin(), ex.target.end(), [](float x) { return x == 0.0f; }));
      CHECK(!ex.negative);
    }
  }
  CHECK(saw_stop);

  SceneInstance three{2, Embedding(8, 0.0f), {data.pool.items()[0], data.pool.items()[1], data.pool.items()[2]}};
  SamplerOptions fixed{Masking::fixed_length, 1};
  for (int i = 0; i < 20; ++i) CHECK(sample_training_example(three, data.pool, 4, rng, fixed).m == 1);
  fixed.fixed_m = 7;
  CHECK(sample_training_example(three, data.pool, 4, rng, fixed).is_stop());

  auto reversed = three;
  std::reverse(reversed.items.begin(), reversed.items.end());
  Rng r1 = make_rng(9), r2 = make_rng(9);
  const auto a = sample_training_example(three, data.pool, 4, r1);
  const auto b = sample_training_example(reversed, data.pool, 4, r2);
  CHECK(a.m == b.m);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.items[i].id == b.items[i].id);

  const ItemPool lonely(std::vector<Item>{data.pool.items()[0], data.pool.items()[1]});
  SceneInstance sc{3, Embedding(8, 0.0f), {data.pool.items()[0], data.pool.items()[1]}};
  SamplerOptions zero{Masking::fixed_length, 0};
  try {
    (void)sample_training_example(sc, lonely, 4, rng, zero);
    FAIL("expected an error");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("category") != std::string::npos);
  }
  CHECK_THROWS_AS(sample_training_example(SceneInstance{4, {}, {}}, lonely, 4, rng), ContractError);
}

TEST_CASE("loss weighting") {
  CHECK(LossBreakdown::weighted(0.5, 0.2, 1.0, LossWeights{}) == doctest::Approx(0.75));
  const auto data = toy_data(16, 4);
  const auto model = fbt::FbtModel<float>::create(toy_config());
  Rng rng = make_rng(5);
  std::vector<TrainingExample> batch;
  for (const auto& sc : data.scenes) batch.push_back(sample_training_example(sc, data.pool, 4, rng));
  LossBreakdown p;
  const double total = compute_loss(model, batch, LossWeights{}, &p).item();
  CHECK(total == doctest::Approx(LossBreakdown::weighted(p.ce, p.triplet, p.reg, LossWeights{})).epsilon(1e-5));
  CHECK(p.ce >= 0);
  CHECK(p.triplet >= 0);
  CHECK(p.reg >= 0);
  CHECK(compute_loss(model, batch, LossWeights{0, 0, 0}).item() == 0.0f);
  CHECK_THROWS_AS(compute_loss(model, std::vector<TrainingExample>(batch.begin(), batch.begin() + 1), LossWeights{}),
                  ContractError);

  std::vector<TrainingExample> stops;
  SceneInstance one{1, data.scenes[0].scene_embedding, {data.pool.items()[0]}};
  while (stops.size() < 3) {
    auto ex = sample_training_example(one, data.pool, 4, rng);
    if (ex.is_stop()) stops.push_back(std::move(ex));
  }
  compute_loss(model, stops, LossWeights{}, &p);
  CHECK(p.reg_skipped);
  CHECK(p.triplet == 0);
  CHECK(p.total == doctest::Approx(p.ce));
}

TEST_CASE("config contract and json") {
  auto c = small_train();
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = small_train();
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ContractError);
  const auto data = toy_data(8, 6);
  auto model = fbt::FbtModel<float>::create(toy_config());
  c = small_train();
  c.epochs = 0;
  CHECK_THROWS_AS(train_fbt(data.scenes, data.pool, model, c), ContractError);

  TrainConfig d;
  CHECK(d.epochs == 500);
  CHECK(d.batch_size == 256);
  CHECK(d.initial_lr == 2e-4);
  CHECK(d.weights.reg == 0.05);
  d.sampler.masking = Masking::fixed_length;
  const nlohmann::json j = d;
  CHECK(j["masking"] == "fixed");
  CHECK(j.get<TrainConfig>().sampler.masking == Masking::fixed_length);
}

TEST_CASE("training is deterministic, logs, and lowers the loss") {
  const auto data = toy_data(64, 7);
  auto cfg = small_train(20);
  const auto log_path = std::filesystem::temp_directory_path() / "icar_test_trainer.jsonl";
  cfg.log_path = log_path;
  auto m1 = fbt::FbtModel<float>::create(toy_config());
  auto m2 = fbt::FbtModel<float>::create(toy_config());
  const double before = evaluate_loss(m1, data.scenes, data.pool, cfg, 0).total;
  const auto r1 = train_fbt(data.scenes, data.pool, m1, cfg);
  cfg.log_path.reset();
  const auto r2 = train_fbt(data.scenes, data.pool, m2, cfg);
  REQUIRE(r1.log.size() == 20);
  CHECK_FALSE(r1.diverged);
  for (std::size_t e = 0; e < 20; ++e) CHECK(r1.log[e].total == r2.log[e].total);
  CHECK(r1.log.back().lr < r1.log.front().lr);
  const double after = evaluate_loss(m1, data.scenes, data.pool, cfg, 0).total;
  CHECK(after < before);

  std::ifstream in(log_path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"epoch", "lr", "ce", "triplet", "reg", "total"}) CHECK(j.contains(k));
    ++lines;
  }
  CHECK(lines == 20);
  std::filesystem::remove(log_path);
}

TEST_CASE("expected loss does not depend on dataset order") {
  const auto data = toy_data(40, 8);
  const auto model = fbt::FbtModel<float>::create(toy_config());
  auto cfg = small_train();
  cfg.batch_size = 40;
  auto shuffled = data.scenes;
  Rng rng = make_rng(1);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  for (auto& sc : shuffled) std::reverse(sc.items.begin(), sc.items.end());
  for (std::size_t epoch = 0; epoch < 3; ++epoch) {
    const double a = evaluate_loss(model, data.scenes, data.pool, cfg, epoch).total;
    const double b = evaluate_loss(model, shuffled, data.pool, cfg, epoch).total;
    CHECK(a == doctest::Approx(b).epsilon(1e-6));
  }
}

TEST_CASE("divergence rolls back to the last good state") {
  auto data = toy_data(16, 9);
  auto model = fbt::FbtModel<float>::create(toy_config());
  const auto initial = fbt::to_checkpoint(model);
  data.scenes[5].scene_embedding[0] = std::numeric_limits<float>::quiet_NaN();
  const auto r = train_fbt(data.scenes, data.pool, model, small_train());
  CHECK(r.diverged);
  CHECK(r.message.find("epoch 0") != std::string::npos);
  CHECK(r.log.empty());
  const auto after = fbt::to_checkpoint(model);
  for (std::size_t i = 0; i < initial.tensors.size(); ++i) CHECK(after.tensors[i].data == initial.tensors[i].data);
}

TEST_CASE("checkpoint resume continues identically") {
  const auto data = toy_data(32, 10);
  auto cfg = small_train(4);
  auto model = fbt::FbtModel<float>::create(toy_config());
  cfg.epochs = 2;
  auto first = train_fbt(data.scenes, data.pool, model, cfg);
  const auto path = std::filesystem::temp_directory_path() / "icar_test_resume.ckpt";
  store::write_checkpoint(path, fbt::to_checkpoint(model, first.optimizer));
  OptimizerState<float> opt;
  auto loaded = fbt::load_checkpoint(store::read_checkpoint(path), toy_config(), &opt);
  CHECK(evaluate_loss(loaded, data.scenes, data.pool, cfg, 2).total ==
        evaluate_loss(model, data.scenes, data.pool, cfg, 2).total);
  cfg.epochs = 4;
  cfg.first_epoch = 2;
  const auto a = train_fbt(data.scenes, data.pool, model, cfg, &first.optimizer);
  const auto b = train_fbt(data.scenes, data.pool, loaded, cfg, &opt);
  REQUIRE(a.log.size() == 2);
  REQUIRE(b.log.size() == 2);
  CHECK(a.log[0].epoch == 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(a.log[i].total == b.log[i].total);
  std::filesystem::remove(path);
}

TEST_CASE("brute-force set likelihood expands over orders") {
  const auto cfg = toy_config();
  const auto model = fbt::FbtModel<float>::create(cfg);
  const auto data = toy_data(1, 11);
  const double tau = 0.1;
  const Embedding scene = data.scenes[0].scene_embedding;

  auto step = [&](const std::vector<Item>& prefix, const Item& next) {
    fbt::TokenSequence s{scene, {}};
    for (const auto& p : prefix) s.items.push_back(p.embedding);
    const auto q = fbt::fbt_forward(model, {s});
    const auto logits = fbt::predict_category(model, q).value();
    double z = 0;
    for (float l : logits.data()) z += std::exp(double(l));
    const double pc = std::exp(double(logits[next.category])) / z;
    Tensor<float> oh = Tensor<float>::matrix(1, cfg.num_classes());
    oh(0, next.category) = 1;
    const auto x = fbt::predict_embedding(model, q, Var<float>::constant(oh)).value();
    double zi = 0, own = 0;
    for (const auto& cand : data.pool.items()) {
      if (cand.category != next.category) continue;
      if (std::any_of(prefix.begin(), prefix.end(), [&](const Item& p) { return p.id == cand.id; })) continue;
      const double e = std::exp(cosine(x.row_span(0), cand.embedding) / tau);
      zi += e;
      if (cand.id == next.id) own = e;
    }
    return pc * own / zi;
  };

  const Item& a = data.pool.items()[1];
  const Item& b = data.pool.items()[6];
  const Item& b2 = data.pool.items()[10];  // same category as b
  CHECK(brute_force_set_likelihood(model, scene, {a}, data.pool, tau) == doctest::Approx(std::log(step({}, a))).epsilon(1e-5));
  const double two = step({}, a) * step({a}, b) + step({}, b) * step({b}, a);
  CHECK(brute_force_set_likelihood(model, scene, {a, b}, data.pool, tau) == doctest::Approx(std::log(two)).epsilon(1e-5));
  const double same = step({}, b) * step({b}, b2) + step({}, b2) * step({b2}, b);
  CHECK(brute_force_set_likelihood(model, scene, {b2, b}, data.pool, tau) == doctest::Approx(std::log(same)).epsilon(1e-5));

  std::vector<Item> six(data.pool.items().begin(), data.pool.items().begin() + 6);
  CHECK_THROWS_AS(brute_force_set_likelihood(model, scene, six, data.pool), ContractError);
}
