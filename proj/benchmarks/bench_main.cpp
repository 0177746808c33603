#include <benchmark/benchmark.h>

#include <random>

#include "icar/fbt.hpp"
#include "icar/generator.hpp"
#include "icar/metrics/frechet.hpp"
#include "icar/numcore/ops.hpp"
#include "icar/synthworld.hpp"
#include "icar/trainer.hpp"

using namespace icar;

namespace {

Embedding unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<float> nd;
  Embedding e(dim);
  float n = 0;
  for (auto& x : e) n += (x = nd(rng)) * x;
  for (auto& x : e) x /= std::sqrt(n);
  return e;
}

const synth::World& bench_world() {
  static const synth::World w = [] {
    synth::WorldConfig c;
    c.num_scenes = 400;
    return synth::gen_world(c);
  }();
  return w;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<float> nd;
  nc::Tensor<float> a = nc::Tensor<float>::matrix(n, n), b = nc::Tensor<float>::matrix(n, n);
  for (auto& x : a.storage()) x = nd(rng);
  for (auto& x : b.storage()) x = nd(rng);
  const auto va = nc::Var<float>::constant(a), vb = nc::Var<float>::constant(b);
  for (auto _ : state) benchmark::DoNotOptimize(nc::matmul(va, vb).value().data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128);

static void BM_FbtForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto model = fbt::FbtModel<float>::create(train::desk_model_config(8, 32));
  std::mt19937_64 rng(2);
  std::vector<fbt::TokenSequence> seqs;
  for (std::size_t i = 0; i < batch; ++i) {
    std::vector<Embedding> items;
    for (std::size_t m = 0; m < 4; ++m) items.push_back(unit(rng, 32));
    seqs.push_back({unit(rng, 32), items});
  }
  for (auto _ : state) benchmark::DoNotOptimize(fbt::fbt_forward(model, seqs).value().data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_FbtForward)->Arg(1)->Arg(64);

static void BM_TrainStep(benchmark::State& state) {
  const auto& w = bench_world();
  auto tc = train::desk_train_config();
  tc.epochs = 1;
  std::vector<SceneInstance> scenes(w.scenes.begin(), w.scenes.begin() + 64);
  for (auto _ : state) {
    auto model = fbt::FbtModel<float>::create(train::desk_model_config(8, 32));
    benchmark::DoNotOptimize(train::train_fbt(scenes, w.pool_a, model, tc).log.size());
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_Nearest(benchmark::State& state) {
  const auto& w = bench_world();
  const gen::RetrievalIndex index(w.pool_b);
  std::mt19937_64 rng(3);
  std::vector<Embedding> queries;
  for (int i = 0; i < 256; ++i) queries.push_back(unit(rng, 32));
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(index.nearest(queries[i % queries.size()], i % 8, 3, {}));
    ++i;
  }
}
BENCHMARK(BM_Nearest);

static void BM_Frechet(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> a(400, std::vector<double>(dim)), b = a;
  for (auto& r : a)
    for (auto& x : r) x = nd(rng);
  for (auto& r : b)
    for (auto& x : r) x = 0.5 + nd(rng);
  const auto sa = metrics::feature_stats(a), sb = metrics::feature_stats(b);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::frechet_distance(sa, sb));
}
BENCHMARK(BM_Frechet)->Arg(32)->Arg(264)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
