// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gradient_suite.hpp"
#include "icar/error.hpp"
#include "icar/fbt.hpp"
#include "icar/generator.hpp"
#include "icar/metrics/fitb.hpp"
#include "icar/metrics/frechet.hpp"
#include "icar/metrics/sfid.hpp"
#include "icar/numcore/grad_check.hpp"
#include "icar/numcore/ops.hpp"
#include "icar/similarity.hpp"
#include "icar/store.hpp"
#include "icar/synthworld.hpp"
#include "icar/trainer.hpp"
#include "jacobi.hpp"
#include "stats.hpp"

using namespace icar;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& run) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = run();
  } catch (const std::exception& e) {
    o = {false, fmt::format("threw: {}", e.what())};
  }
  if (!o.pass) ++failures;
  std::cout << fmt::format("[{}] {}: {} ({:.1f}s)", o.pass ? "PASS" : "FAIL", name, o.detail, seconds_since(t0)) << std::endl;
}

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

Embedding random_unit(std::size_t d, Rng& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> v(d);
  for (auto& x : v) x = nd(rng);
  return normalized(std::span<const double>(v));
}

fbt::FbtConfig toy_config(std::uint64_t seed) {
  fbt::FbtConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.token_dim = 16;
  c.ffn_dim = 32;
  c.num_categories = 3;
  c.embedding_dim = 8;
  c.seed = seed;
  return c;
}

// --- gradients ------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  std::set<std::string> covered;
  double worst = 0;
  std::string worst_op;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (const auto& c : testing::check_all_primitives(seed)) {
      covered.insert(c.op);
      if (c.max_rel_error > worst) {
        worst = c.max_rel_error;
        worst_op = c.op;
      }
    }
  }
  std::vector<std::string> missing;
  for (const auto& op : nc::forward_backward_ops())
    if (!covered.count(op)) missing.push_back(op);

  // full loss, toy model, batch of 4
  auto model = fbt::FbtModel<double>::create(toy_config(9));
  auto rng = make_rng(12);
  std::vector<Item> items;
  for (std::uint64_t i = 0; i < 12; ++i) items.push_back({ItemId{i}, i % 3, Domain::B, random_unit(8, rng)});
  const ItemPool pool(items);
  std::vector<train::TrainingExample> batch;
  while (batch.size() < 4) {
    const std::size_t b = batch.size();
    SceneInstance sc{b, random_unit(8, rng), {items[b], items[b + 4], items[b + 8]}};
    auto ex = train::sample_training_example(sc, pool, 3, rng);
    if (b < 3 && ex.is_stop()) continue;
    batch.push_back(std::move(ex));
  }
  const auto fbt_report = nc::grad_check([&] { return train::compute_loss(model, batch, {}); }, model.params.entries());
  double fbt_worst = 0;
  for (const auto& p : fbt_report.params) fbt_worst = std::max(fbt_worst, p.max_rel_error);
  const double secs = seconds_since(t0);
  const bool pass = worst <= 1e-6 && missing.empty() && fbt_worst <= 1e-4 && secs < 120;
  return {pass, fmt::format("{} primitives x 100 seeds, worst {:.2e} ({}) <= 1e-6; {} uncovered; fbt loss worst {:.2e} <= 1e-4; "
                            "{:.0f}s < 120s",
                            covered.size(), worst, worst_op, missing.size(), fbt_worst, secs)};
}

// --- frechet --------------------------------------------------------------

Outcome frechet_oracle() {
  const auto t0 = Clock::now();
  Rng rng = make_rng(2024);
  std::normal_distribution<double> nd;
  double worst = 0, worst_sym = 0, worst_self = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial) % 15;
    std::vector<double> ma(n), mb(n);
    for (auto& x : ma) x = nd(rng);
    for (auto& x : mb) x = nd(rng);
    const auto ca = oracle::random_spd(rng, n), cb = oracle::random_spd(rng, n);
    const metrics::FrechetStats a{n, 100, ma, ca}, b{n, 100, mb, cb};
    const double got = metrics::frechet_distance(a, b);
    const double want = oracle::frechet(ma, ca, mb, cb);
    worst = std::max(worst, std::abs(got - want) / std::max({std::abs(got), std::abs(want), 1e-12}));
    worst_sym = std::max(worst_sym, std::abs(got - metrics::frechet_distance(b, a)) / std::max(got, 1e-12));
    worst_self = std::max(worst_self, std::abs(metrics::frechet_distance(a, a)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-8 && worst_sym <= 1e-8 && worst_self <= 1e-9 && secs < 60,
          fmt::format("200 SPD pairs (dims 2-16): worst rel err {:.2e} <= 1e-8, asymmetry {:.2e}, d(a,a) <= {:.2e}", worst,
                      worst_sym, worst_self)};
}

// --- sampler --------------------------------------------------------------

Outcome sampler_chi_square() {
  auto rng0 = make_rng(5);
  std::vector<Item> items;
  for (std::uint64_t i = 0; i < 16; ++i) items.push_back({ItemId{i}, i % 4, Domain::A, random_unit(8, rng0)});
  const ItemPool pool(items);
  const std::size_t draws = 40000;
  bool pass = true;
  std::string detail;
  for (std::size_t n = 1; n <= 4; ++n) {
    SceneInstance sc{n, random_unit(8, rng0), {}};
    for (std::size_t j = 0; j < n; ++j) sc.items.push_back(items[j]);
    std::vector<std::size_t> m_counts(n + 1, 0);
    std::map<std::vector<std::uint64_t>, std::size_t> perms;
    Rng rng = make_rng(n, {0x5a});
    for (std::size_t t = 0; t < draws; ++t) {
      const auto ex = train::sample_training_example(sc, pool, 4, rng);
      ++m_counts[ex.m];
      std::vector<std::uint64_t> order;
      for (const auto& it : ex.items) order.push_back(it.id.value);
      ++perms[order];
    }
    const double chi_m = testing::chi_square(m_counts, double(draws) / double(n + 1));
    const double crit_m = testing::chi_square_critical_99(n);
    std::size_t fact = 1;
    for (std::size_t k = 2; k <= n; ++k) fact *= k;
    std::vector<std::size_t> pc;
    for (const auto& [k, v] : perms) pc.push_back(v);
    double chi_p = 0, crit_p = 0;
    if (fact > 1) {
      chi_p = testing::chi_square(pc, double(draws) / double(fact));
      crit_p = testing::chi_square_critical_99(fact - 1);
    }
    pass = pass && chi_m < crit_m && perms.size() == fact && chi_p <= crit_p;
    detail += fmt::format("{}N={} M chi2 {:.1f}<{:.1f}", n > 1 ? "; " : "", n, chi_m, crit_m);
    if (fact > 1) detail += fmt::format(" perm chi2 {:.1f}<{:.1f}", chi_p, crit_p);
  }
  return {pass, detail};
}

// --- permutation invariance -----------------------------------------------

Outcome permutation_invariance() {
  double worst = 0;
  for (std::uint64_t m = 0; m < 20; ++m) {
    auto cfg = toy_config(300 + m);
    cfg.num_layers = 1 + m % 3;
    cfg.num_heads = m % 2 ? 4 : 2;
    const auto model = fbt::FbtModel<float>::create(cfg);
    auto rng = make_rng(m, {0x9e});
    fbt::TokenSequence base{random_unit(8, rng), {}};
    for (std::size_t i = 0; i < 2 + m % 8; ++i) base.items.push_back(random_unit(8, rng));
    const auto q0 = fbt::fbt_forward(model, {base}).value();
    for (int p = 0; p < 100; ++p) {
      auto s = base;
      std::shuffle(s.items.begin(), s.items.end(), rng);
      const auto q = fbt::fbt_forward(model, {s}).value();
      for (std::size_t i = 0; i < q.numel(); ++i) worst = std::max(worst, std::abs(double(q[i]) - double(q0[i])));
    }
  }
  return {worst <= 1e-6, fmt::format("20 models x 100 shuffles, max |dq'| {:.2e} <= 1e-6", worst)};
}

// --- desk pipeline: fitb, ablations, sfid ---------------------------------

struct SeedRun {
  std::uint64_t seed = 0;
  double given_random = 0, predict_random = 0;  // random-length masking
  double given_fixed = 0, predict_fixed = 0;    // fixed-length masking
  double sfid_split = 0, sfid_model = 0, sfid_random = 0;
};

std::vector<SeedRun> desk_runs;

SeedRun desk_run(std::uint64_t seed) {
  SeedRun r;
  r.seed = seed;
  synth::WorldConfig wc;
  wc.seed = seed;
  const auto raw = synth::gen_world(wc);
  const auto split = synth::split_world(raw, 0.8, seed);

  auto t0 = Clock::now();
  sim::SimilarityConfig sc;
  sc.seed = seed;
  sc.embedding_dim = wc.embedding_dim;
  const auto stage1 = sim::train_similarity(sim::stage1_training_set(raw, split.test), wc.num_styles, sc);
  const auto world = sim::embed_world(stage1.encoder, raw);
  progress(fmt::format("seed {}: stage 1 done in {:.0f}s", seed, seconds_since(t0)));

  std::vector<SceneInstance> train_scenes, test_scenes;
  for (auto i : split.train) train_scenes.push_back(world.scenes[i]);
  for (auto i : split.test) test_scenes.push_back(world.scenes[i]);
  const auto tasks = metrics::make_fitb_tasks(test_scenes, world.pool_a, 2, seed);

  std::optional<fbt::FbtModel<float>> main_model;
  for (auto masking : {train::Masking::random_length, train::Masking::fixed_length}) {
    t0 = Clock::now();
    auto model = fbt::FbtModel<float>::create(train::desk_model_config(wc.num_categories, wc.embedding_dim, seed));
    auto tc = train::desk_train_config(seed);
    tc.sampler.masking = masking;
    const auto res = train::train_fbt(train_scenes, world.pool_a, model, tc);
    if (res.diverged) throw NumericError(res.message);
    const gen::FbtCompletion cm(model);
    const double g = metrics::fitb_eval(cm, tasks, seed, gen::Mode::given_category).accuracy;
    const double p = metrics::fitb_eval(cm, tasks, seed, gen::Mode::predict_category).accuracy;
    const bool random = masking == train::Masking::random_length;
    (random ? r.given_random : r.given_fixed) = g;
    (random ? r.predict_random : r.predict_fixed) = p;
    progress(fmt::format("seed {}: {} masking, {} epochs in {:.0f}s, fitb given {:.3f} predict {:.3f}", seed,
                         random ? "random" : "fixed", res.log.size(), seconds_since(t0), g, p));
    if (random) main_model = std::move(model);
  }

  // sfid: sets built on the first half of the test scenes, reference is the
  // ground truth of the second half
  const gen::FbtCompletion cm(*main_model);
  const gen::RetrievalIndex index(world.pool_b);
  const std::size_t half = test_scenes.size() / 2;
  std::vector<std::vector<Item>> gt_a, gt_b, model_sets, random_sets;
  for (std::size_t i = 0; i < test_scenes.size(); ++i) {
    const auto& s = test_scenes[i];
    if (i >= half) {
      gt_b.push_back(s.items);
      continue;
    }
    gt_a.push_back(s.items);
    gen::GenerationRequest req;
    req.scene = s.scene_embedding;
    req.mode = gen::Mode::given_category;
    for (const auto& it : s.items) req.given_categories.push_back(it.category);
    std::vector<Item> set;
    for (const auto& g : gen::generate_set(cm, index, req).items) set.push_back(g.item);
    model_sets.push_back(std::move(set));
    Rng rng = make_rng(seed, {0x7a4d, s.id});
    std::vector<Item> neg;
    for (const auto& it : s.items) {
      const auto members = world.pool_b.in_category(it.category);
      neg.push_back(world.pool_b.items()[members[std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng)]]);
    }
    random_sets.push_back(std::move(neg));
  }
  const metrics::GridHistogramExtractor ex;
  metrics::SfidOptions opt;
  opt.seed = seed;
  r.sfid_split = metrics::sfid(gt_a, gt_b, ex, opt).value;
  r.sfid_model = metrics::sfid(model_sets, gt_b, ex, opt).value;
  r.sfid_random = metrics::sfid(random_sets, gt_b, ex, opt).value;
  progress(fmt::format("seed {}: sfid split {:.4f} model {:.4f} random {:.4f}", seed, r.sfid_split, r.sfid_model,
                       r.sfid_random));
  return r;
}

double mean_of(const std::function<double(const SeedRun&)>& f) {
  double s = 0;
  for (const auto& r : desk_runs) s += f(r);
  return s / static_cast<double>(desk_runs.size());
}

Outcome synthetic_fitb() {
  const auto t0 = Clock::now();
  for (std::uint64_t seed : {7, 8, 9}) desk_runs.push_back(desk_run(seed));
  std::size_t ok = 0;
  std::string per;
  for (const auto& r : desk_runs) {
    ok += r.given_random >= 0.75;
    per += fmt::format("{}seed {} {:.3f}", per.empty() ? "" : ", ", r.seed, r.given_random);
  }
  const double secs = seconds_since(t0);
  return {ok >= 2 && secs < 1200,
          fmt::format("given-category, 2 candidates: {}; {}/3 seeds >= 0.75 (chance 0.50); pipeline {:.0f}s < 1200s", per, ok,
                      secs)};
}

Outcome ablations() {
  if (desk_runs.size() != 3) return {false, "desk runs unavailable"};
  const double rnd = mean_of([](const SeedRun& r) { return r.given_random; });
  const double fix = mean_of([](const SeedRun& r) { return r.given_fixed; });
  const double given = rnd;
  const double pred = mean_of([](const SeedRun& r) { return r.predict_random; });
  const double rnd_p = pred, fix_p = mean_of([](const SeedRun& r) { return r.predict_fixed; });
  return {rnd >= fix && given >= pred,
          fmt::format("(a) random-length {:.4f} {} fixed-length {:.4f} [given]; (predict-mode: {:.4f} vs {:.4f}); "
                      "(b) given {:.4f} {} predict {:.4f}; means over 3 seeds",
                      rnd, rnd >= fix ? ">=" : "<", fix, rnd_p, fix_p, given, given >= pred ? ">=" : "<", pred)};
}

Outcome sfid_ordering() {
  if (desk_runs.size() != 3) return {false, "desk runs unavailable"};
  const double split = mean_of([](const SeedRun& r) { return r.sfid_split; });
  const double model = mean_of([](const SeedRun& r) { return r.sfid_model; });
  const double random = mean_of([](const SeedRun& r) { return r.sfid_random; });
  return {model < random && split < model && split < random,
          fmt::format("means over 3 seeds: gt-split {:.4f}, model {:.4f}, random same-category {:.4f}; need split < model < random",
                      split, model, random)};
}

// --- brute-force set likelihood ------------------------------------------

Outcome likelihood_ranking() {
  // 4 categories x 4 styles; a scene is one style and 2-3 distinct categories
  constexpr std::size_t C = 4, S = 4, D = 8;
  auto rng = make_rng(77);
  std::vector<Embedding> style(S), cat(C);
  for (auto& s : style) s = random_unit(D, rng);
  for (auto& c : cat) c = random_unit(D, rng);
  std::normal_distribution<double> nd;
  std::vector<Item> items;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t s = 0; s < S; ++s) {
      std::vector<double> v(D);
      for (std::size_t k = 0; k < D; ++k) v[k] = style[s][k] + 0.7 * cat[c][k] + 0.1 * nd(rng);
      Item it{ItemId{c * S + s}, c, Domain::A, normalized(std::span<const double>(v))};
      it.style_label = static_cast<int>(s);
      items.push_back(it);
    }
  const ItemPool pool(items);
  auto make_scene = [&](std::uint64_t id) {
    const std::size_t s = rng() % S, n = 2 + rng() % 2;
    std::vector<double> v(D);
    for (std::size_t k = 0; k < D; ++k) v[k] = style[s][k] + 0.3 * nd(rng);
    SceneInstance sc{id, normalized(std::span<const double>(v)), {}};
    std::vector<std::size_t> cats(C);
    std::iota(cats.begin(), cats.end(), std::size_t{0});
    std::shuffle(cats.begin(), cats.end(), rng);
    for (std::size_t j = 0; j < n; ++j) sc.items.push_back(items[cats[j] * S + s]);
    return sc;
  };
  std::vector<SceneInstance> train_scenes, test_scenes;
  for (std::uint64_t i = 0; i < 600; ++i) train_scenes.push_back(make_scene(i));
  for (std::uint64_t i = 0; i < 100; ++i) test_scenes.push_back(make_scene(1000 + i));

  auto cfg = toy_config(3);
  cfg.num_categories = C;
  auto model = fbt::FbtModel<float>::create(cfg);
  train::TrainConfig tc;
  tc.epochs = 60;
  tc.batch_size = 32;
  tc.initial_lr = 3e-3;
  tc.seed = 3;
  const auto res = train::train_fbt(train_scenes, pool, model, tc);
  if (res.diverged) return {false, res.message};

  // rank the ground-truth set among itself and K random same-category sets
  constexpr std::size_t K = 15;
  std::vector<double> sep;
  double ll_gt = 0, ll_rand = 0;
  for (const auto& sc : test_scenes) {
    std::vector<double> scores{train::brute_force_set_likelihood(model, sc.scene_embedding, sc.items, pool)};
    ll_gt += scores[0];
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<Item> neg;
      do {
        neg.clear();
        for (const auto& it : sc.items) neg.push_back(items[it.category * S + rng() % S]);
      } while (std::equal(neg.begin(), neg.end(), sc.items.begin(), [](const Item& a, const Item& b) { return a.id == b.id; }));
      scores.push_back(train::brute_force_set_likelihood(model, sc.scene_embedding, neg, pool));
      ll_rand += scores.back() / K;
    }
    // rank 1 = most likely
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<double> rank(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = static_cast<double>(i + 1);
    const double total = static_cast<double>((K + 1) * (K + 2) / 2);
    const double rand_mean = (total - rank[0]) / static_cast<double>(K);
    sep.push_back(rand_mean - rank[0]);
  }
  const double n = static_cast<double>(sep.size());
  const double mean = std::accumulate(sep.begin(), sep.end(), 0.0) / n;
  double var = 0;
  for (double d : sep) var += (d - mean) * (d - mean);
  const double se = std::sqrt(var / (n - 1) / n);
  return {mean >= se && mean > 0,
          fmt::format("16-item pool, 100 scenes x (1 gt + {} random same-category sets): mean rank separation {:.2f} >= 1 SE "
                      "({:.2f}); mean log-lik gt {:.2f} vs random {:.2f}",
                      K, mean, se, ll_gt / n, ll_rand / n)};
}

// --- formats --------------------------------------------------------------

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

Outcome formats() {
  const auto dir = fs::temp_directory_path() / fmt::format("icar_acceptance_{}", ::getpid());
  fs::create_directories(dir);
  std::vector<std::string> problems;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };

  // embedding store
  auto rng = make_rng(31);
  store::EmbeddingStore s;
  s.dim = 16;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto e = random_unit(16, rng);
    s.append(100 + i, static_cast<std::uint32_t>(i % 5), i % 2 ? "A" : "B", e, static_cast<std::uint16_t>(i * 7 % 360), int(i % 3));
  }
  const auto sp = dir / "e.bin";
  store::write_store(sp, s);
  const auto back = store::read_store(sp);
  expect(back.count() == s.count() && std::memcmp(back.data.data(), s.data.data(), s.data.size() * 4) == 0 &&
             back.ids == s.ids && back.categories == s.categories && back.domains == s.domains,
         "store round trip");
  store::write_store(dir / "e2.bin", back);
  expect(bytes_of(sp) == bytes_of(dir / "e2.bin"), "store rewrite not byte-identical");

  const auto buf = bytes_of(sp);
  auto truncated = buf;
  truncated.resize(buf.size() - 4);
  write_bytes(sp, truncated);
  const std::string want_trunc =
      fmt::format("{}: corrupt: expected {} bytes, got {}", sp.string(), buf.size(), buf.size() - 4);
  expect(error_of([&] { store::read_store(sp); }) == want_trunc, "truncated store message");
  auto bad = buf;
  bad[0] = 'X';
  write_bytes(sp, bad);
  expect(error_of([&] { store::read_store(sp); }) == sp.string() + ": not an embedding store", "bad store magic message");

  // checkpoint
  const auto cfg = toy_config(4);
  const auto model = fbt::FbtModel<float>::create(cfg);
  const auto cp = dir / "m.ckpt";
  store::write_checkpoint(cp, fbt::to_checkpoint(model));
  const auto ckpt = store::read_checkpoint(cp);
  const auto loaded = fbt::load_checkpoint(ckpt, cfg);
  fbt::TokenSequence seq{random_unit(8, rng), {random_unit(8, rng), random_unit(8, rng)}};
  const auto qa = fbt::fbt_forward(model, {seq}).value(), qb = fbt::fbt_forward(loaded, {seq}).value();
  expect(std::memcmp(qa.data().data(), qb.data().data(), qa.numel() * sizeof(float)) == 0, "checkpoint forward not bitwise");
  store::write_checkpoint(dir / "m2.ckpt", fbt::to_checkpoint(loaded));
  expect(bytes_of(cp) == bytes_of(dir / "m2.ckpt"), "checkpoint rewrite not byte-identical");

  auto other = cfg;
  other.num_layers = 3;
  const std::string want_digest =
      fmt::format("config digest mismatch: expected {:016x}, checkpoint has {:016x}",
                  store::config_digest(nlohmann::json(other)), store::config_digest(nlohmann::json(cfg)));
  expect(error_of([&] { fbt::load_checkpoint(ckpt, other); }) == want_digest, "digest mismatch message");
  const auto cbuf = bytes_of(cp);
  auto cbad = cbuf;
  cbad[3] = '?';
  write_bytes(cp, cbad);
  expect(error_of([&] { store::read_checkpoint(cp); }) == cp.string() + ": not a checkpoint", "bad checkpoint magic message");
  auto ctrunc = cbuf;
  ctrunc.resize(cbuf.size() - 4);
  write_bytes(cp, ctrunc);
  expect(error_of([&] { store::read_checkpoint(cp); }).find(": corrupt: expected") != std::string::npos,
         "truncated checkpoint message");
  fs::remove_all(dir);

  std::string detail = "store and checkpoint round trips bitwise; truncation, magic and digest errors exact";
  if (!problems.empty()) {
    detail = "problems:";
    for (const auto& p : problems) detail += " [" + p + "]";
  }
  return {problems.empty(), detail};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  report("gradient suite", gradient_suite);
  report("frechet oracle", frechet_oracle);
  report("masking sampler chi-square", sampler_chi_square);
  report("permutation invariance", permutation_invariance);
  report("synthetic fitb", synthetic_fitb);
  report("ablation directions", ablations);
  report("sfid ordering", sfid_ordering);
  report("set likelihood ranking", likelihood_ranking);
  report("formats", formats);
  return failures;
}
