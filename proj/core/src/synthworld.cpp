#include "icar/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "icar/error.hpp"
#include "icar/metrics/frechet.hpp"
#include "icar/numcore/rng.hpp"
#include "icar/store.hpp"

namespace icar::synth {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// stream keys
enum : std::uint64_t { kCentres = 1, kMaps, kScenes, kCatalogue, kRaw, kSplit };

Mat gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> nd(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
  return m;
}

Mat random_rotation(Rng& rng, Eigen::Index n) {
  Eigen::HouseholderQR<Mat> qr(gaussian(rng, n, n, 1.0));
  Mat q = qr.householderQ();
  // fix column signs so the factorization is unique
  const Mat r = qr.matrixQR();
  for (Eigen::Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

Embedding to_embedding(const Vec& v) {
  std::vector<double> d(v.data(), v.data() + v.size());
  return normalized(std::span<const double>(d));
}

struct Latents {
  std::vector<Vec> centres;
  Mat shared;
  std::vector<Mat> per_category;  // W_c = shared + mix * G_c
  Mat scene_map;                  // U
  Mat rotation;                   // R
  std::vector<Vec> shift_dirs;    // unit directions of the B shift
  Vec hue_axis;                   // unit latent direction driving hue jitter
};

Latents draw_latents(const WorldConfig& c) {
  const auto k = static_cast<Eigen::Index>(c.latent_dim);
  const auto d = static_cast<Eigen::Index>(c.embedding_dim);
  Latents L;
  Rng cr = make_rng(c.seed, {kCentres});
  for (std::size_t s = 0; s < c.num_styles; ++s) L.centres.push_back(gaussian(cr, k, 1, 1.0).col(0));
  Rng mr = make_rng(c.seed, {kMaps});
  const double w = 1.0 / std::sqrt(static_cast<double>(k));
  L.shared = gaussian(mr, d, k, w);
  for (std::size_t cat = 0; cat < c.num_categories; ++cat)
    L.per_category.push_back(L.shared + c.category_mix * gaussian(mr, d, k, w));
  L.scene_map = gaussian(mr, d, k, w);
  L.rotation = random_rotation(mr, d);
  for (std::size_t cat = 0; cat < c.num_categories; ++cat) {
    const Vec u = gaussian(mr, d, 1, 1.0).col(0);
    L.shift_dirs.push_back(u.normalized());
  }
  L.hue_axis = gaussian(mr, k, 1, 1.0).col(0).normalized();
  return L;
}

Vec style_latent(const Latents& L, const WorldConfig& c, std::size_t style, Rng& rng) {
  return L.centres[style] + gaussian(rng, static_cast<Eigen::Index>(c.latent_dim), 1, c.style_spread).col(0);
}

std::uint16_t hue_of(const Latents& L, const WorldConfig& c, std::size_t style, const Vec& s) {
  const double base = 360.0 * static_cast<double>(style) / static_cast<double>(c.num_styles);
  const double jitter = 20.0 * std::tanh(L.hue_axis.dot(s - L.centres[style]) / c.style_spread);
  const double h = std::fmod(base + jitter + 360.0, 360.0);
  return static_cast<std::uint16_t>(std::lround(h) % 360);
}

std::vector<Item> catalogue(const Latents& L, const WorldConfig& c, double shift, std::uint64_t first_id) {
  std::vector<Item> out;
  const auto d = static_cast<Eigen::Index>(c.embedding_dim);
  const double magnitude = shift * std::sqrt(static_cast<double>(c.latent_dim));
  std::uint64_t id = first_id;
  for (std::size_t cat = 0; cat < c.num_categories; ++cat) {
    for (std::size_t j = 0; j < c.items_per_category; ++j, ++id) {
      Rng rng = make_rng(c.seed, {kCatalogue, cat, j});
      const auto style = std::uniform_int_distribution<std::size_t>(0, c.num_styles - 1)(rng);
      const Vec s = style_latent(L, c, style, rng);
      const Vec e = L.rotation * (L.per_category[cat] * s) + magnitude * L.shift_dirs[cat] +
                    gaussian(rng, d, 1, c.noise).col(0);
      Item it;
      it.id = ItemId{id};
      it.category = cat;
      it.domain = Domain::B;
      it.embedding = to_embedding(e);
      it.hue_deg = hue_of(L, c, style, s);
      it.style_label = static_cast<int>(style);
      out.push_back(std::move(it));
    }
  }
  return out;
}

}  // namespace

void WorldConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("world config: " + m); };
  if (num_styles < 2) fail("num_styles must be >= 2");
  if (latent_dim < 1 || embedding_dim < 2) fail("latent_dim >= 1 and embedding_dim >= 2 required");
  if (num_categories < 1) fail("num_categories must be >= 1");
  if (min_items < 2 || min_items > max_items || max_items > 9) fail("items per scene must satisfy 2 <= min <= max <= 9");
  if (!repeat_categories && min_items > num_categories) fail("min_items exceeds num_categories without repeats");
  if (items_per_category < 2) fail("items_per_category must be >= 2");
  if (num_scenes < 2) fail("num_scenes must be >= 2");
  if (raw_dim <= embedding_dim) fail("raw_dim must exceed embedding_dim");
  if (!(theta > 0)) fail("theta must be > 0");
  if (!(noise >= 0) || !(style_spread > 0) || !(nuisance >= 0) || !(domain_shift >= 0)) fail("negative scale");
}

void to_json(nlohmann::json& j, const WorldConfig& c) {
  j = {{"num_styles", c.num_styles},       {"latent_dim", c.latent_dim},
       {"num_categories", c.num_categories}, {"items_per_category", c.items_per_category},
       {"num_scenes", c.num_scenes},       {"min_items", c.min_items},
       {"max_items", c.max_items},         {"repeat_categories", c.repeat_categories},
       {"embedding_dim", c.embedding_dim}, {"raw_dim", c.raw_dim},
       {"style_spread", c.style_spread},   {"category_mix", c.category_mix},
       {"noise", c.noise},                 {"domain_shift", c.domain_shift},
       {"nuisance", c.nuisance},           {"theta", c.theta},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, WorldConfig& c) {
  WorldConfig d;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  c = d;
  get("num_styles", c.num_styles);
  get("latent_dim", c.latent_dim);
  get("num_categories", c.num_categories);
  get("items_per_category", c.items_per_category);
  get("num_scenes", c.num_scenes);
  get("min_items", c.min_items);
  get("max_items", c.max_items);
  get("repeat_categories", c.repeat_categories);
  get("embedding_dim", c.embedding_dim);
  get("raw_dim", c.raw_dim);
  get("style_spread", c.style_spread);
  get("category_mix", c.category_mix);
  get("noise", c.noise);
  get("domain_shift", c.domain_shift);
  get("nuisance", c.nuisance);
  get("theta", c.theta);
  get("seed", c.seed);
}

World gen_world(const WorldConfig& c) {
  c.validate();
  const Latents L = draw_latents(c);
  const auto d = static_cast<Eigen::Index>(c.embedding_dim);

  World w;
  w.config = c;
  std::vector<Item> pool_a;
  std::uint64_t next_id = 0;
  const std::size_t max_n = c.repeat_categories ? c.max_items : std::min(c.max_items, c.num_categories);
  for (std::uint64_t sid = 0; sid < c.num_scenes; ++sid) {
    Rng rng = make_rng(c.seed, {kScenes, sid});
    SceneInstance scene;
    scene.id = sid;
    const auto style = std::uniform_int_distribution<std::size_t>(0, c.num_styles - 1)(rng);
    scene.style_label = static_cast<int>(style);
    const Vec s = style_latent(L, c, style, rng);
    scene.scene_embedding = to_embedding(L.scene_map * s + gaussian(rng, d, 1, c.noise).col(0));
    const auto n = std::uniform_int_distribution<std::size_t>(c.min_items, max_n)(rng);
    std::vector<std::size_t> cats;
    if (c.repeat_categories) {
      std::uniform_int_distribution<std::size_t> pick(0, c.num_categories - 1);
      for (std::size_t i = 0; i < n; ++i) cats.push_back(pick(rng));
    } else {
      cats.resize(c.num_categories);
      std::iota(cats.begin(), cats.end(), std::size_t{0});
      std::shuffle(cats.begin(), cats.end(), rng);
      cats.resize(n);
    }
    for (std::size_t cat : cats) {
      Item it;
      it.id = ItemId{next_id++};
      it.category = cat;
      it.domain = Domain::A;
      it.embedding = to_embedding(L.per_category[cat] * s + gaussian(rng, d, 1, c.noise).col(0));
      it.hue_deg = hue_of(L, c, style, s);
      it.style_label = scene.style_label;
      scene.items.push_back(it);
      pool_a.push_back(std::move(it));
    }
    w.scenes.push_back(std::move(scene));
  }

  const std::vector<Embedding> emb_a = [&] {
    std::vector<Embedding> e;
    for (const auto& it : pool_a) e.push_back(it.embedding);
    return e;
  }();
  double shift = c.domain_shift;
  std::vector<Item> pool_b;
  for (int attempt = 0;; ++attempt) {
    pool_b = catalogue(L, c, shift, next_id);
    std::vector<Embedding> emb_b;
    for (const auto& it : pool_b) emb_b.push_back(it.embedding);
    w.domain_gap = metrics::domain_distance(emb_a, emb_b);
    if (w.domain_gap > c.theta) break;
    if (attempt == 3) {
      throw ContractError(fmt::format(
          "gen_world: domain distance {:.4f} still below theta {} after 3 rescalings; increase domain_shift",
          w.domain_gap, c.theta));
    }
    spdlog::warn("gen_world: domain distance {:.4f} <= theta {}, doubling shift to {}", w.domain_gap, c.theta,
                 2 * shift);
    shift *= 2;
  }
  w.shift_used = shift;

  for (std::size_t cat = 0; cat < c.num_categories; ++cat) {
    std::vector<Embedding> protos;
    for (const auto& centre : L.centres) protos.push_back(to_embedding(L.per_category[cat] * centre));
    w.style_prototypes.push_back(std::move(protos));
  }

  // raw features: fixed invertible mixing of [embedding; nuisance]
  Rng mix_rng = make_rng(c.seed, {kRaw});
  const auto rd = static_cast<Eigen::Index>(c.raw_dim);
  Mat mixing = random_rotation(mix_rng, rd);
  std::uniform_real_distribution<double> scale(0.5, 1.5);
  for (Eigen::Index j = 0; j < rd; ++j) mixing.col(j) *= scale(mix_rng);
  auto make_raw = [&](std::uint64_t id, bool is_scene, const Embedding& e) {
    Rng rng = make_rng(c.seed, {kRaw, is_scene ? 1u : 2u, id});
    Vec x(rd);
    for (Eigen::Index i = 0; i < d; ++i) x[i] = e[static_cast<std::size_t>(i)];
    x.tail(rd - d) = gaussian(rng, rd - d, 1, c.nuisance).col(0);
    const Vec r = mixing * x;
    return std::vector<float>(r.data(), r.data() + r.size());
  };
  for (const auto& s : w.scenes) {
    w.raw.push_back({s.id, true, Domain::A, 0, s.style_label, make_raw(s.id, true, s.scene_embedding)});
  }
  for (const auto* pool : {&pool_a, &pool_b}) {
    for (const auto& it : *pool) {
      w.raw.push_back({it.id.value, false, it.domain, it.category, it.style_label,
                       make_raw(it.id.value, false, it.embedding)});
    }
  }
  w.pool_a = ItemPool(std::move(pool_a));
  w.pool_b = ItemPool(std::move(pool_b));
  return w;
}

Split split_world(const World& world, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0 && train_frac < 1)) throw ContractError(fmt::format("split_world: train_frac {} not in (0, 1)", train_frac));
  const std::size_t n = world.scenes.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) {
    throw ContractError(fmt::format("split_world: {} of {} scenes to train leaves an empty split", n_train, n));
  }
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  for (std::size_t i = 0; i < n; ++i) keyed.emplace_back(stream_seed(seed, {kSplit, world.scenes[i].id}), i);
  std::sort(keyed.begin(), keyed.end());
  Split s;
  for (std::size_t r = 0; r < n; ++r) (r < n_train ? s.train : s.test).push_back(keyed[r].second);
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

Raster render_glyph(std::size_t category, std::uint16_t hue_deg, std::size_t height) {
  if (height < 4) throw ContractError("render_glyph: height must be >= 4");
  const double aspect = 0.5 + 0.2 * static_cast<double>(category % 8);
  const auto width = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(aspect * static_cast<double>(height))));
  const double radius = (0.05 + 0.1 * static_cast<double>(category % 4)) * static_cast<double>(std::min(width, height));
  const Rgb fill = hsv_to_rgb(hue_deg, 0.75, 0.85);
  const Rgb edge = hsv_to_rgb(hue_deg, 0.9, 0.55);
  Raster g = Raster::transparent(width, height);
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      // distance outside the rounded rectangle (negative inside)
      const double qx = std::max(std::abs(px - w / 2) - (w / 2 - radius), 0.0);
      const double qy = std::max(std::abs(py - h / 2) - (h / 2 - radius), 0.0);
      const double outside = std::hypot(qx, qy) - radius;
      if (outside > 0) continue;
      const bool border = outside > -std::max(1.0, h / 32);
      const Rgb col = border ? edge : fill;
      auto* p = g.at(x, y);
      p[0] = col.r;
      p[1] = col.g;
      p[2] = col.b;
      p[3] = 255;
    }
  }
  return g;
}

Raster render_glyph(const Item& item, std::size_t height) { return render_glyph(item.category, item.hue_deg, height); }

std::vector<Embedding> embeddings_of(const ItemPool& pool) {
  std::vector<Embedding> out;
  out.reserve(pool.size());
  for (const auto& it : pool.items()) out.push_back(it.embedding);
  return out;
}

namespace {

store::EmbeddingStore pool_store(const ItemPool& pool) {
  store::EmbeddingStore s;
  s.dim = static_cast<std::uint32_t>(pool.dim());
  for (const auto& it : pool.items()) {
    s.append(it.id.value, static_cast<std::uint32_t>(it.category), std::string(to_string(it.domain)), it.embedding,
             it.hue_deg, it.style_label);
  }
  return s;
}

ItemPool pool_from(const store::EmbeddingStore& s) {
  std::vector<Item> items;
  for (std::size_t i = 0; i < s.count(); ++i) {
    Item it;
    it.id = ItemId{s.ids[i]};
    it.category = s.categories[i];
    it.domain = domain_from_string(s.domains[i]);
    const auto row = s.row(i);
    it.embedding.assign(row.begin(), row.end());
    if (!s.hues.empty()) it.hue_deg = s.hues[i];
    if (!s.labels.empty()) it.style_label = s.labels[i];
    items.push_back(std::move(it));
  }
  return ItemPool(std::move(items));
}

}  // namespace

void save_world(const World& w, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "world.json");
    if (!out) throw Error(fmt::format("cannot write '{}'", (dir / "world.json").string()));
    out << nlohmann::json{{"config", w.config}, {"domain_gap", w.domain_gap}, {"shift_used", w.shift_used}}.dump(2)
        << "\n";
  }
  store::EmbeddingStore scenes;
  scenes.dim = static_cast<std::uint32_t>(w.config.embedding_dim);
  std::vector<store::ManifestRecord> manifest;
  std::unordered_map<std::uint64_t, std::uint64_t> row_of;
  for (std::size_t i = 0; i < w.pool_a.size(); ++i) row_of[w.pool_a.items()[i].id.value] = i;
  for (std::size_t i = 0; i < w.scenes.size(); ++i) {
    const auto& s = w.scenes[i];
    scenes.append(s.id, 0, "A", s.scene_embedding, 0, s.style_label);
    store::ManifestRecord rec{s.id, i, {}, s.style_label};
    for (const auto& it : s.items) rec.items.push_back({it.id.value, static_cast<std::uint32_t>(it.category), row_of.at(it.id.value)});
    manifest.push_back(std::move(rec));
  }
  store::write_store(dir / "scenes.bin", scenes);
  store::write_store(dir / "pool_a.bin", pool_store(w.pool_a));
  store::write_store(dir / "pool_b.bin", pool_store(w.pool_b));
  store::write_manifest(dir / "manifest.jsonl", manifest);

  store::EmbeddingStore raw_scenes, raw_items;
  raw_scenes.dim = raw_items.dim = static_cast<std::uint32_t>(w.config.raw_dim);
  for (const auto& r : w.raw) {
    (r.is_scene ? raw_scenes : raw_items)
        .append(r.id, static_cast<std::uint32_t>(r.category), std::string(to_string(r.domain)), r.raw, 0, r.label);
  }
  store::write_store(dir / "raw_scenes.bin", raw_scenes);
  store::write_store(dir / "raw_items.bin", raw_items);
}

World load_world(const std::filesystem::path& dir) {
  World w;
  {
    std::ifstream in(dir / "world.json");
    if (!in) throw NotFoundError(fmt::format("no world at '{}' (missing world.json)", dir.string()));
    const auto j = nlohmann::json::parse(in);
    w.config = j.at("config").get<WorldConfig>();
    w.domain_gap = j.value("domain_gap", 0.0);
    w.shift_used = j.value("shift_used", 0.0);
  }
  const auto scenes = store::read_store(dir / "scenes.bin");
  const auto pa = store::read_store(dir / "pool_a.bin");
  const auto manifest = store::read_manifest(dir / "manifest.jsonl");
  store::validate_manifest(manifest, scenes.count(), pa.count());
  w.pool_a = pool_from(pa);
  w.pool_b = pool_from(store::read_store(dir / "pool_b.bin"));
  for (const auto& rec : manifest) {
    SceneInstance s;
    s.id = rec.scene_id;
    const auto row = scenes.row(rec.scene_embedding_row);
    s.scene_embedding.assign(row.begin(), row.end());
    s.style_label = rec.style_label.value_or(-1);
    for (const auto& mi : rec.items) s.items.push_back(w.pool_a.items()[mi.embedding_row]);
    w.scenes.push_back(std::move(s));
  }
  for (const char* name : {"raw_scenes.bin", "raw_items.bin"}) {
    const auto r = store::read_store(dir / name);
    const bool is_scene = std::string_view(name) == "raw_scenes.bin";
    for (std::size_t i = 0; i < r.count(); ++i) {
      const auto row = r.row(i);
      w.raw.push_back({r.ids[i], is_scene, domain_from_string(r.domains[i]), r.categories[i],
                       r.labels.empty() ? 0 : r.labels[i], std::vector<float>(row.begin(), row.end())});
    }
  }
  return w;
}

}  // namespace icar::synth
