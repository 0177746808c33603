#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "icar/error.hpp"
#include "icar/metrics/frechet.hpp"
#include "icar/synthworld.hpp"

namespace fs = std::filesystem;
using namespace icar;
using namespace icar::synth;

namespace {

const World& default_world() {
  static const World w = gen_world(WorldConfig{});
  return w;
}

std::string file_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("default world counts and invariants") {
  const auto& w = default_world();
  const auto& c = w.config;
  CHECK(w.scenes.size() == c.num_scenes);
  CHECK(w.pool_b.size() == c.num_categories * c.items_per_category);
  std::size_t scene_items = 0;
  for (const auto& s : w.scenes) {
    CHECK(s.items.size() >= 2);
    CHECK(s.items.size() <= 9);
    std::set<std::size_t> cats;
    for (const auto& it : s.items) {
      cats.insert(it.category);
      CHECK(it.domain == Domain::A);
      CHECK(std::abs(norm(it.embedding) - 1.0) < 1e-6);
    }
    CHECK(cats.size() == s.items.size());
    CHECK(std::abs(norm(s.scene_embedding) - 1.0) < 1e-6);
    scene_items += s.items.size();
  }
  CHECK(w.pool_a.size() == scene_items);
  CHECK(w.raw.size() == c.num_scenes + w.pool_a.size() + w.pool_b.size());
  for (const auto& r : w.raw) {
    CHECK(r.raw.size() == c.raw_dim);
    CHECK(r.label >= 0);
    CHECK(r.label < static_cast<int>(c.num_styles));
  }
  for (const auto& it : w.pool_b.items()) CHECK(std::abs(norm(it.embedding) - 1.0) < 1e-6);
}

TEST_CASE("domain gap exceeds theta") {
  const auto& w = default_world();
  const double gap = metrics::domain_distance(embeddings_of(w.pool_a), embeddings_of(w.pool_b));
  MESSAGE("domain gap " << gap << " theta " << w.config.theta);
  CHECK(gap == doctest::Approx(w.domain_gap));
  CHECK(gap > w.config.theta);
}

TEST_CASE("items within a scene are more alike than across scenes") {
  const auto& w = default_world();
  double intra = 0, inter = 0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < w.scenes.size(); ++i) {
    const auto& s = w.scenes[i];
    for (std::size_t a = 0; a < s.items.size(); ++a)
      for (std::size_t b = a + 1; b < s.items.size(); ++b, ++n_intra) intra += cosine(s.items[a].embedding, s.items[b].embedding);
    const auto& o = w.scenes[(i + 1) % w.scenes.size()];
    for (const auto& x : s.items)
      for (const auto& y : o.items)
        if (x.category != y.category) {
          inter += cosine(x.embedding, y.embedding);
          ++n_inter;
        }
  }
  intra /= static_cast<double>(n_intra);
  inter /= static_cast<double>(n_inter);
  MESSAGE("intra " << intra << " inter " << inter);
  CHECK(intra - inter >= 0.1);
}

TEST_CASE("style is recoverable from item embeddings") {
  const auto& w = default_world();
  std::size_t hit = 0, total = 0;
  for (const auto& s : w.scenes) {
    for (const auto& it : s.items) {
      const auto& protos = w.style_prototypes[it.category];
      std::size_t best = 0;
      for (std::size_t k = 1; k < protos.size(); ++k)
        if (cosine(it.embedding, protos[k]) > cosine(it.embedding, protos[best])) best = k;
      hit += static_cast<int>(best) == s.style_label;
      ++total;
    }
  }
  const double acc = static_cast<double>(hit) / static_cast<double>(total);
  MESSAGE("style recovery " << acc);
  CHECK(acc >= 0.95);
}

TEST_CASE("generation is deterministic and manifests are byte-identical") {
  WorldConfig c;
  c.num_scenes = 60;
  c.items_per_category = 20;
  const auto a = gen_world(c), b = gen_world(c);
  const fs::path root = fs::temp_directory_path() / "icar_test_world";
  fs::remove_all(root);
  save_world(a, root / "a");
  save_world(b, root / "b");
  for (const char* f : {"manifest.jsonl", "scenes.bin", "pool_a.bin", "pool_b.bin", "pool_b.bin.json", "raw_items.bin",
                        "raw_scenes.bin", "world.json"}) {
    CHECK_MESSAGE(file_text(root / "a" / f) == file_text(root / "b" / f), f);
  }
  c.seed = 8;
  save_world(gen_world(c), root / "c");
  CHECK(file_text(root / "a" / "pool_a.bin") != file_text(root / "c" / "pool_a.bin"));

  const World back = load_world(root / "a");
  REQUIRE(back.scenes.size() == a.scenes.size());
  CHECK(back.scenes[3].items[0].embedding == a.scenes[3].items[0].embedding);
  CHECK(back.scenes[3].style_label == a.scenes[3].style_label);
  CHECK(back.pool_b.items()[5].hue_deg == a.pool_b.items()[5].hue_deg);
  CHECK(back.raw.size() == a.raw.size());
  CHECK(back.config.num_scenes == 60);
}

TEST_CASE("split_world") {
  const auto& w = default_world();
  const auto s = split_world(w, 0.8, 1);
  CHECK(s.train.size() == 1600);
  CHECK(s.test.size() == 400);
  std::set<std::size_t> seen(s.train.begin(), s.train.end());
  for (auto i : s.test) CHECK(seen.insert(i).second);
  CHECK(seen.size() == 2000);
  const auto again = split_world(w, 0.8, 1);
  CHECK(again.train == s.train);
  CHECK(split_world(w, 0.8, 2).train != s.train);
  CHECK_THROWS_AS(split_world(w, 0.0, 1), ContractError);
  CHECK_THROWS_AS(split_world(w, 1e-6, 1), ContractError);
}

TEST_CASE("config validation and theta failure") {
  WorldConfig c;
  c.max_items = 10;
  CHECK_THROWS_AS(gen_world(c), ContractError);
  c = WorldConfig{};
  c.num_styles = 1;
  CHECK_THROWS_AS(gen_world(c), ContractError);
  c = WorldConfig{};
  c.num_scenes = 50;
  c.items_per_category = 10;
  c.theta = 1e6;
  CHECK_THROWS_WITH_AS(gen_world(c), doctest::Contains("domain_shift"), ContractError);
  nlohmann::json j = WorldConfig{};
  CHECK(j.get<WorldConfig>().items_per_category == WorldConfig{}.items_per_category);
}

TEST_CASE("glyphs encode category in shape and style in colour") {
  const auto g = render_glyph(3, 120, 64);
  CHECK(g.height == 64);
  CHECK(g.width == static_cast<std::size_t>(std::lround((0.5 + 0.6) * 64)));
  CHECK(g.channels == 4);
  CHECK(g.at(0, 0)[3] == 0);                  // rounded corner is transparent
  CHECK(g.at(g.width / 2, g.height / 2)[3] == 255);
  const auto h = render_glyph(3, 300, 64);
  CHECK(h.width == g.width);
  CHECK(std::vector<std::uint8_t>(g.at(g.width / 2, g.height / 2), g.at(g.width / 2, g.height / 2) + 3) !=
        std::vector<std::uint8_t>(h.at(h.width / 2, h.height / 2), h.at(h.width / 2, h.height / 2) + 3));
  CHECK(render_glyph(0, 0, 64).width != render_glyph(1, 0, 64).width);
}
