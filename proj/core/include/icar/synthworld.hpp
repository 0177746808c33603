#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "icar/raster.hpp"
#include "icar/types.hpp"

namespace icar::synth {

struct WorldConfig {
  std::size_t num_styles = 6;
  std::size_t latent_dim = 8;
  std::size_t num_categories = 8;
  std::size_t items_per_category = 250;  // catalogue (domain B) items per category
  std::size_t num_scenes = 2000;
  std::size_t min_items = 2;
  std::size_t max_items = 9;
  bool repeat_categories = false;
  std::size_t embedding_dim = 32;
  std::size_t raw_dim = 64;
  double style_spread = 0.35;   // latent std around a style centre
  double category_mix = 0.6;    // weight of the per-category map over the shared map
  double noise = 0.15;          // embedding noise before normalization
  double domain_shift = 0.6;    // magnitude of the per-category domain-B shift
  double nuisance = 0.5;        // std of nuisance dims mixed into raw features
  double theta = 0.5;           // required domain distance between pools
  std::uint64_t seed = 7;

  void validate() const;
};

void to_json(nlohmann::json& j, const WorldConfig& c);
void from_json(const nlohmann::json& j, WorldConfig& c);

/// Stage-1 input standing in for an image.
struct RawFeature {
  std::uint64_t id = 0;
  bool is_scene = false;
  Domain domain = Domain::A;
  std::size_t category = 0;  // meaningless for scenes
  int label = 0;             // style class
  std::vector<float> raw;
};

struct World {
  WorldConfig config;
  std::vector<SceneInstance> scenes;
  ItemPool pool_a;  // every scene item
  ItemPool pool_b;  // the catalogue
  std::vector<RawFeature> raw;  // scenes, then pool A, then pool B
  double domain_gap = 0;
  double shift_used = 0;

  /// Style centres mapped through each category's projection, normalized
  /// ([category][style] -> embedding); used to check style recoverability.
  std::vector<std::vector<Embedding>> style_prototypes;
};

/// Deterministic per config (including seed). Throws ContractError when the
/// domain gap stays below theta after three rescalings of the shift.
World gen_world(const WorldConfig& config);

struct Split {
  std::vector<std::size_t> train;  // indices into World::scenes
  std::vector<std::size_t> test;
};

/// Assignment is a function of (seed, scene id) only; exactly round(frac * n)
/// scenes go to train.
Split split_world(const World& world, double train_frac, std::uint64_t seed);

/// Rounded-rectangle glyph: category sets the aspect and corner radius, hue
/// the colour.
Raster render_glyph(std::size_t category, std::uint16_t hue_deg, std::size_t height = 64);
Raster render_glyph(const Item& item, std::size_t height = 64);

/// World directory layout: config.json, scenes.bin, pool_a.bin, pool_b.bin,
/// raw.bin (each with sidecar) and manifest.jsonl.
void save_world(const World& world, const std::filesystem::path& dir);
World load_world(const std::filesystem::path& dir);

/// Replaces every embedding with `embed(raw)` for its raw feature.
template <typename F>
World with_embeddings(const World& world, F&& embed);

std::vector<Embedding> embeddings_of(const ItemPool& pool);

}  // namespace icar::synth

#include "icar/synthworld_impl.hpp"
