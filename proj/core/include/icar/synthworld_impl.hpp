#pragma once

#include <unordered_map>

namespace icar::synth {

template <typename F>
World with_embeddings(const World& world, F&& embed) {
  World out = world;
  std::unordered_map<std::uint64_t, Embedding> scene_emb, item_emb;
  for (const auto& r : world.raw) (r.is_scene ? scene_emb : item_emb)[r.id] = embed(r.raw);
  for (auto& s : out.scenes) {
    s.scene_embedding = scene_emb.at(s.id);
    for (auto& it : s.items) it.embedding = item_emb.at(it.id.value);
  }
  auto remap = [&](const ItemPool& pool) {
    std::vector<Item> items = pool.items();
    for (auto& it : items) it.embedding = item_emb.at(it.id.value);
    return ItemPool(std::move(items));
  };
  out.pool_a = remap(world.pool_a);
  out.pool_b = remap(world.pool_b);
  return out;
}

}  // namespace icar::synth
