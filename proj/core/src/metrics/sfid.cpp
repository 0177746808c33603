#include "icar/metrics/sfid.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "icar/error.hpp"
#include "icar/store.hpp"
#include "icar/synthworld.hpp"

namespace icar::metrics {

void to_json(nlohmann::json& j, const CanvasConfig& c) {
  j = {{"width", c.width}, {"height", c.height}, {"fixed_height", c.fixed_height}, {"max_items", c.max_items}};
}

void from_json(const nlohmann::json& j, CanvasConfig& c) {
  c = CanvasConfig{};
  if (j.contains("width")) j.at("width").get_to(c.width);
  if (j.contains("height")) j.at("height").get_to(c.height);
  if (j.contains("fixed_height")) j.at("fixed_height").get_to(c.fixed_height);
  if (j.contains("max_items")) j.at("max_items").get_to(c.max_items);
}

ComposedImage compose_set_image(const std::vector<Glyph>& glyphs, const CanvasConfig& canvas, Rng& rng) {
  if (glyphs.empty()) throw ContractError("compose_set_image: empty set");
  if (glyphs.size() > canvas.max_items) {
    throw ContractError(fmt::format("compose_set_image: {} items, max {}", glyphs.size(), canvas.max_items));
  }
  ComposedImage out{Raster::filled(canvas.width, canvas.height, Rgb{}), {}};
  for (const auto& g : glyphs) {
    if (g.raster.empty()) throw ContractError(fmt::format("compose_set_image: glyph of item {} is empty", g.id.value));
    const std::size_t h = canvas.fixed_height;
    const auto w = static_cast<std::size_t>(
        std::lround(static_cast<double>(g.raster.width) * static_cast<double>(h) / static_cast<double>(g.raster.height)));
    if (h > canvas.height || w > canvas.width || w == 0) {
      throw ContractError(fmt::format("compose_set_image: glyph of item {} scales to {}x{}, canvas is {}x{}", g.id.value, w,
                                      h, canvas.width, canvas.height));
    }
    const std::size_t x = std::uniform_int_distribution<std::size_t>(0, canvas.width - w)(rng);
    const std::size_t y = std::uniform_int_distribution<std::size_t>(0, canvas.height - h)(rng);
    blit(out.image, resize_nearest(g.raster, w, h), x, y);
    out.placements.push_back({g.id, x, y, w, h});
  }
  return out;
}

std::vector<double> GridHistogramExtractor::extract(const Raster& img) const {
  if (img.width < grid_ || img.height < grid_) throw ContractError("extract: image smaller than the feature grid");
  std::vector<double> f(dim(), 0.0);
  std::vector<std::size_t> cell_count(grid_ * grid_, 0);
  const std::size_t hist_at = 3 * grid_ * grid_;
  for (std::size_t y = 0; y < img.height; ++y) {
    const std::size_t gy = y * grid_ / img.height;
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t cell = gy * grid_ + x * grid_ / img.width;
      const std::uint8_t* p = img.at(x, y);
      ++cell_count[cell];
      for (std::size_t ch = 0; ch < 3; ++ch) {
        f[3 * cell + ch] += p[ch] / 255.0;
        f[hist_at + ch * bins_ + p[ch] * bins_ / 256] += 1.0;
      }
    }
  }
  for (std::size_t cell = 0; cell < cell_count.size(); ++cell)
    for (std::size_t ch = 0; ch < 3; ++ch) f[3 * cell + ch] /= static_cast<double>(cell_count[cell]);
  const double n = static_cast<double>(img.width * img.height);
  for (std::size_t i = hist_at; i < f.size(); ++i) f[i] /= n;
  return f;
}

GlyphRenderer default_renderer() {
  return [](const Item& it) { return synth::render_glyph(it, 64); };
}

std::uint64_t set_seed(std::uint64_t seed, const std::vector<Item>& set) {
  std::vector<std::uint64_t> ids;
  for (const auto& it : set) ids.push_back(it.id.value);
  std::sort(ids.begin(), ids.end());
  std::uint64_t h = stream_seed(seed, {0x5f1d});
  for (auto id : ids) h = splitmix64(h ^ splitmix64(id));
  return h;
}

ComposedImage compose_set(const std::vector<Item>& set, const CanvasConfig& canvas, std::uint64_t seed,
                          const GlyphRenderer& render) {
  std::vector<Item> items = set;
  if (items.size() > canvas.max_items) items.resize(canvas.max_items);
  std::vector<Glyph> glyphs;
  for (const auto& it : items) glyphs.push_back({it.id, render(it)});
  Rng rng(set_seed(seed, items));
  return compose_set_image(glyphs, canvas, rng);
}

std::vector<std::vector<double>> set_features(const std::vector<std::vector<Item>>& sets,
                                              const FeatureExtractor& extractor, const CanvasConfig& canvas,
                                              std::uint64_t seed, const GlyphRenderer& render) {
  std::vector<std::vector<double>> out;
  out.reserve(sets.size());
  const auto over = std::count_if(sets.begin(), sets.end(), [&](const auto& s) { return s.size() > canvas.max_items; });
  if (over > 0) spdlog::warn("sfid: {} of {} sets truncated to {} items", over, sets.size(), canvas.max_items);
  for (const auto& s : sets) {
    auto f = extractor.extract(compose_set(s, canvas, seed, render).image);
    if (f.size() != extractor.dim()) {
      throw ShapeError(fmt::format("extractor returned {} features, declared {}", f.size(), extractor.dim()));
    }
    out.push_back(std::move(f));
  }
  return out;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"metric", r.metric}, {"value", r.value}, {"n", r.n}, {"seed", r.seed}, {"config_hash", r.config_hash}};
}

EvalReport sfid(const std::vector<std::vector<Item>>& generated, const std::vector<std::vector<Item>>& groundtruth,
                const FeatureExtractor& extractor, const SfidOptions& o) {
  if (generated.size() < 2 || groundtruth.size() < 2) {
    throw ContractError(fmt::format("sfid: need >= 2 sets per side, got {} and {}", generated.size(), groundtruth.size()));
  }
  const auto fallback = default_renderer();
  const auto& rg = o.render_generated ? o.render_generated : fallback;
  const auto& rt = o.render_groundtruth ? o.render_groundtruth : fallback;
  const auto a = feature_stats(set_features(generated, extractor, o.canvas, o.seed, rg));
  const auto b = feature_stats(set_features(groundtruth, extractor, o.canvas, o.seed, rt));
  EvalReport r;
  r.metric = "sfid";
  r.value = frechet_distance(a, b);
  r.n = generated.size();
  r.seed = o.seed;
  const nlohmann::json cfg = {{"canvas", o.canvas}, {"extractor_dim", extractor.dim()}};
  r.config_hash = fmt::format("{:016x}", store::config_digest(cfg));
  return r;
}

Raster add_pixel_noise(const Raster& src, double sigma, Rng& rng) {
  Raster out = src;
  if (sigma <= 0) return out;
  std::normal_distribution<double> nd(0.0, sigma);
  for (std::size_t i = 0; i < out.width * out.height; ++i) {
    std::uint8_t* p = &out.pixels[i * out.channels];
    if (out.channels == 4 && p[3] == 0) continue;
    for (std::size_t ch = 0; ch < 3; ++ch) p[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(p[ch] + nd(rng)), 0L, 255L));
  }
  return out;
}

}  // namespace icar::metrics
