#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icar/metrics/frechet.hpp"
#include "icar/numcore/rng.hpp"
#include "icar/raster.hpp"
#include "icar/types.hpp"

namespace icar::metrics {

struct CanvasConfig {
  std::size_t width = 512;
  std::size_t height = 512;
  std::size_t fixed_height = 128;  // every glyph is scaled to this height
  std::size_t max_items = 5;
};

void to_json(nlohmann::json& j, const CanvasConfig& c);
void from_json(const nlohmann::json& j, CanvasConfig& c);

struct Glyph {
  ItemId id;
  Raster raster;  // RGB or RGBA
};

struct Placement {
  ItemId id;
  std::size_t x = 0, y = 0, w = 0, h = 0;
};

struct ComposedImage {
  Raster image;  // RGB on white
  std::vector<Placement> placements;
};

/// Scales each glyph to the fixed height (aspect kept), then drops it at a
/// uniform position that keeps it on the canvas. Later glyphs draw over
/// earlier ones. Throws ContractError for 0 or more than max_items glyphs, or a
/// glyph that does not fit once scaled.
ComposedImage compose_set_image(const std::vector<Glyph>& glyphs, const CanvasConfig& canvas, Rng& rng);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> extract(const Raster& image) const = 0;
};

/// Mean colour over a grid x grid layout (channels in [0, 1]) followed by a
/// per-channel histogram with `bins` bins (fractions of pixels).
class GridHistogramExtractor final : public FeatureExtractor {
 public:
  explicit GridHistogramExtractor(std::size_t grid = 8, std::size_t bins = 24) : grid_(grid), bins_(bins) {}
  std::size_t dim() const override { return 3 * grid_ * grid_ + 3 * bins_; }
  std::vector<double> extract(const Raster& image) const override;

 private:
  std::size_t grid_, bins_;
};

using GlyphRenderer = std::function<Raster(const Item&)>;

/// synth glyphs at 64 px.
GlyphRenderer default_renderer();

/// Placement stream of a set: a function of the seed and the set's sorted ids,
/// so the same set lands the same way wherever it appears.
std::uint64_t set_seed(std::uint64_t seed, const std::vector<Item>& set);

/// Composes one set, keeping only its first max_items items.
ComposedImage compose_set(const std::vector<Item>& set, const CanvasConfig& canvas, std::uint64_t seed,
                          const GlyphRenderer& render);

/// Warns once when any set had to be truncated.
std::vector<std::vector<double>> set_features(const std::vector<std::vector<Item>>& sets,
                                              const FeatureExtractor& extractor, const CanvasConfig& canvas,
                                              std::uint64_t seed, const GlyphRenderer& render);

struct SfidOptions {
  CanvasConfig canvas;
  std::uint64_t seed = 0;
  GlyphRenderer render_generated;  // defaults to default_renderer()
  GlyphRenderer render_groundtruth;
};

struct EvalReport {
  std::string metric;
  double value = 0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

nlohmann::json to_json(const EvalReport& r);

/// Needs >= 2 sets on each side.
EvalReport sfid(const std::vector<std::vector<Item>>& generated, const std::vector<std::vector<Item>>& groundtruth,
                const FeatureExtractor& extractor, const SfidOptions& options = {});

/// Adds N(0, sigma^2) to every colour channel of opaque pixels, clamped to 0..255.
Raster add_pixel_noise(const Raster& src, double sigma, Rng& rng);

}  // namespace icar::metrics
