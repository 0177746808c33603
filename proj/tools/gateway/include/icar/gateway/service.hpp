#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icar/generator.hpp"
#include "icar/metrics/sfid.hpp"
#include "icar/types.hpp"

namespace icar::gateway {

inline constexpr const char* kSchema = "icar.v1";

struct Suggestion {
  std::size_t category = 0;
  Item item;
  double score = 0;
  std::vector<gen::Neighbor> alternatives;  // ranked, suggestion first
};

struct Session {
  std::string id;
  std::uint64_t scene_id = 0;
  gen::Mode mode = gen::Mode::predict_category;
  std::vector<Item> accepted;
  std::vector<ItemId> rejected;
  std::vector<std::size_t> remaining;  // given mode
  std::optional<Suggestion> suggestion;
  gen::StopReason stop = gen::StopReason::none;
  std::string created_at;

  bool terminal() const noexcept { return stop != gen::StopReason::none; }
};

enum class Source { model, groundtruth, random };
enum class Rating { good, neutral, bad };

std::string_view to_string(Source s) noexcept;
Source source_from_string(std::string_view s);
std::string_view to_string(Rating r) noexcept;
Rating rating_from_string(std::string_view s);

struct RatingRecord {
  std::string rater;
  std::string set_id;
  Source source = Source::model;
  Rating rating = Rating::neutral;
  std::string timestamp;
};

nlohmann::json to_json(const RatingRecord& r);
RatingRecord rating_from_json(const nlohmann::json& j);

/// JSON-lines file, one record per submission; on load the last record per
/// (rater, set) wins. Without a path the store lives in memory only.
class RatingStore {
 public:
  explicit RatingStore(std::optional<std::filesystem::path> path = std::nullopt);
  void put(const RatingRecord& r);
  std::vector<RatingRecord> all() const;
  std::size_t size() const;

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, RatingRecord> records_;
};

struct ServiceConfig {
  std::optional<std::filesystem::path> ratings_path;
  std::uint64_t seed = 0;  // random sets and SFID placement
  std::size_t max_items = 9;
  std::size_t alternatives = 3;
  metrics::CanvasConfig canvas;
};

/// Everything the HTTP layer exposes. Model, index and scenes are read-only;
/// sessions and ratings are the only mutable state. Thread-safe.
class Service {
 public:
  /// `scenes` are the ones offered for completion and rating, `catalogue` the
  /// retrieval pool, `negatives` the FITB distractor pool.
  Service(std::vector<SceneInstance> scenes, ItemPool catalogue, ItemPool negatives,
          std::shared_ptr<const gen::CompletionModel> model, ServiceConfig config = {});

  nlohmann::json list_scenes() const;
  nlohmann::json create_session(std::uint64_t scene_id, gen::Mode mode, std::optional<std::vector<std::size_t>> categories);
  nlohmann::json step(const std::string& session_id, std::optional<ItemId> accept, std::optional<ItemId> reject);
  nlohmann::json get_session(const std::string& session_id) const;

  /// Set ids are "<source>:<scene id>", e.g. "model:12".
  nlohmann::json get_set(const std::string& set_id) const;
  std::vector<Item> set_items(const std::string& set_id) const;
  nlohmann::json submit_rating(RatingRecord record);
  nlohmann::json ratings_report() const;

  nlohmann::json eval_fitb(std::size_t candidates, std::uint64_t seed, gen::Mode mode) const;
  /// source: "model", "random" (each against ground truth) or "split"
  /// (first half of the ground-truth sets against the second).
  nlohmann::json eval_sfid(const std::string& source, std::uint64_t seed) const;

  std::vector<std::uint8_t> glyph_png(ItemId id) const;
  std::vector<std::uint8_t> set_png(const std::string& set_id) const;

  const RatingStore& ratings() const noexcept { return ratings_; }
  /// SFID of each non-ground-truth source against ground truth (cached).
  double source_sfid(Source s) const;

 private:
  struct Slot {
    std::mutex mu;
    Session session;
  };

  const SceneInstance& scene(std::uint64_t id) const;
  const Item& item(ItemId id) const;
  void advance(Session& s) const;
  nlohmann::json session_json(const Session& s) const;
  std::vector<std::vector<Item>> sets_of(Source s) const;

  std::vector<SceneInstance> scenes_;
  std::map<std::uint64_t, std::size_t> scene_index_;
  gen::RetrievalIndex index_;
  ItemPool negatives_;
  std::shared_ptr<const gen::CompletionModel> model_;
  ServiceConfig config_;
  std::map<std::uint64_t, const Item*> items_;  // scene items and catalogue

  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::uint64_t next_session_ = 1;

  RatingStore ratings_;
  mutable std::mutex cache_mu_;
  mutable std::map<Source, std::vector<std::vector<Item>>> set_cache_;
  mutable std::map<Source, double> sfid_cache_;
};

nlohmann::json item_json(const Item& it);

}  // namespace icar::gateway
