#include "icar/gateway/service.hpp"

#include <algorithm>
#include <ctime>
#include <fstream>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "icar/error.hpp"
#include "icar/metrics/fitb.hpp"
#include "icar/metrics/frechet.hpp"
#include "icar/numcore/rng.hpp"
#include "icar/store.hpp"
#include "icar/synthworld.hpp"

namespace icar::gateway {

namespace {

std::string now_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", tm);
}

std::pair<Source, std::uint64_t> parse_set_id(const std::string& set_id) {
  const auto colon = set_id.find(':');
  if (colon == std::string::npos) throw NotFoundError(fmt::format("unknown set '{}'", set_id));
  Source src;
  try {
    src = source_from_string(set_id.substr(0, colon));
  } catch (const ContractError&) {
    throw NotFoundError(fmt::format("unknown set '{}'", set_id));
  }
  const std::string num = set_id.substr(colon + 1);
  if (num.empty() || !std::all_of(num.begin(), num.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw NotFoundError(fmt::format("unknown set '{}'", set_id));
  }
  return {src, std::stoull(num)};
}

}  // namespace

std::string_view to_string(Source s) noexcept {
  switch (s) {
    case Source::model: return "model";
    case Source::groundtruth: return "groundtruth";
    default: return "random";
  }
}

Source source_from_string(std::string_view s) {
  if (s == "model") return Source::model;
  if (s == "groundtruth") return Source::groundtruth;
  if (s == "random") return Source::random;
  throw ContractError(fmt::format("unknown source '{}' (model, groundtruth, random)", s));
}

std::string_view to_string(Rating r) noexcept {
  switch (r) {
    case Rating::good: return "good";
    case Rating::neutral: return "neutral";
    default: return "bad";
  }
}

Rating rating_from_string(std::string_view s) {
  if (s == "good") return Rating::good;
  if (s == "neutral") return Rating::neutral;
  if (s == "bad") return Rating::bad;
  throw ContractError(fmt::format("unknown rating '{}' (good, neutral, bad)", s));
}

nlohmann::json to_json(const RatingRecord& r) {
  return {{"rater", r.rater},
          {"set_id", r.set_id},
          {"source", to_string(r.source)},
          {"rating", to_string(r.rating)},
          {"timestamp", r.timestamp}};
}

RatingRecord rating_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("rating must be a JSON object");
  RatingRecord r;
  for (const char* key : {"rater", "set_id", "rating"}) {
    if (!j.contains(key) || !j[key].is_string()) throw ContractError(fmt::format("rating: missing string field '{}'", key));
  }
  r.rater = j["rater"].get<std::string>();
  r.set_id = j["set_id"].get<std::string>();
  r.rating = rating_from_string(j["rating"].get<std::string>());
  if (j.contains("source")) r.source = source_from_string(j["source"].get<std::string>());
  else r.source = parse_set_id(r.set_id).first;
  if (j.contains("timestamp")) r.timestamp = j["timestamp"].get<std::string>();
  return r;
}

RatingStore::RatingStore(std::optional<std::filesystem::path> path) : path_(std::move(path)) {
  if (!path_ || !std::filesystem::exists(*path_)) return;
  std::ifstream in(*path_);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto r = rating_from_json(nlohmann::json::parse(line));
      records_[{r.rater, r.set_id}] = r;
    } catch (const std::exception& e) {
      throw FormatError(fmt::format("{}:{}: bad rating record: {}", path_->string(), lineno, e.what()));
    }
  }
}

void RatingStore::put(const RatingRecord& r) {
  std::lock_guard lock(mu_);
  if (path_) {
    std::ofstream out(*path_, std::ios::app);
    if (!out) throw Error(fmt::format("cannot append to '{}'", path_->string()));
    out << to_json(r).dump() << "\n";
  }
  records_[{r.rater, r.set_id}] = r;
}

std::vector<RatingRecord> RatingStore::all() const {
  std::lock_guard lock(mu_);
  std::vector<RatingRecord> out;
  for (const auto& [k, v] : records_) out.push_back(v);
  return out;
}

std::size_t RatingStore::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

nlohmann::json item_json(const Item& it) {
  return {{"id", it.id.value},
          {"category", it.category},
          {"domain", to_string(it.domain)},
          {"hue", it.hue_deg},
          {"glyph", fmt::format("/items/{}/glyph.png", it.id.value)}};
}

Service::Service(std::vector<SceneInstance> scenes, ItemPool catalogue, ItemPool negatives,
                 std::shared_ptr<const gen::CompletionModel> model, ServiceConfig config)
    : scenes_(std::move(scenes)),
      index_(catalogue),
      negatives_(std::move(negatives)),
      model_(std::move(model)),
      config_(std::move(config)),
      ratings_(config_.ratings_path) {
  if (!model_) throw ContractError("service: no model");
  if (config_.max_items < 1 || config_.max_items > 9) throw ContractError("service: max_items must be in [1, 9]");
  for (std::size_t i = 0; i < scenes_.size(); ++i) {
    if (!scene_index_.emplace(scenes_[i].id, i).second) {
      throw ContractError(fmt::format("service: duplicate scene id {}", scenes_[i].id));
    }
    for (const auto& it : scenes_[i].items) items_[it.id.value] = &it;
  }
  for (const auto& it : index_.pool().items()) items_[it.id.value] = &it;
  for (const auto& it : negatives_.items()) items_.emplace(it.id.value, &it);
}

const SceneInstance& Service::scene(std::uint64_t id) const {
  const auto it = scene_index_.find(id);
  if (it == scene_index_.end()) throw NotFoundError(fmt::format("unknown scene {}", id));
  return scenes_[it->second];
}

const Item& Service::item(ItemId id) const {
  const auto it = items_.find(id.value);
  if (it == items_.end()) throw NotFoundError(fmt::format("unknown item {}", id.value));
  return *it->second;
}

nlohmann::json Service::list_scenes() const {
  auto out = nlohmann::json::array();
  for (const auto& s : scenes_) {
    auto cats = nlohmann::json::array();
    for (const auto& it : s.items) cats.push_back(it.category);
    out.push_back({{"id", s.id}, {"num_items", s.items.size()}, {"categories", cats}});
  }
  return out;
}

void Service::advance(Session& s) const {
  const std::unordered_set<ItemId> excl(s.rejected.begin(), s.rejected.end());
  const auto p = gen::propose_next(*model_, index_, scene(s.scene_id).scene_embedding, s.accepted, s.mode, s.remaining,
                                   config_.max_items, excl, config_.alternatives);
  s.stop = p.stop;
  if (p.stop != gen::StopReason::none) {
    s.suggestion.reset();
    return;
  }
  const auto& first = p.ranked.front();
  s.suggestion = Suggestion{p.category, index_.pool().at(first.id), first.score, p.ranked};
}

nlohmann::json Service::session_json(const Session& s) const {
  auto accepted = nlohmann::json::array();
  for (const auto& it : s.accepted) accepted.push_back(item_json(it));
  auto rejected = nlohmann::json::array();
  for (const auto& id : s.rejected) rejected.push_back(id.value);
  nlohmann::json sug = nullptr;
  if (s.suggestion) {
    auto alts = nlohmann::json::array();
    for (std::size_t r = 0; r < s.suggestion->alternatives.size(); ++r) {
      const auto& n = s.suggestion->alternatives[r];
      alts.push_back({{"rank", r + 1}, {"id", n.id.value}, {"score", n.score}});
    }
    sug = {{"category", s.suggestion->category},
           {"item", item_json(s.suggestion->item)},
           {"score", s.suggestion->score},
           {"rank", 1},
           {"alternatives", alts}};
  }
  return {{"id", s.id},
          {"scene_id", s.scene_id},
          {"mode", gen::to_string(s.mode)},
          {"accepted", accepted},
          {"rejected", rejected},
          {"remaining_categories", s.remaining},
          {"suggestion", sug},
          {"terminal", s.terminal()},
          {"stop_reason", gen::to_string(s.stop)},
          {"created_at", s.created_at}};
}

nlohmann::json Service::create_session(std::uint64_t scene_id, gen::Mode mode,
                                       std::optional<std::vector<std::size_t>> categories) {
  const auto& sc = scene(scene_id);
  Session s;
  s.scene_id = scene_id;
  s.mode = mode;
  s.created_at = now_utc();
  if (mode == gen::Mode::given_category) {
    if (categories) {
      s.remaining = *categories;
    } else {
      for (const auto& it : sc.items) s.remaining.push_back(it.category);
    }
    if (s.remaining.empty()) throw ContractError("given-category session needs at least one category");
    if (s.remaining.size() > config_.max_items) {
      throw ContractError(fmt::format("{} categories given, at most {}", s.remaining.size(), config_.max_items));
    }
    for (std::size_t c : s.remaining) {
      if (c >= model_->num_categories()) throw ContractError(fmt::format("category {} out of range", c));
    }
    std::sort(s.remaining.begin(), s.remaining.end());
  } else if (categories) {
    throw ContractError("categories are only accepted in given mode");
  }
  advance(s);
  auto slot = std::make_shared<Slot>();
  {
    std::lock_guard lock(sessions_mu_);
    s.id = fmt::format("s{}", next_session_++);
    slot->session = std::move(s);
    sessions_[slot->session.id] = slot;
  }
  std::lock_guard lock(slot->mu);
  return session_json(slot->session);
}

nlohmann::json Service::step(const std::string& session_id, std::optional<ItemId> accept, std::optional<ItemId> reject) {
  std::shared_ptr<Slot> slot;
  {
    std::lock_guard lock(sessions_mu_);
    const auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFoundError(fmt::format("unknown session '{}'", session_id));
    slot = it->second;
  }
  std::lock_guard lock(slot->mu);
  Session& s = slot->session;
  if (accept.has_value() == reject.has_value()) throw ContractError("step needs exactly one of 'accept' or 'reject'");
  if (s.terminal()) throw ContractError(fmt::format("session {} is finished ({})", s.id, gen::to_string(s.stop)));
  const ItemId id = accept ? *accept : *reject;
  if (!s.suggestion || s.suggestion->item.id != id) {
    throw ContractError(fmt::format("item {} is not the current suggestion", id.value));
  }
  Session next = s;
  if (accept) {
    next.accepted.push_back(next.suggestion->item);
    if (next.mode == gen::Mode::given_category) {
      next.remaining.erase(std::find(next.remaining.begin(), next.remaining.end(), next.suggestion->category));
    }
  } else {
    next.rejected.push_back(id);
  }
  advance(next);  // may throw (category exhausted); the session is then unchanged
  s = std::move(next);
  return session_json(s);
}

nlohmann::json Service::get_session(const std::string& session_id) const {
  std::shared_ptr<Slot> slot;
  {
    std::lock_guard lock(sessions_mu_);
    const auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFoundError(fmt::format("unknown session '{}'", session_id));
    slot = it->second;
  }
  std::lock_guard lock(slot->mu);
  return session_json(slot->session);
}

std::vector<std::vector<Item>> Service::sets_of(Source src) const {
  {
    std::lock_guard lock(cache_mu_);
    if (auto it = set_cache_.find(src); it != set_cache_.end()) return it->second;
  }
  std::vector<std::vector<Item>> sets;
  for (const auto& sc : scenes_) {
    if (src == Source::groundtruth) {
      sets.push_back(sc.items);
    } else if (src == Source::random) {
      std::vector<Item> set;
      Rng rng = make_rng(config_.seed, {0x7a4d, sc.id});
      for (const auto& it : sc.items) {
        const auto members = index_.pool().in_category(it.category);
        if (members.empty()) throw ContractError(fmt::format("catalogue category {} empty", it.category));
        set.push_back(index_.pool().items()[members[std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng)]]);
      }
      sets.push_back(std::move(set));
    } else {
      gen::GenerationRequest req;
      req.scene = sc.scene_embedding;
      req.mode = gen::Mode::given_category;
      for (const auto& it : sc.items) req.given_categories.push_back(it.category);
      req.max_items = config_.max_items;
      std::vector<Item> set;
      for (auto& g : gen::generate_set(*model_, index_, req).items) set.push_back(std::move(g.item));
      sets.push_back(std::move(set));
    }
  }
  std::lock_guard lock(cache_mu_);
  return set_cache_.emplace(src, std::move(sets)).first->second;
}

std::vector<Item> Service::set_items(const std::string& set_id) const {
  const auto [src, scene_id] = parse_set_id(set_id);
  const auto it = scene_index_.find(scene_id);
  if (it == scene_index_.end()) throw NotFoundError(fmt::format("unknown set '{}'", set_id));
  return sets_of(src)[it->second];
}

nlohmann::json Service::get_set(const std::string& set_id) const {
  const auto [src, scene_id] = parse_set_id(set_id);
  auto items = nlohmann::json::array();
  for (const auto& it : set_items(set_id)) items.push_back(item_json(it));
  return {{"id", set_id},
          {"source", to_string(src)},
          {"scene_id", scene_id},
          {"items", items},
          {"image", fmt::format("/sets/{}/image.png", set_id)}};
}

nlohmann::json Service::submit_rating(RatingRecord r) {
  if (r.rater.empty()) throw ContractError("rating: empty rater id");
  const auto src = parse_set_id(r.set_id).first;
  (void)set_items(r.set_id);
  if (src != r.source) {
    throw ContractError(fmt::format("rating: set '{}' is a {} set, not {}", r.set_id, to_string(src), to_string(r.source)));
  }
  if (r.timestamp.empty()) r.timestamp = now_utc();
  ratings_.put(r);
  return {{"stored", to_json(r)}, {"records", ratings_.size()}};
}

double Service::source_sfid(Source s) const {
  if (s == Source::groundtruth) return 0.0;
  {
    std::lock_guard lock(cache_mu_);
    if (auto it = sfid_cache_.find(s); it != sfid_cache_.end()) return it->second;
  }
  metrics::SfidOptions opt;
  opt.canvas = config_.canvas;
  opt.seed = config_.seed;
  const double v = metrics::sfid(sets_of(s), sets_of(Source::groundtruth), metrics::GridHistogramExtractor{}, opt).value;
  std::lock_guard lock(cache_mu_);
  sfid_cache_[s] = v;
  return v;
}

nlohmann::json Service::ratings_report() const {
  const auto records = ratings_.all();
  struct Tally {
    std::size_t good = 0, neutral = 0, bad = 0;
    std::size_t n() const { return good + neutral + bad; }
    double score() const { return n() ? static_cast<double>(good) / static_cast<double>(n()) : 0.0; }
  };
  std::map<Source, Tally> per_source;
  std::map<std::string, std::map<Source, Tally>> per_rater;
  for (const auto& r : records) {
    for (Tally* t : {&per_source[r.source], &per_rater[r.rater][r.source]}) {
      if (r.rating == Rating::good) ++t->good;
      else if (r.rating == Rating::neutral) ++t->neutral;
      else ++t->bad;
    }
  }
  nlohmann::json sources = nlohmann::json::object();
  for (Source s : {Source::groundtruth, Source::model, Source::random}) {
    const Tally t = per_source[s];
    nlohmann::json o = {{"n", t.n()}};
    if (t.n()) {
      const double n = static_cast<double>(t.n());
      o["good"] = t.good / n;
      o["neutral"] = t.neutral / n;
      o["bad"] = t.bad / n;
      o["two_level"] = {{"good", t.good / n}, {"not_good", (t.neutral + t.bad) / n}};
    }
    sources[std::string(to_string(s))] = o;
  }

  // one point per (rater, method): SFID of the method against the rater's
  // ground-truth score divided by their score for the method
  std::vector<double> x, y;
  for (const auto& [rater, tallies] : per_rater) {
    const auto gt = tallies.find(Source::groundtruth);
    if (gt == tallies.end() || gt->second.n() == 0) continue;
    for (Source s : {Source::model, Source::random}) {
      const auto m = tallies.find(s);
      if (m == tallies.end() || m->second.score() == 0.0) continue;
      x.push_back(source_sfid(s));
      y.push_back(gt->second.score() / m->second.score());
    }
  }
  nlohmann::json corr = {{"points", x.size()}};
  try {
    if (x.size() < 2) throw ContractError("fewer than 2 (rater, method) points");
    corr["pearson"] = metrics::pearson(x, y);
  } catch (const ContractError& e) {
    corr["pearson"] = nullptr;
    corr["undefined_reason"] = e.what();
  }
  nlohmann::json sfid = nlohmann::json::object();
  if (!x.empty()) {
    for (Source s : {Source::model, Source::random}) sfid[std::string(to_string(s))] = source_sfid(s);
  }
  return {{"records", records.size()}, {"sources", sources}, {"correlation", corr}, {"sfid", sfid}};
}

nlohmann::json Service::eval_fitb(std::size_t candidates, std::uint64_t seed, gen::Mode mode) const {
  const auto tasks = metrics::make_fitb_tasks(scenes_, negatives_, candidates, seed);
  const auto r = metrics::fitb_eval(*model_, tasks, seed, mode);
  const nlohmann::json cfg = {{"candidates", candidates}, {"mode", gen::to_string(mode)}};
  return metrics::to_json(metrics::EvalReport{"fitb", r.accuracy, r.total, seed,
                                              fmt::format("{:016x}", store::config_digest(cfg))});
}

nlohmann::json Service::eval_sfid(const std::string& source, std::uint64_t seed) const {
  metrics::SfidOptions opt;
  opt.canvas = config_.canvas;
  opt.seed = seed;
  const metrics::GridHistogramExtractor ex;
  const auto gt = sets_of(Source::groundtruth);
  metrics::EvalReport r;
  if (source == "split") {
    const auto half = static_cast<std::ptrdiff_t>(gt.size() / 2);
    r = metrics::sfid({gt.begin(), gt.begin() + half}, {gt.begin() + half, gt.end()}, ex, opt);
  } else {
    const Source s = source_from_string(source);
    if (s == Source::groundtruth) throw ContractError("sfid source must be model, random or split");
    r = metrics::sfid(sets_of(s), gt, ex, opt);
  }
  auto j = metrics::to_json(r);
  j["source"] = source;
  return j;
}

std::vector<std::uint8_t> Service::glyph_png(ItemId id) const { return encode_png(synth::render_glyph(item(id), 64)); }

std::vector<std::uint8_t> Service::set_png(const std::string& set_id) const {
  return encode_png(metrics::compose_set(set_items(set_id), config_.canvas, config_.seed, metrics::default_renderer()).image);
}

}  // namespace icar::gateway
