#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <unistd.h>

#include "icar/error.hpp"
#include "icar/gateway/cli.hpp"
#include "icar/gateway/http.hpp"
#include "icar/gateway/service.hpp"
#include "icar/synthworld.hpp"

using namespace icar;
using namespace icar::gateway;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

synth::WorldConfig small_config() {
  synth::WorldConfig c;
  c.num_scenes = 120;
  c.items_per_category = 40;
  c.seed = 5;
  return c;
}

const synth::World& world() {
  static const synth::World w = synth::gen_world(small_config());
  return w;
}

std::unique_ptr<Service> oracle_service(ServiceConfig cfg = {}) {
  const auto& w = world();
  return std::make_unique<Service>(w.scenes, w.pool_b, w.pool_a,
                                   std::make_shared<gen::OracleModel>(w.config.num_categories, w.scenes), cfg);
}

json data_of(const HttpResponse& r) {
  const auto j = json::parse(r.body);
  REQUIRE(j["schema"] == kSchema);
  return j["data"];
}

std::string error_code(const HttpResponse& r) {
  const auto j = json::parse(r.body);
  REQUIRE(j["schema"] == kSchema);
  REQUIRE(j.contains("error"));
  CHECK(j["error"]["message"].is_string());
  return j["error"]["code"];
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / fmt::format("icar_gw_{}_{}", name, ::getpid());
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "icar");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return rc;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("http: envelope on every response, error mapping") {
  auto svc = oracle_service();
  const auto scenes = data_of(route(*svc, "GET", "/scenes", ""));
  REQUIRE(scenes.size() == world().scenes.size());

  const auto nf = route(*svc, "GET", "/sessions/nope", "");
  CHECK(nf.status == 404);
  CHECK(error_code(nf) == "not_found");
  CHECK(route(*svc, "GET", "/no/such/route", "").status == 404);
  CHECK(route(*svc, "POST", "/sessions/nope/step", R"({"accept": 1})").status == 404);
  CHECK(route(*svc, "POST", "/sessions", R"({"scene_id": 999999})").status == 404);
  CHECK(route(*svc, "GET", "/sets/model:999999", "").status == 404);
  CHECK(route(*svc, "GET", "/sets/bogus", "").status == 404);

  const auto bad = route(*svc, "POST", "/sessions", "{not json");
  CHECK(bad.status == 400);
  CHECK(error_code(bad) == "bad_request");
  CHECK(route(*svc, "POST", "/sessions", "[1,2]").status == 400);
  CHECK(route(*svc, "GET", "/items/abc/glyph.png", "").status == 400);

  const auto missing = route(*svc, "POST", "/sessions", "{}");
  CHECK(missing.status == 409);
  CHECK(error_code(missing) == "contract");

  const auto sid = world().scenes[0].id;
  const auto created = route(*svc, "POST", "/sessions", json{{"scene_id", sid}, {"mode", "given"}}.dump());
  CHECK(created.status == 201);
  const auto s = data_of(created);
  const std::string id = s["id"];
  const std::uint64_t suggested = s["suggestion"]["item"]["id"];

  // accept something never suggested
  const auto wrong = route(*svc, "POST", "/sessions/" + id + "/step", json{{"accept", suggested + 100000}}.dump());
  CHECK(wrong.status == 409);
  CHECK(route(*svc, "POST", "/sessions/" + id + "/step", json{{"accept", suggested}, {"reject", suggested}}.dump()).status == 409);
  CHECK(route(*svc, "POST", "/sessions/" + id + "/step", "{}").status == 409);
  CHECK(route(*svc, "POST", "/sessions", json{{"scene_id", sid}, {"mode", "predict"}, {"categories", {0}}}.dump()).status == 409);
  CHECK(route(*svc, "POST", "/sessions", json{{"scene_id", sid}, {"mode", "sideways"}}.dump()).status == 409);
  CHECK(route(*svc, "POST", "/sessions", json{{"scene_id", sid}, {"categories", {0, 99}}}.dump()).status == 409);

  CHECK(data_of(route(*svc, "GET", "/sessions/" + id, ""))["id"] == id);

  const auto png = route(*svc, "GET", fmt::format("/items/{}/glyph.png", world().pool_b.items()[0].id.value), "");
  CHECK(png.status == 200);
  CHECK(png.content_type == "image/png");
  CHECK(png.body.substr(1, 3) == "PNG");
  CHECK(route(*svc, "GET", fmt::format("/sets/groundtruth:{}/image.png", sid), "").content_type == "image/png");

  const auto set = data_of(route(*svc, "GET", fmt::format("/sets/random:{}", sid), ""));
  CHECK(set["items"].size() == world().scenes[0].items.size());
}

TEST_CASE("session: first suggestion honours the given category") {
  auto svc = oracle_service();
  const auto& sc = world().scenes[3];
  const std::size_t cat = sc.items[1].category;
  const auto s = svc->create_session(sc.id, gen::Mode::given_category, std::vector<std::size_t>{cat});
  CHECK(s["suggestion"]["category"] == cat);
  CHECK(s["suggestion"]["item"]["category"] == cat);
  CHECK(s["terminal"] == false);
  CHECK(s["remaining_categories"] == json::array({cat}));
}

TEST_CASE("session: reject moves to the previous rank-2 item of the same category") {
  auto svc = oracle_service();
  for (std::size_t k = 0; k < 10; ++k) {
    const auto& sc = world().scenes[k];
    auto s = svc->create_session(sc.id, gen::Mode::given_category, std::nullopt);
    for (int round = 0; round < 3; ++round) {
      const auto sug = s["suggestion"];
      REQUIRE(sug["alternatives"].size() >= 2);
      CHECK(sug["alternatives"][0]["id"] == sug["item"]["id"]);
      const std::uint64_t rank2 = sug["alternatives"][1]["id"];
      s = svc->step(s["id"], std::nullopt, ItemId{sug["item"]["id"].get<std::uint64_t>()});
      CHECK(s["suggestion"]["item"]["id"] == rank2);
      CHECK(s["suggestion"]["category"] == sug["category"]);
    }
    CHECK(s["rejected"].size() == 3);
  }
}

TEST_CASE("session: accept-only reproduces generate_set") {
  const auto& w = world();
  auto svc = oracle_service();
  const gen::OracleModel model(w.config.num_categories, w.scenes);
  const gen::RetrievalIndex index(w.pool_b);
  for (std::size_t k = 0; k < 20; ++k) {
    const auto& sc = w.scenes[k];
    for (auto mode : {gen::Mode::given_category, gen::Mode::predict_category}) {
      gen::GenerationRequest req;
      req.scene = sc.scene_embedding;
      req.mode = mode;
      if (mode == gen::Mode::given_category)
        for (const auto& it : sc.items) req.given_categories.push_back(it.category);
      const auto batch = gen::generate_set(model, index, req);

      auto s = svc->create_session(sc.id, mode, std::nullopt);
      std::size_t steps = 0;
      while (!s["terminal"].get<bool>()) {
        s = svc->step(s["id"], ItemId{s["suggestion"]["item"]["id"].get<std::uint64_t>()}, std::nullopt);
        REQUIRE(++steps <= 9);
      }
      REQUIRE(s["accepted"].size() == batch.items.size());
      for (std::size_t i = 0; i < batch.items.size(); ++i) CHECK(s["accepted"][i]["id"] == batch.items[i].item.id.value);
      CHECK(s["stop_reason"] == gen::to_string(batch.reason));
    }
  }
}

TEST_CASE("session: nine accepts end the session, later steps are refused") {
  auto svc = oracle_service();
  const auto& sc = world().scenes[0];
  // the scene's categories, repeated up to nine
  std::vector<std::size_t> nine;
  for (std::size_t i = 0; nine.size() < 9; ++i) nine.push_back(sc.items[i % sc.items.size()].category);
  auto s = svc->create_session(sc.id, gen::Mode::given_category, nine);
  std::uint64_t last = 0;
  for (int i = 0; i < 9; ++i) {
    REQUIRE_FALSE(s["terminal"].get<bool>());
    // a reject along the way; accepted and rejected stay disjoint
    if (i == 4) s = svc->step(s["id"], std::nullopt, ItemId{s["suggestion"]["item"]["id"].get<std::uint64_t>()});
    last = s["suggestion"]["item"]["id"];
    s = svc->step(s["id"], ItemId{last}, std::nullopt);
  }
  CHECK(s["terminal"] == true);
  CHECK(s["accepted"].size() == 9);
  CHECK(s["suggestion"].is_null());
  for (const auto& r : s["rejected"])
    for (const auto& a : s["accepted"]) CHECK(a["id"] != r);
  CHECK_THROWS_AS(svc->step(s["id"], ItemId{last}, std::nullopt), ContractError);
  CHECK_THROWS_AS(svc->create_session(sc.id, gen::Mode::given_category, std::vector<std::size_t>(10, 0)), ContractError);

  ServiceConfig small;
  small.max_items = 3;
  auto svc3 = oracle_service(small);
  auto t = svc3->create_session(sc.id, gen::Mode::predict_category, std::nullopt);
  for (int i = 0; i < 3 && !t["terminal"].get<bool>(); ++i)
    t = svc3->step(t["id"], ItemId{t["suggestion"]["item"]["id"].get<std::uint64_t>()}, std::nullopt);
  CHECK(t["terminal"] == true);
  CHECK(t["accepted"].size() <= 3);
}

TEST_CASE("ratings: idempotent per (rater, set), persisted last-write-wins") {
  const auto dir = temp_dir("ratings");
  const auto path = dir / "ratings.jsonl";
  const auto sid = world().scenes[0].id;
  const std::string set = fmt::format("model:{}", sid);
  {
    ServiceConfig cfg;
    cfg.ratings_path = path;
    auto svc = oracle_service(cfg);
    const auto body = json{{"rater", "r1"}, {"set_id", set}, {"source", "model"}, {"rating", "good"}};
    CHECK(route(*svc, "POST", "/ratings", body.dump()).status == 201);
    CHECK(route(*svc, "POST", "/ratings", body.dump()).status == 201);
    auto changed = body;
    changed["rating"] = "bad";
    CHECK(route(*svc, "POST", "/ratings", changed.dump()).status == 201);
    CHECK(svc->ratings().size() == 1);
    CHECK(svc->ratings().all()[0].rating == Rating::bad);

    CHECK(route(*svc, "POST", "/ratings", json{{"rater", "r1"}, {"set_id", "model:999999"}, {"source", "model"}, {"rating", "good"}}.dump()).status == 404);
    CHECK(route(*svc, "POST", "/ratings", json{{"rater", "r1"}, {"set_id", set}, {"source", "random"}, {"rating", "good"}}.dump()).status == 409);
    CHECK(route(*svc, "POST", "/ratings", json{{"rater", "r1"}, {"set_id", set}, {"source", "model"}, {"rating", "great"}}.dump()).status == 409);
    CHECK(route(*svc, "POST", "/ratings", json{{"rater", "r1"}, {"set_id", set}}.dump()).status == 409);
  }
  RatingStore reloaded(path);
  REQUIRE(reloaded.size() == 1);
  CHECK(reloaded.all()[0].rating == Rating::bad);
  CHECK_FALSE(reloaded.all()[0].timestamp.empty());
  fs::remove_all(dir);
}

TEST_CASE("ratings report: identical sources give an undefined correlation") {
  auto svc = oracle_service();
  for (const char* rater : {"a", "b"}) {
    for (std::size_t k = 0; k < 3; ++k) {
      const auto sid = world().scenes[k].id;
      for (const char* src : {"groundtruth", "model", "random"}) {
        RatingRecord r{rater, fmt::format("{}:{}", src, sid), source_from_string(src), Rating::good, ""};
        svc->submit_rating(r);
      }
    }
  }
  const auto rep = data_of(route(*svc, "GET", "/reports/ratings", ""));
  CHECK(rep["records"] == 18);
  CHECK(rep["sources"]["model"]["good"] == 1.0);
  CHECK(rep["sources"]["model"]["two_level"]["not_good"] == 0.0);
  CHECK(rep["correlation"]["pearson"].is_null());
  CHECK(rep["correlation"]["undefined_reason"].get<std::string>().find("zero variance") != std::string::npos);
}

TEST_CASE("ratings report: simulated raters tracking SFID correlate") {
  // same-domain catalogue, so the oracle's sets are far closer to ground truth than random ones
  const auto& w = world();
  auto svc = std::make_unique<Service>(w.scenes, w.pool_a, w.pool_a,
                                       std::make_shared<gen::OracleModel>(w.config.num_categories, w.scenes));
  const double s_model = svc->source_sfid(Source::model), s_random = svc->source_sfid(Source::random);
  REQUIRE(s_model < 0.5 * s_random);
  // each rater's good-fraction is a linear function of -SFID plus rater noise
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 0.04);
  const std::size_t n_sets = world().scenes.size();
  for (int r = 0; r < 8; ++r) {
    const std::string rater = fmt::format("rater{}", r);
    const double bias = noise(rng);
    auto p_good = [&](double sfid) { return std::clamp(0.9 + bias - 0.6 * sfid / s_random + noise(rng), 0.05, 1.0); };
    for (auto [src, p] : {std::pair{Source::groundtruth, p_good(0.0)}, {Source::model, p_good(s_model)},
                          {Source::random, p_good(s_random)}}) {
      std::vector<std::size_t> order(n_sets);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      const auto n_good = static_cast<std::size_t>(std::lround(p * static_cast<double>(n_sets)));
      for (std::size_t k = 0; k < n_sets; ++k) {
        const auto id = fmt::format("{}:{}", to_string(src), world().scenes[order[k]].id);
        const Rating rating = k < n_good ? Rating::good : (k % 2 ? Rating::neutral : Rating::bad);
        svc->submit_rating(RatingRecord{rater, id, src, rating, ""});
      }
    }
  }
  const auto rep = svc->ratings_report();
  CHECK(rep["correlation"]["points"] == 16);
  REQUIRE(rep["correlation"]["pearson"].is_number());
  CHECK(rep["correlation"]["pearson"].get<double>() > 0.6);
  const auto& src = rep["sources"];
  for (const char* s : {"groundtruth", "model", "random"}) {
    const double total = src[s]["good"].get<double>() + src[s]["neutral"].get<double>() + src[s]["bad"].get<double>();
    CHECK(total == doctest::Approx(1.0));
  }
}

TEST_CASE("eval endpoints") {
  auto svc = oracle_service();
  const auto f = data_of(route(*svc, "POST", "/eval/fitb", R"({"candidates": 3, "seed": 2})"));
  CHECK(f["metric"] == "fitb");
  CHECK(f["value"] == 1.0);
  CHECK(f["n"] == world().scenes.size());
  CHECK(route(*svc, "POST", "/eval/fitb", R"({"candidates": 1})").status == 409);
  const auto split = data_of(route(*svc, "POST", "/eval/sfid", R"({"source": "split"})"));
  const auto rnd = data_of(route(*svc, "POST", "/eval/sfid", R"({"source": "random"})"));
  CHECK(split["n"] == world().scenes.size() / 2);
  CHECK(rnd["n"] == world().scenes.size());
  CHECK(split["value"].get<double>() >= 0.0);
  CHECK(rnd["value"].get<double>() > 0.0);
  CHECK(route(*svc, "POST", "/eval/sfid", R"({"source": "groundtruth"})").status == 409);
}

TEST_CASE("http server answers over a real socket") {
  auto svc = oracle_service();
  HttpServer server(*svc);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread t([&] { server.listen(); });
  httplib::Client client("127.0.0.1", port);
  client.set_connection_timeout(5);
  auto res = client.Get("/scenes");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["schema"] == kSchema);
  auto created = client.Post("/sessions", json{{"scene_id", world().scenes[1].id}}.dump(), "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  auto missing = client.Get("/sessions/zzz");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  server.stop();
  t.join();
}

TEST_CASE("cli: usage errors exit 2, runtime errors exit 1") {
  std::string out, err;
  CHECK(cli({"--help"}, &out) == 0);
  CHECK(out.find("gen-data") != std::string::npos);
  CHECK(cli({}, nullptr, &err) == 2);
  CHECK(cli({"frobnicate"}, nullptr, &err) == 2);
  CHECK(cli({"gen-data", "--out", "x", "--bogus"}, nullptr, &err) == 2);
  CHECK(err.find("Usage") != std::string::npos);

  const auto dir = temp_dir("cli_err");
  std::ofstream(dir / "bad.json") << "{\"num_scenes\": 0}";
  CHECK(cli({"gen-data", "--config", (dir / "bad.json").string(), "--out", (dir / "w").string()}, nullptr, &err) == 1);
  CHECK(err.rfind("error:", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("cli: gen-data is deterministic, eval-fitb on the oracle scores 1") {
  const auto dir = temp_dir("cli");
  std::ofstream(dir / "world.json") << json(small_config()).dump();
  const auto cfg = (dir / "world.json").string();
  std::string out;
  REQUIRE(cli({"gen-data", "--seed", "7", "--config", cfg, "--out", (dir / "a").string(), "--json"}, &out) == 0);
  CHECK(json::parse(out)["scenes"] == 120);
  REQUIRE(cli({"gen-data", "--seed", "7", "--config", cfg, "--out", (dir / "b").string()}) == 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    ++files;
    CHECK_MESSAGE(slurp(e.path()) == slurp(dir / "b" / e.path().filename()), e.path().filename().string());
  }
  CHECK(files >= 6);
  REQUIRE(cli({"gen-data", "--seed", "8", "--config", cfg, "--out", (dir / "c").string()}) == 0);
  CHECK(slurp(dir / "a" / "pool_a.bin") != slurp(dir / "c" / "pool_a.bin"));

  const auto w = (dir / "a").string();
  REQUIRE(cli({"eval-fitb", "--world", w, "--model", "oracle", "--candidates", "2", "--json"}, &out) == 0);
  const auto j = json::parse(out);
  CHECK(j["value"] == 1.0);
  CHECK(j["n"] == 24);  // the 20% test split
  std::string err;
  CHECK(cli({"eval-fitb", "--world", w, "--model", "oracle", "--candidates", "0"}, nullptr, &err) == 2);
  CHECK(err.find("candidates") != std::string::npos);
  CHECK(cli({"eval-fitb", "--world", w, "--model", (dir / "none.ckpt").string()}) == 1);

  REQUIRE(cli({"domain-dist", "--world", w, "--json"}, &out) == 0);
  CHECK(json::parse(out)["above_theta"] == true);
  REQUIRE(cli({"generate", "--world", w, "--model", "oracle", "--scene", "0", "--json"}, &out) == 0);
  CHECK(json::parse(out)["stop_reason"] == "categories-exhausted");
  REQUIRE(cli({"eval-sfid", "--world", w, "--model", "random", "--source", "split", "--json"}, &out) == 0);
  CHECK(json::parse(out)["value"].get<double>() >= 0.0);
  fs::remove_all(dir);
}
