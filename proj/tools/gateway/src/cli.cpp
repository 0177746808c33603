#include "icar/gateway/cli.hpp"

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "icar/error.hpp"
#include "icar/fbt.hpp"
#include "icar/gateway/http.hpp"
#include "icar/gateway/service.hpp"
#include "icar/metrics/fitb.hpp"
#include "icar/metrics/frechet.hpp"
#include "icar/similarity.hpp"
#include "icar/synthworld.hpp"
#include "icar/trainer.hpp"

namespace icar::gateway {

namespace {

using json = nlohmann::json;

constexpr double kTrainFraction = 0.8;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open config '{}'", path));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("config '{}': {}", path, e.what()));
  }
}

struct Loaded {
  synth::World world;
  std::vector<SceneInstance> train, test;
};

Loaded load(const std::string& dir) {
  Loaded l{synth::load_world(dir), {}, {}};
  const auto split = synth::split_world(l.world, kTrainFraction, l.world.config.seed);
  for (auto i : split.train) l.train.push_back(l.world.scenes[i]);
  for (auto i : split.test) l.test.push_back(l.world.scenes[i]);
  return l;
}

class OwnedFbt final : public gen::CompletionModel {
 public:
  explicit OwnedFbt(fbt::FbtModel<float> m) : model_(std::move(m)), adapter_(model_) {}
  std::size_t num_categories() const override { return adapter_.num_categories(); }
  std::unique_ptr<gen::QueryContext> encode(const Embedding& s, const std::vector<Embedding>& p) const override {
    return adapter_.encode(s, p);
  }

 private:
  fbt::FbtModel<float> model_;
  gen::FbtCompletion adapter_;
};

/// "oracle", "random" or a checkpoint path.
std::shared_ptr<const gen::CompletionModel> load_model(const std::string& spec, const Loaded& l, std::uint64_t seed) {
  const auto& c = l.world.config;
  if (spec == "oracle") return std::make_shared<gen::OracleModel>(c.num_categories, l.world.scenes);
  if (spec == "random") return std::make_shared<gen::RandomModel>(c.num_categories, c.embedding_dim, seed);
  auto model = fbt::from_checkpoint(store::read_checkpoint(spec));
  if (model.config.num_categories != c.num_categories || model.config.embedding_dim != c.embedding_dim) {
    throw ContractError(fmt::format("model '{}' expects {} categories / dim {}, world has {} / {}", spec,
                                    model.config.num_categories, model.config.embedding_dim, c.num_categories,
                                    c.embedding_dim));
  }
  return std::make_shared<OwnedFbt>(std::move(model));
}

std::vector<std::size_t> parse_categories(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      std::size_t pos = 0;
      out.push_back(std::stoul(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ContractError(fmt::format("bad category '{}'", tok));
    }
  }
  return out;
}

void emit(std::ostream& out, bool as_json, const json& j, const std::string& text) {
  if (as_json) out << j.dump() << "\n";
  else out << text << "\n";
}

HttpServer* g_server = nullptr;
extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"icar: complementary item set generation on synthetic worlds", "icar"};
  app.require_subcommand(1);
  bool as_json = false;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config_path, out_path, world_dir, model_spec = "", encoder_path, ratings_path, static_dir, host = "127.0.0.1";
  std::string mode_str = "given", source = "model", categories_str, masking, log_path;
  std::size_t candidates = 2, max_items = 9, epochs = 0;
  std::uint64_t scene_id = 0;
  int port = 8080;
  int level = 0;

  auto common = [&](CLI::App* c, bool with_out, bool with_config) {
    c->add_flag("--json", as_json, "machine-readable output");
    c->add_option("--seed", seed, "random seed")->each([&](const std::string&) { seed_given = true; });
    if (with_out) c->add_option("--out", out_path, "output path")->required();
    if (with_config) c->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  };
  auto world_opt = [&](CLI::App* c) { c->add_option("--world", world_dir, "world directory")->required()->check(CLI::ExistingDirectory); };
  auto model_opt = [&](CLI::App* c) {
    c->add_option("--model", model_spec, "fbt checkpoint, or 'oracle' / 'random'")->required();
  };
  app.add_flag("-v,--verbose", level, "more logging");

  auto* gen_data = app.add_subcommand("gen-data", "generate a synthetic world");
  common(gen_data, true, true);

  auto* train_sim = app.add_subcommand("train-sim", "train the stage-1 style encoder");
  common(train_sim, true, true);
  world_opt(train_sim);
  train_sim->add_option("--epochs", epochs, "override epochs")->check(CLI::PositiveNumber);

  auto* embed = app.add_subcommand("embed", "replace world embeddings by stage-1 embeddings");
  common(embed, true, false);
  world_opt(embed);
  embed->add_option("--encoder", encoder_path, "stage-1 checkpoint")->required()->check(CLI::ExistingFile);

  auto* train_fbt = app.add_subcommand("train-fbt", "train the set transformer");
  common(train_fbt, true, true);
  world_opt(train_fbt);
  train_fbt->add_option("--epochs", epochs, "override epochs")->check(CLI::PositiveNumber);
  train_fbt->add_option("--masking", masking, "random or fixed")->check(CLI::IsMember({"random", "fixed"}));
  train_fbt->add_option("--log", log_path, "metrics log (default <out>.log.jsonl)");

  auto* generate = app.add_subcommand("generate", "complete one scene");
  common(generate, false, false);
  world_opt(generate);
  model_opt(generate);
  generate->add_option("--scene", scene_id, "scene id")->required();
  generate->add_option("--mode", mode_str, "given or predict")->check(CLI::IsMember({"given", "predict"}));
  generate->add_option("--categories", categories_str, "comma-separated categories (given mode; default: the scene's)");
  generate->add_option("--max-items", max_items, "set size cap")->check(CLI::Range(1, 9));

  auto* eval_fitb = app.add_subcommand("eval-fitb", "fill-in-the-blank accuracy on the test split");
  common(eval_fitb, false, false);
  world_opt(eval_fitb);
  model_opt(eval_fitb);
  eval_fitb->add_option("--candidates", candidates, "candidates per task")->check(CLI::Range(2, 1000));
  eval_fitb->add_option("--mode", mode_str, "given or predict")->check(CLI::IsMember({"given", "predict"}));

  auto* eval_sfid = app.add_subcommand("eval-sfid", "style FID against the ground-truth test sets");
  common(eval_sfid, false, false);
  world_opt(eval_sfid);
  model_opt(eval_sfid);
  eval_sfid->add_option("--source", source, "model, random or split")->check(CLI::IsMember({"model", "random", "split"}));

  auto* domain = app.add_subcommand("domain-dist", "Frechet distance between the two item domains");
  common(domain, false, false);
  world_opt(domain);

  auto* serve = app.add_subcommand("serve", "run the HTTP gateway");
  common(serve, false, false);
  world_opt(serve);
  model_opt(serve);
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port (0 = any free)")->check(CLI::Range(0, 65535));
  serve->add_option("--ratings", ratings_path, "ratings JSON-lines file");
  serve->add_option("--static", static_dir, "console assets, served under /console")->check(CLI::ExistingDirectory);

  auto* report = app.add_subcommand("report", "summarize collected ratings");
  common(report, false, false);
  world_opt(report);
  model_opt(report);
  report->add_option("--ratings", ratings_path, "ratings JSON-lines file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return 2;
  }
  spdlog::set_level(level > 0 ? spdlog::level::debug : spdlog::level::warn);

  try {
    if (*gen_data) {
      synth::WorldConfig wc;
      if (!config_path.empty()) wc = read_json_file(config_path).get<synth::WorldConfig>();
      if (seed_given) wc.seed = seed;
      const auto w = synth::gen_world(wc);
      synth::save_world(w, out_path);
      const json j = {{"out", out_path},       {"scenes", w.scenes.size()}, {"pool_a", w.pool_a.size()},
                      {"pool_b", w.pool_b.size()}, {"domain_gap", w.domain_gap}, {"theta", wc.theta}};
      emit(out, as_json, j,
           fmt::format("wrote {}: {} scenes, {} scene items, {} catalogue items, domain gap {:.4f} (theta {})", out_path,
                       w.scenes.size(), w.pool_a.size(), w.pool_b.size(), w.domain_gap, wc.theta));
    } else if (*train_sim) {
      const auto l = load(world_dir);
      sim::SimilarityConfig sc;
      if (!config_path.empty()) sc = read_json_file(config_path).get<sim::SimilarityConfig>();
      if (seed_given) sc.seed = seed;
      if (epochs) sc.epochs = epochs;
      sc.embedding_dim = l.world.config.embedding_dim;
      const auto split = synth::split_world(l.world, kTrainFraction, l.world.config.seed);
      const auto trained = sim::train_similarity(sim::stage1_training_set(l.world, split.test), l.world.config.num_styles, sc);
      store::write_checkpoint(out_path, sim::to_checkpoint(trained.encoder));
      std::vector<std::vector<float>> raws;
      std::vector<std::size_t> labels;
      std::unordered_set<std::uint64_t> held;
      for (const auto& s : l.test)
        for (const auto& it : s.items) held.insert(it.id.value);
      for (const auto& r : l.world.raw) {
        if (!r.is_scene && held.contains(r.id)) {
          raws.push_back(r.raw);
          labels.push_back(static_cast<std::size_t>(r.label));
        }
      }
      const double recall = raws.size() >= 2 ? sim::recall_at_1(sim::embed_batch(trained.encoder, raws), labels) : 0.0;
      const auto& last = trained.log.back();
      const json j = {{"out", out_path}, {"epochs", trained.log.size()}, {"final_loss", last.total}, {"heldout_recall_at_1", recall}};
      emit(out, as_json, j, fmt::format("wrote {}: {} epochs, final loss {:.4f}, held-out recall@1 {:.3f}", out_path,
                                        trained.log.size(), last.total, recall));
    } else if (*embed) {
      const auto w = synth::load_world(world_dir);
      const auto enc = sim::from_checkpoint(store::read_checkpoint(encoder_path));
      auto e = sim::embed_world(enc, w);
      e.domain_gap = metrics::domain_distance(synth::embeddings_of(e.pool_a), synth::embeddings_of(e.pool_b));
      synth::save_world(e, out_path);
      const json j = {{"out", out_path}, {"domain_gap_before", w.domain_gap}, {"domain_gap_after", e.domain_gap}};
      emit(out, as_json, j, fmt::format("wrote {}: domain gap {:.4f} -> {:.4f}", out_path, w.domain_gap, e.domain_gap));
    } else if (*train_fbt) {
      const auto l = load(world_dir);
      const auto& wc = l.world.config;
      auto mc = train::desk_model_config(wc.num_categories, wc.embedding_dim);
      auto tc = train::desk_train_config();
      if (!config_path.empty()) {
        const auto j = read_json_file(config_path);
        if (j.contains("model")) mc = j["model"].get<fbt::FbtConfig>();
        if (j.contains("train")) tc = j["train"].get<train::TrainConfig>();
      }
      mc.num_categories = wc.num_categories;
      mc.embedding_dim = wc.embedding_dim;
      if (seed_given) mc.seed = tc.seed = seed;
      if (epochs) tc.epochs = epochs;
      if (masking == "fixed") tc.sampler.masking = train::Masking::fixed_length;
      if (masking == "random") tc.sampler.masking = train::Masking::random_length;
      tc.log_path = log_path.empty() ? out_path + ".log.jsonl" : log_path;
      tc.checkpoint_path = out_path;
      auto model = fbt::FbtModel<float>::create(mc);
      const auto result = train::train_fbt(l.train, l.world.pool_a, model, tc);
      if (result.diverged) throw NumericError(result.message);
      const json j = {{"out", out_path},
                      {"log", tc.log_path->string()},
                      {"epochs", result.log.size()},
                      {"initial_loss", result.log.front().total},
                      {"final_loss", result.log.back().total}};
      emit(out, as_json, j, fmt::format("wrote {}: {} epochs, loss {:.4f} -> {:.4f}", out_path, result.log.size(),
                                        result.log.front().total, result.log.back().total));
    } else if (*generate) {
      const auto l = load(world_dir);
      const auto model = load_model(model_spec, l, seed);
      const gen::RetrievalIndex index(l.world.pool_b);
      const SceneInstance* sc = nullptr;
      for (const auto& s : l.world.scenes)
        if (s.id == scene_id) sc = &s;
      if (!sc) throw NotFoundError(fmt::format("unknown scene {}", scene_id));
      gen::GenerationRequest req;
      req.scene = sc->scene_embedding;
      req.mode = gen::mode_from_string(mode_str);
      req.max_items = max_items;
      if (req.mode == gen::Mode::given_category) {
        if (categories_str.empty()) {
          for (const auto& it : sc->items) req.given_categories.push_back(it.category);
        } else {
          req.given_categories = parse_categories(categories_str);
        }
      } else if (!categories_str.empty()) {
        throw ContractError("--categories needs --mode given");
      }
      const auto res = gen::generate_set(*model, index, req);
      auto items = json::array();
      std::string text = fmt::format("scene {} ({} mode), stop: {}", scene_id, mode_str, gen::to_string(res.reason));
      for (const auto& g : res.items) {
        auto ij = item_json(g.item);
        ij["score"] = g.score;
        items.push_back(ij);
        text += fmt::format("\n  category {}  item {}  cos {:.4f}", g.category, g.item.id.value, g.score);
      }
      emit(out, as_json, {{"scene_id", scene_id}, {"mode", mode_str}, {"stop_reason", gen::to_string(res.reason)}, {"items", items}}, text);
    } else if (*eval_fitb || *eval_sfid || *report) {
      const auto l = load(world_dir);
      ServiceConfig cfg;
      cfg.seed = seed;
      if (*report) cfg.ratings_path = ratings_path;
      Service svc(l.test, l.world.pool_b, l.world.pool_a, load_model(model_spec, l, seed), cfg);
      if (*eval_fitb) {
        const auto j = svc.eval_fitb(candidates, seed, gen::mode_from_string(mode_str));
        emit(out, as_json, j, fmt::format("fitb accuracy {:.4f} over {} tasks ({} candidates, {} mode)", j["value"].get<double>(),
                                          j["n"].get<std::size_t>(), candidates, mode_str));
      } else if (*eval_sfid) {
        const auto j = svc.eval_sfid(source, seed);
        emit(out, as_json, j, fmt::format("sfid ({}) {:.6f} over {} sets", source, j["value"].get<double>(), j["n"].get<std::size_t>()));
      } else {
        const auto j = svc.ratings_report();
        out << j.dump(as_json ? -1 : 2) << "\n";
      }
    } else if (*domain) {
      const auto w = synth::load_world(world_dir);
      const double d = metrics::domain_distance(synth::embeddings_of(w.pool_a), synth::embeddings_of(w.pool_b));
      emit(out, as_json, {{"domain_distance", d}, {"theta", w.config.theta}, {"above_theta", d > w.config.theta}},
           fmt::format("domain distance {:.6f} (theta {})", d, w.config.theta));
    } else if (*serve) {
      const auto l = load(world_dir);
      ServiceConfig cfg;
      cfg.seed = seed;
      if (!ratings_path.empty()) cfg.ratings_path = ratings_path;
      Service svc(l.test, l.world.pool_b, l.world.pool_a, load_model(model_spec, l, seed), cfg);
      HttpServer server(svc, static_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(static_dir));
      const int bound = server.bind(host, port);
      emit(out, as_json, {{"host", host}, {"port", bound}}, fmt::format("listening on http://{}:{}", host, bound));
      out.flush();
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.listen();
      g_server = nullptr;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace icar::gateway
