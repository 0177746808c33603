#include "icar/gateway/http.hpp"

#include <charconv>
#include <regex>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "icar/error.hpp"

namespace icar::gateway {

namespace {

using json = nlohmann::json;

HttpResponse ok(json data, int status = 200) {
  return {status, "application/json", json{{"schema", kSchema}, {"data", std::move(data)}}.dump()};
}

HttpResponse fail(int status, std::string_view code, std::string_view message) {
  return {status, "application/json",
          json{{"schema", kSchema}, {"error", {{"code", code}, {"message", message}}}}.dump()};
}

std::uint64_t parse_u64(const std::string& s, std::string_view what) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw std::invalid_argument(fmt::format("bad {} '{}'", what, s));
  return v;
}

json parse_body(std::string_view body) {
  if (body.empty()) return json::object();
  json j = json::parse(body);
  if (!j.is_object()) throw std::invalid_argument("request body must be a JSON object");
  return j;
}

template <typename T>
T field(const json& j, const char* key, T fallback) {
  return j.contains(key) && !j[key].is_null() ? j[key].get<T>() : fallback;
}

HttpResponse dispatch(Service& svc, std::string_view method, const std::string& path, std::string_view body) {
  static const std::regex session_re(R"(^/sessions/([^/]+)$)");
  static const std::regex step_re(R"(^/sessions/([^/]+)/step$)");
  static const std::regex glyph_re(R"(^/items/([^/]+)/glyph\.png$)");
  static const std::regex set_re(R"(^/sets/([^/]+)$)");
  static const std::regex set_png_re(R"(^/sets/([^/]+)/image\.png$)");
  std::smatch m;
  const bool get = method == "GET", post = method == "POST";

  if (get && path == "/scenes") return ok(svc.list_scenes());
  if (post && path == "/sessions") {
    const json j = parse_body(body);
    if (!j.contains("scene_id")) throw ContractError("missing 'scene_id'");
    std::optional<std::vector<std::size_t>> cats;
    if (j.contains("categories") && !j["categories"].is_null()) cats = j["categories"].get<std::vector<std::size_t>>();
    const auto mode = gen::mode_from_string(field<std::string>(j, "mode", cats ? "given" : "predict"));
    return ok(svc.create_session(j["scene_id"].get<std::uint64_t>(), mode, cats), 201);
  }
  if (post && std::regex_match(path, m, step_re)) {
    const json j = parse_body(body);
    std::optional<ItemId> accept, reject;
    if (j.contains("accept") && !j["accept"].is_null()) accept = ItemId{j["accept"].get<std::uint64_t>()};
    if (j.contains("reject") && !j["reject"].is_null()) reject = ItemId{j["reject"].get<std::uint64_t>()};
    return ok(svc.step(m[1], accept, reject));
  }
  if (get && std::regex_match(path, m, session_re)) return ok(svc.get_session(m[1]));
  if (get && std::regex_match(path, m, set_re)) return ok(svc.get_set(m[1]));
  if (get && std::regex_match(path, m, set_png_re)) {
    const auto png = svc.set_png(m[1]);
    return {200, "image/png", std::string(png.begin(), png.end())};
  }
  if (post && path == "/ratings") return ok(svc.submit_rating(rating_from_json(parse_body(body))), 201);
  if (get && path == "/reports/ratings") return ok(svc.ratings_report());
  if (post && path == "/eval/fitb") {
    const json j = parse_body(body);
    const auto candidates = field<std::size_t>(j, "candidates", 2);
    return ok(svc.eval_fitb(candidates, field<std::uint64_t>(j, "seed", 0),
                            gen::mode_from_string(field<std::string>(j, "mode", "given"))));
  }
  if (post && path == "/eval/sfid") {
    const json j = parse_body(body);
    return ok(svc.eval_sfid(field<std::string>(j, "source", "model"), field<std::uint64_t>(j, "seed", 0)));
  }
  if (get && std::regex_match(path, m, glyph_re)) {
    const auto png = svc.glyph_png(ItemId{parse_u64(m[1], "item id")});
    return {200, "image/png", std::string(png.begin(), png.end())};
  }
  return fail(404, "not_found", fmt::format("no route for {} {}", method, path));
}

}  // namespace

HttpResponse route(Service& service, std::string_view method, std::string_view path, std::string_view body) {
  try {
    return dispatch(service, method, std::string(path), body);
  } catch (const NotFoundError& e) {
    return fail(404, "not_found", e.what());
  } catch (const ContractError& e) {
    return fail(409, "contract", e.what());
  } catch (const json::exception& e) {
    return fail(400, "bad_request", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(400, "bad_request", e.what());
  } catch (const ShapeError& e) {
    return fail(400, "bad_request", e.what());
  } catch (const std::exception& e) {
    spdlog::error("{} {}: {}", method, path, e.what());
    return fail(500, "internal", e.what());
  }
}

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  explicit Impl(Service& s) : service(s) {}
};

HttpServer::HttpServer(Service& service, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(service)) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = route(impl_->service, req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  if (static_dir) {
    if (!impl_->server.set_mount_point("/console", static_dir->string())) {
      throw ContractError(fmt::format("static directory '{}' does not exist", static_dir->string()));
    }
  }
  impl_->server.Get("/.*", handler);
  impl_->server.Post("/.*", handler);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error(fmt::format("cannot bind {}", host));
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error(fmt::format("cannot bind {}:{}", host, port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace icar::gateway
