#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "icar/gateway/service.hpp"

namespace icar::gateway {

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Transport-free request handling. JSON responses are wrapped as
/// {"schema": "icar.v1", "data": ...} or {"schema": ..., "error": {code, message}}
/// with 400 for malformed input, 404 for unknown ids, 409 for contract
/// violations and 500 otherwise.
HttpResponse route(Service& service, std::string_view method, std::string_view path, std::string_view body);

/// cpp-httplib front end. The service must outlive the server.
class HttpServer {
 public:
  explicit HttpServer(Service& service, std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Port 0 picks a free one; returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace icar::gateway
