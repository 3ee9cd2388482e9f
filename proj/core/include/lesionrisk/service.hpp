#pragma once

#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "lesionrisk/bundle.hpp"

namespace lesionrisk {

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

/// Request routing over an immutable, calibrated bundle. Safe to call from
/// concurrent handlers.
///
///   POST /v1/predict        record -> prediction
///   POST /v1/predict/batch  [record] -> [prediction], order preserved
///   GET  /v1/model          coefficient table, alpha, leaf count
///   GET  /v1/leaves         per-leaf rules, calibration and profiles
///   GET  /healthz
///
/// 400 for malformed JSON, 422 with per-field issues for invalid records,
/// 404/405 for unknown routes.
class InferenceService {
 public:
  /// Throws Error when the bundle is not calibrated.
  explicit InferenceService(std::shared_ptr<const ModelBundle> bundle);

  ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body) const;

  const ModelBundle& bundle() const noexcept { return *bundle_; }

 private:
  ServiceResponse predict_one(const std::string& body) const;
  ServiceResponse predict_batch(const std::string& body) const;
  nlohmann::json model_info() const;
  nlohmann::json leaves_info() const;

  std::shared_ptr<const ModelBundle> bundle_;
  std::string model_version_;
};

/// Blocking HTTP front end. `start` binds and serves on a background thread;
/// port 0 picks a free port.
class HttpServer {
 public:
  explicit HttpServer(std::shared_ptr<const InferenceService> service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Returns the bound port; throws Error when binding fails.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until `stop`.
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// "host:port" or ":port". The LESIONRISK_ADDR environment variable, when
/// set, takes precedence over `addr`.
std::pair<std::string, int> resolve_bind_address(const std::string& addr);

}  // namespace lesionrisk
