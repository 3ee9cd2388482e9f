#include "lesionrisk/service.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "lesionrisk/pipeline.hpp"

namespace lesionrisk {
namespace {

nlohmann::json issues_json(const ValidationError& e) {
  auto out = nlohmann::json::array();
  for (const auto& i : e.issues()) out.push_back({{"field", i.field}, {"message", i.message}});
  return out;
}

ServiceResponse error_response(int status, const std::string& code, const std::string& message) {
  return {status, {{"error", code}, {"message", message}}};
}

ServiceResponse validation_response(const ValidationError& e, std::optional<std::size_t> index = std::nullopt) {
  ServiceResponse r{422, {{"error", "validation_error"}, {"message", e.what()}, {"issues", issues_json(e)}}};
  if (index) r.body["index"] = *index;
  return r;
}

std::optional<nlohmann::json> parse_body(const std::string& body, ServiceResponse& failure) {
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    failure = error_response(400, "malformed_json", e.what());
    return std::nullopt;
  }
}

}  // namespace

InferenceService::InferenceService(std::shared_ptr<const ModelBundle> bundle) : bundle_(std::move(bundle)) {
  if (!bundle_ || !bundle_->calibrated()) throw Error("the service needs a calibrated bundle");
  model_version_ = bundle_->model_version();
}

ServiceResponse InferenceService::handle(const std::string& method, const std::string& path,
                                         const std::string& body) const {
  try {
    if (path == "/healthz") {
      if (method != "GET") return error_response(405, "method_not_allowed", "use GET");
      return {200, {{"status", "ok"}, {"model_version", model_version_}}};
    }
    if (path == "/v1/predict") {
      if (method != "POST") return error_response(405, "method_not_allowed", "use POST");
      return predict_one(body);
    }
    if (path == "/v1/predict/batch") {
      if (method != "POST") return error_response(405, "method_not_allowed", "use POST");
      return predict_batch(body);
    }
    if (path == "/v1/model") {
      if (method != "GET") return error_response(405, "method_not_allowed", "use GET");
      return {200, model_info()};
    }
    if (path == "/v1/leaves") {
      if (method != "GET") return error_response(405, "method_not_allowed", "use GET");
      return {200, leaves_info()};
    }
    return error_response(404, "not_found", "no route for " + path);
  } catch (const ValidationError& e) {
    return validation_response(e);
  } catch (const std::exception& e) {
    return error_response(500, "internal_error", e.what());
  }
}

ServiceResponse InferenceService::predict_one(const std::string& body) const {
  ServiceResponse failure;
  const auto j = parse_body(body, failure);
  if (!j) return failure;
  const auto record = record_from_json(*j);
  return {200, to_json(predict(*bundle_, record))};
}

ServiceResponse InferenceService::predict_batch(const std::string& body) const {
  ServiceResponse failure;
  const auto j = parse_body(body, failure);
  if (!j) return failure;
  if (!j->is_array()) return error_response(422, "validation_error", "batch body must be a JSON array");
  std::vector<LesionRecord> records;
  records.reserve(j->size());
  for (std::size_t i = 0; i < j->size(); ++i) {
    try {
      records.push_back(record_from_json((*j)[i]));
    } catch (const ValidationError& e) {
      return validation_response(e, i);
    }
  }
  auto out = nlohmann::json::array();
  for (const auto& r : records) out.push_back(to_json(predict(*bundle_, r)));
  return {200, out};
}

nlohmann::json InferenceService::model_info() const {
  const auto& m = bundle_->model;
  const auto columns = m.encoder.column_names();
  auto coefficients = nlohmann::json::array();
  for (std::size_t i = 0; i < columns.size(); ++i) {
    coefficients.push_back({{"feature", columns[i]}, {"weight", m.weights[i]}});
  }
  auto standardization = nlohmann::json::array();
  for (const auto& f : m.encoder.features) {
    if (is_numeric(f.feature)) {
      standardization.push_back({{"feature", to_string(f.feature)}, {"mean", f.mean}, {"sd", f.sd}});
    }
  }
  auto features = nlohmann::json::array();
  for (const auto& f : m.encoder.features) features.push_back(to_string(f.feature));
  return {{"model_version", model_version_},
          {"schema_version", bundle_->schema_version},
          {"features", features},
          {"intercept", m.intercept},
          {"coefficients", coefficients},
          {"standardization", standardization},
          {"C", m.c},
          {"alpha", bundle_->alpha()},
          {"leaf_count", bundle_->tree->leaf_count()},
          {"tree", to_json(*bundle_->tree)}};
}

nlohmann::json InferenceService::leaves_info() const {
  std::map<std::int64_t, nlohmann::json> profiles;
  if (bundle_->metadata.contains("leaf_profiles")) {
    for (const auto& p : bundle_->metadata.at("leaf_profiles")) profiles[p.at("leaf_id").get<std::int64_t>()] = p;
  }
  auto leaves = nlohmann::json::array();
  for (const auto& [id, lc] : bundle_->calibration->leaves) {
    nlohmann::json leaf{{"leaf_id", id},
                        {"rule_path", bundle_->tree->leaf_rule(id)},
                        {"k", lc.k},
                        {"alpha_tilde", lc.alpha_tilde},
                        {"rank", lc.rank},
                        {"q", lc.q},
                        {"cutoff", 1.0 - lc.q},
                        {"fallback_used", lc.fallback_used}};
    auto it = profiles.find(id);
    leaf["profile"] = it == profiles.end() ? nlohmann::json(nullptr) : it->second;
    leaves.push_back(leaf);
  }
  return {{"model_version", model_version_},
          {"alpha", bundle_->alpha()},
          {"pooled", to_json(bundle_->calibration->pooled)},
          {"leaves", leaves}};
}

struct HttpServer::Impl {
  std::shared_ptr<const InferenceService> service;
  httplib::Server server;
  std::thread thread;
};

HttpServer::HttpServer(std::shared_ptr<const InferenceService> service) : impl_(std::make_unique<Impl>()) {
  impl_->service = std::move(service);
  auto route = [svc = impl_->service](const httplib::Request& req, httplib::Response& res) {
    const auto out = svc->handle(req.method, req.path, req.body);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  impl_->server.Get(".*", route);
  impl_->server.Post(".*", route);
  impl_->server.Put(".*", route);
  impl_->server.Delete(".*", route);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error("cannot serve on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::pair<std::string, int> resolve_bind_address(const std::string& addr) {
  std::string text = addr;
  if (const char* env = std::getenv("LESIONRISK_ADDR"); env != nullptr && *env != '\0') text = env;
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw ValidationError("addr", "address must look like host:port");
  std::string host = text.substr(0, colon);
  if (host.empty()) host = "127.0.0.1";
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("port");
  } catch (const std::exception&) {
    throw ValidationError("addr", "port in '" + text + "' is not a number");
  }
  if (port < 0 || port > 65535) throw ValidationError("addr", "port out of range");
  return {host, port};
}

}  // namespace lesionrisk
