#include <cmath>
#include <cstdlib>
#include <random>

#include <gtest/gtest.h>

#include "lesionrisk/service.hpp"
#include "test_support.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen headers.
#include <httplib.h>

namespace lesionrisk {
namespace {

using nlohmann::json;

std::shared_ptr<const ModelBundle> shared_bundle() {
  static const auto b = std::make_shared<const ModelBundle>(testing::small_calibrated_bundle());
  return b;
}

const InferenceService& service() {
  static const InferenceService s(shared_bundle());
  return s;
}

int code_of(const std::string& name, const char* const* vocab, int n) {
  for (int i = 0; i < n; ++i) {
    if (name == vocab[i]) return i;
  }
  return -1;
}

// Recomputes a prediction from the serialized bundle alone.
json golden_prediction(const json& bundle, const json& record) {
  static const char* shapes[] = {"oval", "round", "irregular"};
  static const char* margins[] = {"circumscribed", "indistinct", "angular", "microlobulated", "spiculated"};
  static const char* orientations[] = {"parallel", "not_parallel"};
  const auto& rm = bundle.at("risk_model");
  std::map<std::string, std::pair<double, double>> stats;
  for (const auto& f : rm.at("features")) stats[f.at("feature")] = {f.at("mean"), f.at("sd")};
  double z = rm.at("intercept").get<double>();
  const auto& columns = rm.at("columns");
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const std::string col = columns[i];
    const double w = rm.at("weights")[i];
    const auto eq = col.find('=');
    double x = 0.0;
    if (eq != std::string::npos) {
      x = record.at(col.substr(0, eq)).get<std::string>() == col.substr(eq + 1) ? 1.0 : 0.0;
    } else if (col == "palpable") {
      x = record.at("palpable").get<bool>() ? 1.0 : 0.0;
    } else {
      x = (record.at(col).get<double>() - stats[col].first) / stats[col].second;
    }
    z += w * x;
  }
  const double p = 1.0 / (1.0 + std::exp(-z));

  auto ordinal = [&](const std::string& f) -> double {
    if (f == "palpable") return record.at(f).get<bool>() ? 1.0 : 0.0;
    if (f == "shape") return code_of(record.at(f), shapes, 3);
    if (f == "margins") return code_of(record.at(f), margins, 5);
    if (f == "orientation") return code_of(record.at(f), orientations, 2);
    return record.at(f).get<double>();
  };
  std::map<std::int64_t, json> nodes;
  for (const auto& n : bundle.at("tree").at("nodes")) nodes[n.at("id")] = n;
  std::int64_t id = 0;
  while (!nodes[id].at("leaf").get<bool>()) {
    const auto& n = nodes[id];
    id = ordinal(n.at("feature")) < n.at("threshold").get<double>() ? n.at("left").get<std::int64_t>()
                                                                     : n.at("right").get<std::int64_t>();
  }
  double q = -1.0;
  for (const auto& l : bundle.at("calibration").at("leaves")) {
    if (l.at("leaf_id").get<std::int64_t>() == id) q = l.at("q");
  }
  auto set = json::array();
  if (p <= q) set.push_back(0);
  if (1.0 - p <= q) set.push_back(1);
  return {{"risk", p}, {"leaf_id", id}, {"q", q}, {"prediction_set", set}};
}

TEST(Predict, MatchesIndependentRecomputation) {
  const auto bj = to_json(*shared_bundle());
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto rec = to_json(testing::random_record(rng, i));
    const auto res = service().handle("POST", "/v1/predict", rec.dump());
    ASSERT_EQ(res.status, 200) << res.body.dump();
    const auto golden = golden_prediction(bj, rec);
    EXPECT_NEAR(res.body.at("risk").get<double>(), golden.at("risk").get<double>(), 1e-12);
    EXPECT_EQ(res.body.at("leaf_id"), golden.at("leaf_id"));
    EXPECT_EQ(res.body.at("q"), golden.at("q"));
    const double p = res.body.at("risk");
    const double q = res.body.at("q");
    if (std::abs(p - q) > 1e-9 && std::abs(1.0 - p - q) > 1e-9) {
      EXPECT_EQ(res.body.at("prediction_set"), golden.at("prediction_set"));
    }
  }
}

TEST(Predict, SuspiciousLesionResponseShape) {
  const auto res = service().handle("POST", "/v1/predict", to_json(testing::suspicious_record()).dump());
  ASSERT_EQ(res.status, 200);
  const auto& b = res.body;
  for (const char* key : {"risk", "prediction_set", "prediction_set_labels", "leaf_id", "leaf_rule_path", "cutoff",
                          "q", "alpha", "model_version"}) {
    EXPECT_TRUE(b.contains(key)) << key;
  }
  EXPECT_GT(b.at("risk").get<double>(), 0.5);
  EXPECT_EQ(b.at("alpha").get<double>(), 0.1);
  EXPECT_DOUBLE_EQ(b.at("cutoff").get<double>(), 1.0 - b.at("q").get<double>());
  EXPECT_EQ(b.at("model_version"), shared_bundle()->model_version());
  EXPECT_EQ(b.at("leaf_rule_path"), json(shared_bundle()->tree->leaf_rule(b.at("leaf_id"))));
}

TEST(Predict, UnderageRecordIsA422NamingTheRule) {
  auto rec = to_json(testing::suspicious_record());
  rec["age"] = 17;
  const auto res = service().handle("POST", "/v1/predict", rec.dump());
  EXPECT_EQ(res.status, 422);
  EXPECT_EQ(res.body.at("error"), "validation_error");
  ASSERT_EQ(res.body.at("issues").size(), 1u);
  EXPECT_EQ(res.body.at("issues")[0].at("field"), "age");
  EXPECT_NE(res.body.at("issues")[0].at("message").get<std::string>().find("age ≥ 18"), std::string::npos);
}

TEST(Predict, EveryIssueIsReported) {
  const json rec = {{"age", "old"}, {"size_mm", 40}, {"ri", 0.5}, {"palpable", true}, {"shape", "square"},
                    {"margins", "spiculated"}};
  const auto res = service().handle("POST", "/v1/predict", rec.dump());
  ASSERT_EQ(res.status, 422);
  std::set<std::string> fields;
  for (const auto& i : res.body.at("issues")) fields.insert(i.at("field").get<std::string>());
  EXPECT_EQ(fields, (std::set<std::string>{"age", "size_mm", "shape", "orientation"}));
}

TEST(Predict, AlternativeFieldEncodingsAreAccepted) {
  auto rec = to_json(testing::suspicious_record());
  const auto expected = service().handle("POST", "/v1/predict", rec.dump()).body;
  rec["palpable"] = "yes";
  rec["birads"] = 3;
  rec.erase("cohort");
  rec.erase("id");
  const auto res = service().handle("POST", "/v1/predict", rec.dump());
  ASSERT_EQ(res.status, 200) << res.body.dump();
  EXPECT_EQ(res.body.at("risk"), expected.at("risk"));
}

TEST(Predict, MalformedJsonIs400) {
  const auto res = service().handle("POST", "/v1/predict", "{\"age\": 50,");
  EXPECT_EQ(res.status, 400);
  EXPECT_EQ(res.body.at("error"), "malformed_json");
}

TEST(Predict, IsIdempotent) {
  const auto body = to_json(testing::suspicious_record()).dump();
  const auto a = service().handle("POST", "/v1/predict", body);
  const auto b = service().handle("POST", "/v1/predict", body);
  EXPECT_EQ(a.body, b.body);
}

TEST(Batch, EqualsSingleRequestsInOrder) {
  std::mt19937_64 rng(4);
  auto batch = json::array();
  for (int i = 0; i < 25; ++i) batch.push_back(to_json(testing::random_record(rng, i)));
  const auto res = service().handle("POST", "/v1/predict/batch", batch.dump());
  ASSERT_EQ(res.status, 200);
  ASSERT_EQ(res.body.size(), batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    EXPECT_EQ(res.body[i], service().handle("POST", "/v1/predict", batch[i].dump()).body);
  }
}

TEST(Batch, InvalidElementReportsItsIndex) {
  std::mt19937_64 rng(5);
  auto batch = json::array({to_json(testing::random_record(rng)), to_json(testing::random_record(rng))});
  batch[1]["ri"] = -1.0;
  const auto res = service().handle("POST", "/v1/predict/batch", batch.dump());
  EXPECT_EQ(res.status, 422);
  EXPECT_EQ(res.body.at("index"), 1);
  EXPECT_EQ(service().handle("POST", "/v1/predict/batch", "{}").status, 422);
}

TEST(Routes, ModelLeavesHealthAndErrors) {
  const auto model = service().handle("GET", "/v1/model", "");
  ASSERT_EQ(model.status, 200);
  const auto& m = shared_bundle()->model;
  EXPECT_EQ(model.body.at("coefficients").size(), m.weights.size());
  EXPECT_EQ(model.body.at("intercept"), m.intercept);
  EXPECT_EQ(model.body.at("leaf_count"), shared_bundle()->tree->leaf_count());
  EXPECT_EQ(model.body.at("alpha"), 0.1);

  const auto leaves = service().handle("GET", "/v1/leaves", "");
  ASSERT_EQ(leaves.status, 200);
  ASSERT_TRUE(leaves.body.contains("leaves"));
  EXPECT_EQ(leaves.body.at("leaves").size(), shared_bundle()->calibration->leaves.size());
  for (const auto& l : leaves.body.at("leaves")) {
    const auto& lc = shared_bundle()->calibration->for_leaf(l.at("leaf_id"));
    EXPECT_EQ(l.at("q"), lc.q);
    EXPECT_EQ(l.at("k"), lc.k);
  }

  EXPECT_EQ(service().handle("GET", "/healthz", "").status, 200);
  EXPECT_EQ(service().handle("GET", "/v1/nothing", "").status, 404);
  EXPECT_EQ(service().handle("GET", "/v1/predict", "").status, 405);
}

TEST(Service, RequiresACalibratedBundle) {
  auto b = std::make_shared<ModelBundle>(*shared_bundle());
  b->calibration.reset();
  EXPECT_THROW(InferenceService{b}, Error);
}

TEST(Service, AgreesWithLibraryPredictions) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 100; ++i) {
    const auto r = testing::random_record(rng, i);
    const auto lib = to_json(predict(*shared_bundle(), r));
    EXPECT_EQ(service().handle("POST", "/v1/predict", to_json(r).dump()).body, lib);
  }
}

TEST(Http, RoundTripOnAnEphemeralPort) {
  auto svc = std::make_shared<const InferenceService>(shared_bundle());
  HttpServer server(svc);
  const int port = server.start("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  httplib::Client client("127.0.0.1", port);
  const auto body = to_json(testing::suspicious_record()).dump();
  auto res = client.Post("/v1/predict", body, "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body), svc->handle("POST", "/v1/predict", body).body);
  res = client.Post("/v1/predict", "not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  res = client.Get("/v1/model");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type").rfind("application/json", 0), 0u);
  server.stop();
}

TEST(BindAddress, EnvironmentOverridesFlag) {
  ::unsetenv("LESIONRISK_ADDR");
  EXPECT_EQ(resolve_bind_address("0.0.0.0:9000"), (std::pair<std::string, int>{"0.0.0.0", 9000}));
  EXPECT_EQ(resolve_bind_address(":8081"), (std::pair<std::string, int>{"127.0.0.1", 8081}));
  ::setenv("LESIONRISK_ADDR", "127.0.0.1:7000", 1);
  EXPECT_EQ(resolve_bind_address("0.0.0.0:9000"), (std::pair<std::string, int>{"127.0.0.1", 7000}));
  ::unsetenv("LESIONRISK_ADDR");
  EXPECT_THROW(resolve_bind_address("nonsense"), Error);
}

}  // namespace
}  // namespace lesionrisk
