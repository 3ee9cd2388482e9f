#include "lesionrisk/bundle.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <iterator>
#include <memory>
#include <ostream>
#include <sstream>

#include <openssl/evp.h>

namespace lesionrisk {

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string dataset_fingerprint(const Dataset& ds) {
  std::ostringstream out;
  write_csv(out, ds);
  return sha256_hex(out.str());
}

double ModelBundle::alpha() const {
  if (!calibration) throw Error("bundle is not calibrated");
  return calibration->options.alpha;
}

std::string ModelBundle::model_version() const {
  nlohmann::json j;
  j["risk_model"] = to_json(model);
  j["tree"] = tree ? to_json(*tree) : nlohmann::json(nullptr);
  j["calibration"] = calibration ? to_json(*calibration) : nlohmann::json(nullptr);
  return sha256_hex(j.dump()).substr(0, 16);
}

nlohmann::json to_json(const RiskModel& m) {
  auto features = nlohmann::json::array();
  for (const auto& f : m.encoder.features) {
    features.push_back({{"feature", to_string(f.feature)}, {"mean", f.mean}, {"sd", f.sd}});
  }
  return {{"features", features},
          {"columns", m.encoder.column_names()},
          {"weights", m.weights},
          {"intercept", m.intercept},
          {"C", m.c},
          {"seed", m.seed},
          {"cv_log_loss", m.cv_log_loss ? nlohmann::json(*m.cv_log_loss) : nlohmann::json(nullptr)}};
}

RiskModel risk_model_from_json(const nlohmann::json& j) {
  RiskModel m;
  for (const auto& jf : j.at("features")) {
    const auto name = jf.at("feature").get<std::string>();
    const auto f = parse_feature(name);
    if (!f) throw ConsistencyError("risk model references unknown feature '" + name + "'");
    m.encoder.features.push_back({*f, jf.at("mean").get<double>(), jf.at("sd").get<double>()});
  }
  m.weights = j.at("weights").get<std::vector<double>>();
  m.intercept = j.at("intercept").get<double>();
  m.c = j.at("C").get<double>();
  m.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("cv_log_loss") && !j.at("cv_log_loss").is_null()) m.cv_log_loss = j.at("cv_log_loss").get<double>();
  if (j.contains("columns") && j.at("columns").get<std::vector<std::string>>() != m.encoder.column_names()) {
    throw ConsistencyError("risk model column names do not match its encoder");
  }
  return m;
}

void check_consistency(const ModelBundle& b) {
  if (b.schema_version != kBundleSchemaVersion) {
    throw ConsistencyError("unsupported bundle schema version " + std::to_string(b.schema_version) + " (expected " +
                           std::to_string(kBundleSchemaVersion) + ")");
  }
  const auto dim = b.model.encoder.dimension();
  if (b.model.weights.size() != dim) {
    throw ConsistencyError("weight vector length " + std::to_string(b.model.weights.size()) +
                           " does not match encoder dimension " + std::to_string(dim));
  }
  for (const auto& f : b.model.encoder.features) {
    if (is_numeric(f.feature) && !(f.sd > 0.0)) {
      throw ConsistencyError("encoder sd for '" + std::string(to_string(f.feature)) + "' must be positive");
    }
  }
  for (double w : b.model.weights) {
    if (!std::isfinite(w)) throw ConsistencyError("weight vector contains a non-finite value");
  }
  if (b.calibration && !b.tree) throw ConsistencyError("calibration present without a partition tree");
  if (b.tree) {
    const auto& nodes = b.tree->tree.nodes();
    for (const auto& n : nodes) {
      if (!n.is_leaf() && (n.feature >= static_cast<int>(b.tree->encoder.features.size()))) {
        throw ConsistencyError("tree node " + std::to_string(n.id) + " splits on an unknown column");
      }
    }
  }
  if (b.calibration) {
    const auto& c = *b.calibration;
    if (!(c.options.alpha > 0.0 && c.options.alpha < 1.0)) throw ConsistencyError("calibration alpha outside (0, 1)");
    for (auto id : b.tree->tree.leaf_ids()) {
      if (!c.leaves.contains(id)) {
        throw ConsistencyError("tree leaf " + std::to_string(id) + " has no calibration entry");
      }
    }
  }
}

nlohmann::json to_json(const ModelBundle& b) {
  nlohmann::json j;
  j["schema_version"] = b.schema_version;
  j["model_version"] = b.model_version();
  j["alpha"] = b.calibration ? nlohmann::json(b.calibration->options.alpha) : nlohmann::json(nullptr);
  j["risk_model"] = to_json(b.model);
  j["tree"] = b.tree ? to_json(*b.tree) : nlohmann::json(nullptr);
  j["calibration"] = b.calibration ? to_json(*b.calibration) : nlohmann::json(nullptr);
  j["metadata"] = b.metadata;
  return j;
}

ModelBundle bundle_from_json(const nlohmann::json& j) {
  ModelBundle b;
  try {
    b.schema_version = j.at("schema_version").get<int>();
    if (b.schema_version != kBundleSchemaVersion) check_consistency(b);
    b.model = risk_model_from_json(j.at("risk_model"));
    if (j.contains("tree") && !j.at("tree").is_null()) b.tree = partition_tree_from_json(j.at("tree"));
    if (j.contains("calibration") && !j.at("calibration").is_null()) {
      b.calibration = calibration_from_json(j.at("calibration"));
    }
    b.metadata = j.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ConsistencyError(std::string("bundle is missing or mistypes a field: ") + e.what());
  }
  check_consistency(b);
  return b;
}

void save_bundle(const ModelBundle& b, std::ostream& out) { out << to_json(b).dump(2) << '\n'; }

ModelBundle load_bundle(std::istream& in) {
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, "", std::string("malformed bundle JSON at byte ") + std::to_string(e.byte) + ": " + e.what());
  }
  return bundle_from_json(j);
}

void save_bundle_file(const ModelBundle& b, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  save_bundle(b, out);
  if (!out) throw Error("failed writing '" + path + "'");
}

ModelBundle load_bundle_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return load_bundle(in);
}

}  // namespace lesionrisk
