#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "lesionrisk/locart.hpp"
#include "lesionrisk/risk_model.hpp"
#include "lesionrisk/subgroup_tree.hpp"

namespace lesionrisk {

inline constexpr int kBundleSchemaVersion = 1;

/// Everything needed to serve predictions. A freshly trained bundle has no
/// tree or calibration; `calibrate_bundle` adds both.
struct ModelBundle {
  int schema_version = kBundleSchemaVersion;
  RiskModel model;
  std::optional<PartitionTree> tree;
  std::optional<Calibration> calibration;
  /// Provenance: dataset hash, split, seeds, grid reports, leaf profiles and
  /// the creation timestamp. Never read back by prediction code.
  nlohmann::json metadata = nlohmann::json::object();

  bool calibrated() const noexcept { return tree.has_value() && calibration.has_value(); }
  double alpha() const;
  /// Short hash over the model, tree and calibration content.
  std::string model_version() const;
};

nlohmann::json to_json(const RiskModel& m);
RiskModel risk_model_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ModelBundle& b);
/// Validates schema version and internal consistency; throws ConsistencyError.
ModelBundle bundle_from_json(const nlohmann::json& j);

/// Throws ConsistencyError naming the first violated invariant.
void check_consistency(const ModelBundle& b);

void save_bundle(const ModelBundle& b, std::ostream& out);
/// Throws ParseError on malformed JSON, ConsistencyError on invalid content.
ModelBundle load_bundle(std::istream& in);

void save_bundle_file(const ModelBundle& b, const std::string& path);
ModelBundle load_bundle_file(const std::string& path);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
/// Hex SHA-256 of the canonical CSV serialization.
std::string dataset_fingerprint(const Dataset& ds);

}  // namespace lesionrisk
