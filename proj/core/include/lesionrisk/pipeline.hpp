#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lesionrisk/bundle.hpp"
#include "lesionrisk/evaluation.hpp"

namespace lesionrisk {

struct TrainOptions {
  SplitStrategy strategy = SplitStrategy::kByCohort;
  std::uint64_t seed = 0;
  /// Explicit split sizes; by default the data is split 513:1059:364.
  std::optional<SplitSpec> sizes;
  std::vector<double> cs = default_c_grid();
  std::size_t folds = 5;
  std::vector<Feature> features = default_features();
};

struct TrainOutcome {
  ModelBundle bundle;
  GridSearchReport report;
  Split split;
};

/// Splits `data`, runs the C grid search on the training part and records the
/// split in the bundle metadata so later steps can recover the same parts.
TrainOutcome train_bundle(const Dataset& data, const TrainOptions& opts);

nlohmann::json to_json(const GridSearchReport& r);

enum class Subset { kAuto, kTrain, kCal, kTest, kAll };

std::optional<Subset> parse_subset(std::string_view s);

/// With kAuto: the calibration (or test) part of the recorded split when
/// `data` is the dataset the bundle was trained on, otherwise all of `data`.
Dataset select_subset(const ModelBundle& b, const Dataset& data, Subset subset, Subset auto_part);

struct CalibrateOptions {
  double alpha = 0.1;
  double fraction = 0.5;
  std::uint64_t seed = 0;
  std::vector<int> depths = default_depth_grid();
  std::vector<std::size_t> min_leaves = default_min_leaf_grid();
  std::size_t folds = 5;
  std::size_t k_min = 20;
  bool conservative_level = false;
};

struct CalibrateOutcome {
  TreeGridReport tree_report;
  ResidualSplit halves;
};

/// Residuals on `cal` -> stratified split -> tree grid search on the tree half
/// -> per-leaf quantiles on the quantile half. Replaces any earlier
/// calibration in `b`.
CalibrateOutcome calibrate_bundle(ModelBundle& b, const Dataset& cal, const CalibrateOptions& opts);

struct PredictResponse {
  double risk = 0.0;
  PredictionSet set;
  std::vector<std::string> leaf_rule_path;
  double alpha = 0.0;
  std::string model_version;
};

/// Reads the record fields of a JSON object. `id`, `birads`, `cohort` and
/// `label` are optional; every missing, mistyped or out-of-range field is
/// reported in one ValidationError.
LesionRecord record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LesionRecord& r);

/// Throws ValidationError for invalid records and Error for an uncalibrated bundle.
PredictResponse predict(const ModelBundle& b, const LesionRecord& r);
nlohmann::json to_json(const PredictResponse& r);

struct EvaluateOptions {
  std::size_t calibration_bins = 10;
  std::size_t curve_steps = 100;
  bool optimize_threshold = false;
  /// Defaults to the malignancy rate of BI-RADS 4b lesions in the subset.
  std::optional<double> ppv_floor;
  std::vector<Birads> decision_birads = {Birads::k4a, Birads::k4b};
  /// Named probability columns keyed by record id, scored alongside the model.
  std::map<std::string, std::map<std::string, double>> external;
};

struct EvaluationReport {
  std::vector<std::string> ids;
  std::vector<double> probs;
  std::vector<int> labels;
  std::vector<PredictionSet> sets;
  ScalarMetrics metrics;
  ThresholdCurve curve;
  CalibrationCurve calibration;
  CoverageReport coverage;
  std::vector<LeafProfile> profiles;
  std::optional<ThresholdDecision> decision;
  std::string ppv_floor_source;
  std::map<std::string, ScalarMetrics> external;
};

/// Requires a calibrated bundle and a labeled dataset with both classes.
EvaluationReport evaluate(const ModelBundle& b, const Dataset& ds, const EvaluateOptions& opts = {});

/// Writes threshold_curve.csv, metrics.json, calibration_curve.csv,
/// coverage.csv, set_sizes.csv, leaf_profiles.csv, predictions.csv and, when
/// requested, threshold_decision.json. Returns the file names written.
std::vector<std::string> write_evaluation_reports(const EvaluationReport& r, const std::string& dir);

/// Columns: leaf, n, birads_3, birads_4a, birads_4b, birads_4c, birads_5,
/// malignancy_rate, accuracy, mean_residual.
void write_leaf_profiles_csv(std::ostream& out, std::span<const LeafProfile> profiles);
nlohmann::json to_json(const LeafProfile& p);

/// CSV with an `id` column and one or more probability columns.
std::map<std::string, std::map<std::string, double>> read_external_probabilities(std::istream& in);

}  // namespace lesionrisk
