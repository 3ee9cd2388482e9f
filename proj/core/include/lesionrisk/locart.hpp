#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lesionrisk/dataset.hpp"
#include "lesionrisk/residuals.hpp"
#include "lesionrisk/risk_model.hpp"
#include "lesionrisk/subgroup_tree.hpp"

namespace lesionrisk {

/// r_i = 1 - p(y_i | x_i) over a labeled calibration split.
ResidualDataset compute_residuals(const RiskModel& m, const Dataset& cal);

struct ResidualSplit {
  ResidualDataset tree_half;      // fits the partition
  ResidualDataset quantile_half;  // calibrates each leaf
};

/// Label-stratified seeded split; floor(fraction * n) samples go to the tree
/// half. Both halves keep the input order.
ResidualSplit split_residuals(const ResidualDataset& rd, double fraction, std::uint64_t seed);

/// Order-statistic rank for a calibration sample of size k.
struct QuantileLevel {
  double alpha_tilde = 0.0;
  std::size_t rank = 0;  // 1-based, within [1, k]
};

/// Default: alpha_tilde = ceil((k+1) alpha) / k and rank = ceil((1 - alpha_tilde) k),
/// which is k - ceil((k+1) alpha) in integers. With `conservative` the rank
/// is ceil((k+1)(1 - alpha)). Both are clamped to [1, k]. `k` must be >= 1.
QuantileLevel conformal_level(std::size_t k, double alpha, bool conservative = false);

struct CalibrationOptions {
  double alpha = 0.1;
  std::size_t k_min = 20;
  bool conservative_level = false;
};

struct LeafCalibration {
  std::int64_t leaf_id = -1;  // -1 for the pooled calibration
  std::size_t k = 0;          // quantile-half samples in the leaf
  double alpha = 0.1;
  double alpha_tilde = 0.0;
  std::size_t rank = 0;
  double q = 0.0;
  bool fallback_used = false;
};

struct Calibration {
  CalibrationOptions options;
  LeafCalibration pooled;
  std::map<std::int64_t, LeafCalibration> leaves;

  /// Throws Error when the leaf is not calibrated.
  const LeafCalibration& for_leaf(std::int64_t leaf_id) const;
};

/// Leaves with k < k_min fall back to the pooled quantile over all of `d1`
/// and are flagged. Throws ValidationError on empty `d1` or alpha outside (0, 1).
Calibration calibrate_leaves(const PartitionTree& t, const ResidualDataset& d1, const CalibrationOptions& opts = {});

/// Pooled split-conformal calibration ignoring the partition.
LeafCalibration calibrate_pooled(std::span<const double> residuals, double alpha, bool conservative = false);

struct PredictionSet {
  bool benign = false;
  bool malignant = false;
  std::int64_t leaf_id = -1;
  double q = 0.0;
  double cutoff = 0.0;  // 1 - q
  double p_malignant = 0.0;

  std::size_t size() const noexcept { return (benign ? 1 : 0) + (malignant ? 1 : 0); }
  bool contains(Label l) const noexcept { return l == Label::kMalignant ? malignant : benign; }
  std::vector<int> labels() const;
};

/// Label l is in the set iff nonconformity(p, l) <= q, i.e. p(l|x) >= 1 - q.
PredictionSet make_prediction_set(double p_malignant, std::int64_t leaf_id, double q);

PredictionSet predict_set(const RiskModel& m, const PartitionTree& t, const Calibration& calib,
                          const LesionRecord& x);

struct CoverageRow {
  std::optional<std::int64_t> leaf_id;  // nullopt for the marginal row
  std::size_t n = 0;
  double avg_set_size = 0.0;
  double coverage_pct = 0.0;
  double truth_only_pct = 0.0;
  std::array<std::size_t, 3> set_size_counts{};  // sets of size 0, 1, 2
};

struct CoverageReport {
  double alpha = 0.1;
  std::vector<CoverageRow> leaves;  // ascending leaf id
  CoverageRow marginal;
};

CoverageReport coverage_report(std::span<const PredictionSet> sets, std::span<const Label> truth, double alpha);

/// Columns: leaf, avg_set_size, empirical_coverage_pct, truth_only_pct, n. The
/// marginal row has leaf "all".
void write_coverage_csv(std::ostream& out, const CoverageReport& r);
/// Columns: leaf, size0, size1, size2, n (stacked set-size plot data).
void write_set_size_csv(std::ostream& out, const CoverageReport& r);

nlohmann::json to_json(const LeafCalibration& c);
nlohmann::json to_json(const Calibration& c);
Calibration calibration_from_json(const nlohmann::json& j);

}  // namespace lesionrisk
