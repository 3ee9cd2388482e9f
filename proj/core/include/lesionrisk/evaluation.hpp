#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lesionrisk/error.hpp"

namespace lesionrisk {

// Labels are 0 (benign) / 1 (malignant). A prediction is positive iff
// p >= threshold. Ratios whose denominator is zero are reported as nullopt.

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  std::optional<double> sensitivity() const;
  std::optional<double> specificity() const;
  std::optional<double> ppv() const;
  std::optional<double> npv() const;
};

ConfusionCounts confusion_at(std::span<const double> probs, std::span<const int> labels, double threshold);

struct ThresholdPoint {
  double threshold = 0.0;
  ConfusionCounts counts;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> ppv;
  std::optional<double> npv;
};

struct ThresholdCurve {
  std::vector<ThresholdPoint> points;  // ascending threshold
};

/// `grid` must be ascending and inside [0, 1].
ThresholdCurve threshold_curve(std::span<const double> probs, std::span<const int> labels,
                               std::span<const double> grid);

/// {0, 1/steps, ..., 1}.
std::vector<double> uniform_grid(std::size_t steps);

struct ScalarMetrics {
  double auroc = 0.0;
  double auprc = 0.0;
  double log_loss = 0.0;
};

/// Mann-Whitney AUROC with ties counted as one half.
double auroc(std::span<const double> probs, std::span<const int> labels);
/// Step-interpolated area under the precision-recall curve (average precision).
double auprc(std::span<const double> probs, std::span<const int> labels);
/// Mean negative log-likelihood with probabilities clipped to [1e-15, 1-1e-15].
/// Summation order is canonical, so the value does not depend on row order.
double log_loss(std::span<const double> probs, std::span<const int> labels);

/// Throws ValidationError when only one class is present.
ScalarMetrics scalar_metrics(std::span<const double> probs, std::span<const int> labels);

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_predicted = 0.0;
  double observed_fraction = 0.0;
  std::size_t count = 0;
};

struct CalibrationCurve {
  std::vector<CalibrationBin> bins;  // equal-width on [0, 1], empty bins omitted
};

CalibrationCurve calibration_curve(std::span<const double> probs, std::span<const int> labels, std::size_t n_bins);

struct BiopsyCounts {
  std::size_t requested = 0;       // p >= t
  std::size_t avoided = 0;         // p < t
  std::size_t missed_cancers = 0;  // label 1 and p < t
};

struct ThresholdDecision {
  bool feasible = false;
  double threshold = 0.0;
  std::optional<double> npv;
  std::optional<double> ppv;
  double ppv_floor = 0.0;
  BiopsyCounts biopsies;
  std::size_t n = 0;
};

/// {0, 1} plus midpoints of consecutive distinct sorted probabilities, ascending.
std::vector<double> candidate_thresholds(std::span<const double> probs);

/// Among candidates whose PPV is defined and >= ppv_floor, the one with the
/// highest NPV (an undefined NPV ranks below every defined one); ties go to
/// the larger threshold. `feasible` is false when no candidate meets the floor.
ThresholdDecision optimize_threshold(std::span<const double> probs, std::span<const int> labels, double ppv_floor);

void write_threshold_curve_csv(std::ostream& out, const ThresholdCurve& curve);
void write_calibration_csv(std::ostream& out, const CalibrationCurve& curve);
nlohmann::json to_json(const ScalarMetrics& m);
nlohmann::json to_json(const ThresholdDecision& d);

}  // namespace lesionrisk
