#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lesionrisk/dataset.hpp"

namespace lesionrisk {

/// One model input and, for numeric features, its standardization fitted on
/// the training split.
struct FeatureEncoding {
  Feature feature = Feature::kAge;
  double mean = 0.0;
  double sd = 1.0;
};

/// Numeric features are standardized, palpable passes through as 0/1 and the
/// categorical fields are fully one-hot encoded over their fixed vocabularies
/// (no dropped reference level).
struct EncoderSpec {
  std::vector<FeatureEncoding> features;

  std::size_t dimension() const;
  std::vector<std::string> column_names() const;
  /// Validates the record, then encodes it.
  std::vector<double> encode(const LesionRecord& r) const;
  void encode_into(const LesionRecord& r, std::span<double> out) const;
};

/// Throws ValidationError on an empty split or a zero-variance numeric feature.
EncoderSpec fit_encoder(const Dataset& train, std::span<const Feature> features);

/// Rows of encoded features with a leading intercept column of ones.
Eigen::MatrixXd design_matrix(const Dataset& ds, const EncoderSpec& enc);
/// Labels as 0/1; throws ValidationError on an unlabeled record.
Eigen::VectorXd label_vector(const Dataset& ds);

/// Mean log-loss plus ||w||^2 / (2 C n), the intercept (theta[0]) unpenalized.
class LogisticObjective {
 public:
  LogisticObjective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double c);

  double value(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const;
  Eigen::MatrixXd hessian(const Eigen::VectorXd& theta) const;

  Eigen::Index parameter_count() const { return x_.cols(); }

 private:
  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  double c_;
};

struct FitOptions {
  double gradient_tolerance = 1e-8;
  int max_iterations = 100;
};

/// Objective after each accepted Newton step (entry 0 is the starting point).
struct FitTrace {
  std::vector<double> objective;
  double gradient_norm = 0.0;
  int iterations = 0;
};

struct RiskModel {
  EncoderSpec encoder;
  std::vector<double> weights;
  double intercept = 0.0;
  double c = 1.0;
  std::uint64_t seed = 0;
  std::optional<double> cv_log_loss;

  double logit(const LesionRecord& r) const;
  /// P(malignant | r), strictly inside (0, 1) for finite logits below ~36.
  double predict_proba(const LesionRecord& r) const;
};

double sigmoid(double z);

/// Damped Newton from theta = 0. Throws ValidationError on C <= 0 or single
/// class data, ConvergenceError when the gradient norm stays above tolerance.
Eigen::VectorXd fit_logistic_parameters(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double c,
                                        const FitOptions& opts = {}, FitTrace* trace = nullptr);

RiskModel fit_logistic(const Dataset& train, const EncoderSpec& enc, double c, const FitOptions& opts = {},
                       FitTrace* trace = nullptr);

struct GridCell {
  double c = 0.0;
  std::vector<double> fold_log_loss;
  double mean_log_loss = 0.0;
  double sd_log_loss = 0.0;
  bool disqualified = false;
  std::string reason;
};

struct GridSearchReport {
  std::vector<GridCell> cells;  // grid order
  double chosen_c = 0.0;
  std::size_t folds = 0;
  std::uint64_t seed = 0;
};

struct GridSearchResult {
  RiskModel model;
  GridSearchReport report;
};

/// {0.01, 0.1, 1, 10, 100}.
std::vector<double> default_c_grid();

/// k-fold CV over `cs`; picks the lowest mean held-out log-loss (first in grid
/// order on ties) and refits it on all of `train`.
GridSearchResult grid_search(const Dataset& train, const EncoderSpec& enc, std::span<const double> cs,
                             std::size_t k = 5, std::uint64_t seed = 0, const FitOptions& opts = {});

}  // namespace lesionrisk
