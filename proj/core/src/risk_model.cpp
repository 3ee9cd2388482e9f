#include "lesionrisk/risk_model.hpp"

#include <cmath>
#include <limits>

#include "lesionrisk/cross_validation.hpp"
#include "lesionrisk/evaluation.hpp"

namespace lesionrisk {
namespace {

std::size_t width(Feature f) {
  switch (f) {
    case Feature::kShape: return kShapeCount;
    case Feature::kMargins: return kMarginsCount;
    case Feature::kOrientation: return kOrientationCount;
    default: return 1;
  }
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sample_sd(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::size_t EncoderSpec::dimension() const {
  std::size_t d = 0;
  for (const auto& f : features) d += width(f.feature);
  return d;
}

std::vector<std::string> EncoderSpec::column_names() const {
  std::vector<std::string> names;
  for (const auto& f : features) {
    const std::string base(to_string(f.feature));
    switch (f.feature) {
      case Feature::kShape:
        for (std::size_t i = 0; i < kShapeCount; ++i) names.push_back(base + "=" + std::string(to_string(static_cast<Shape>(i))));
        break;
      case Feature::kMargins:
        for (std::size_t i = 0; i < kMarginsCount; ++i) {
          names.push_back(base + "=" + std::string(to_string(static_cast<Margins>(i))));
        }
        break;
      case Feature::kOrientation:
        for (std::size_t i = 0; i < kOrientationCount; ++i) {
          names.push_back(base + "=" + std::string(to_string(static_cast<Orientation>(i))));
        }
        break;
      default:
        names.push_back(base);
    }
  }
  return names;
}

void EncoderSpec::encode_into(const LesionRecord& r, std::span<double> out) const {
  validate_record(r);
  std::size_t col = 0;
  for (const auto& f : features) {
    const std::size_t w = width(f.feature);
    if (is_numeric(f.feature)) {
      out[col] = (feature_value(r, f.feature) - f.mean) / f.sd;
    } else if (f.feature == Feature::kPalpable) {
      out[col] = r.palpable ? 1.0 : 0.0;
    } else {
      const auto hot = static_cast<std::size_t>(feature_value(r, f.feature));
      for (std::size_t i = 0; i < w; ++i) out[col + i] = i == hot ? 1.0 : 0.0;
    }
    col += w;
  }
}

std::vector<double> EncoderSpec::encode(const LesionRecord& r) const {
  std::vector<double> out(dimension());
  encode_into(r, out);
  return out;
}

EncoderSpec fit_encoder(const Dataset& train, std::span<const Feature> features) {
  if (train.empty()) throw ValidationError("train", "cannot fit an encoder on an empty dataset");
  if (features.empty()) throw ValidationError("features", "feature list is empty");
  EncoderSpec enc;
  for (Feature f : features) {
    for (const auto& e : enc.features) {
      if (e.feature == f) throw ValidationError("features", "duplicate feature '" + std::string(to_string(f)) + "'");
    }
    FeatureEncoding fe{f, 0.0, 1.0};
    if (is_numeric(f)) {
      std::vector<double> xs;
      xs.reserve(train.size());
      for (const auto& r : train.records) xs.push_back(feature_value(r, f));
      double sum = 0.0;
      for (double x : xs) sum += x;
      fe.mean = sum / static_cast<double>(xs.size());
      fe.sd = sample_sd(xs, fe.mean);
      if (!(fe.sd > 0.0)) {
        throw ValidationError(std::string(to_string(f)), std::string(to_string(f)) + " has zero variance in training data");
      }
    }
    enc.features.push_back(fe);
  }
  return enc;
}

Eigen::MatrixXd design_matrix(const Dataset& ds, const EncoderSpec& enc) {
  const auto d = static_cast<Eigen::Index>(enc.dimension());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(ds.size()), d + 1);
  std::vector<double> row(static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    enc.encode_into(ds.records[i], row);
    const auto ii = static_cast<Eigen::Index>(i);
    x(ii, 0) = 1.0;
    for (Eigen::Index j = 0; j < d; ++j) x(ii, j + 1) = row[static_cast<std::size_t>(j)];
  }
  return x;
}

Eigen::VectorXd label_vector(const Dataset& ds) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.records[i];
    if (!r.label) throw ValidationError("label", "record '" + r.id + "' has no label");
    y(static_cast<Eigen::Index>(i)) = *r.label == Label::kMalignant ? 1.0 : 0.0;
  }
  return y;
}

LogisticObjective::LogisticObjective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double c)
    : x_(x), y_(y), c_(c) {}

double LogisticObjective::value(const Eigen::VectorXd& theta) const {
  const Eigen::VectorXd z = x_ * theta;
  const double n = static_cast<double>(x_.rows());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) loss += softplus(z(i)) - y_(i) * z(i);
  const double penalty = theta.tail(theta.size() - 1).squaredNorm() / (2.0 * c_ * n);
  return loss / n + penalty;
}

Eigen::VectorXd LogisticObjective::gradient(const Eigen::VectorXd& theta) const {
  const Eigen::VectorXd z = x_ * theta;
  const double n = static_cast<double>(x_.rows());
  Eigen::VectorXd residual(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) residual(i) = sigmoid(z(i)) - y_(i);
  Eigen::VectorXd g = x_.transpose() * residual / n;
  g.tail(g.size() - 1) += theta.tail(theta.size() - 1) / (c_ * n);
  return g;
}

Eigen::MatrixXd LogisticObjective::hessian(const Eigen::VectorXd& theta) const {
  const Eigen::VectorXd z = x_ * theta;
  const double n = static_cast<double>(x_.rows());
  Eigen::VectorXd s(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double p = sigmoid(z(i));
    s(i) = p * (1.0 - p);
  }
  Eigen::MatrixXd h = x_.transpose() * s.asDiagonal() * x_ / n;
  for (Eigen::Index j = 1; j < h.rows(); ++j) h(j, j) += 1.0 / (c_ * n);
  return h;
}

Eigen::VectorXd fit_logistic_parameters(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double c,
                                        const FitOptions& opts, FitTrace* trace) {
  if (!(c > 0.0) || !std::isfinite(c)) throw ValidationError("C", "regularization strength C must be positive");
  const double positives = y.sum();
  if (x.rows() == 0 || positives == 0.0 || positives == static_cast<double>(y.size())) {
    throw ValidationError("label", "training data must contain both classes");
  }
  const LogisticObjective objective(x, y, c);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(x.cols());
  double f = objective.value(theta);
  FitTrace local;
  local.objective.push_back(f);

  for (int iter = 0;; ++iter) {
    const Eigen::VectorXd g = objective.gradient(theta);
    local.gradient_norm = g.norm();
    local.iterations = iter;
    if (local.gradient_norm <= opts.gradient_tolerance) break;
    if (iter >= opts.max_iterations) {
      if (trace) *trace = local;
      throw ConvergenceError("logistic fit did not converge in " + std::to_string(opts.max_iterations) +
                                 " iterations (gradient norm " + std::to_string(local.gradient_norm) + ")",
                             local.gradient_norm);
    }
    const Eigen::VectorXd step = objective.hessian(theta).ldlt().solve(-g);
    const double slope = g.dot(step);

    // Armijo backtracking; only steps that do not increase the objective are
    // accepted.
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      const Eigen::VectorXd candidate = theta + t * step;
      const double fc = objective.value(candidate);
      if (std::isfinite(fc) && fc <= f + 1e-4 * t * slope) {
        theta = candidate;
        f = fc;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // Objective is flat to machine precision along the Newton direction.
      if (local.gradient_norm <= 1e-6) break;
      if (trace) *trace = local;
      throw ConvergenceError("logistic fit line search failed (gradient norm " + std::to_string(local.gradient_norm) +
                                 ")",
                             local.gradient_norm);
    }
    local.objective.push_back(f);
  }
  if (trace) *trace = local;
  return theta;
}

RiskModel fit_logistic(const Dataset& train, const EncoderSpec& enc, double c, const FitOptions& opts,
                       FitTrace* trace) {
  const Eigen::MatrixXd x = design_matrix(train, enc);
  const Eigen::VectorXd y = label_vector(train);
  const Eigen::VectorXd theta = fit_logistic_parameters(x, y, c, opts, trace);
  RiskModel m;
  m.encoder = enc;
  m.intercept = theta(0);
  m.weights.assign(theta.data() + 1, theta.data() + theta.size());
  m.c = c;
  return m;
}

double RiskModel::logit(const LesionRecord& r) const {
  const auto x = encoder.encode(r);
  double z = intercept;
  for (std::size_t j = 0; j < x.size(); ++j) z += weights[j] * x[j];
  return z;
}

double RiskModel::predict_proba(const LesionRecord& r) const { return sigmoid(logit(r)); }

std::vector<double> default_c_grid() { return {0.01, 0.1, 1.0, 10.0, 100.0}; }

GridSearchResult grid_search(const Dataset& train, const EncoderSpec& enc, std::span<const double> cs, std::size_t k,
                             std::uint64_t seed, const FitOptions& opts) {
  if (cs.empty()) throw ValidationError("C", "C grid is empty");
  const Eigen::MatrixXd x = design_matrix(train, enc);
  const Eigen::VectorXd y = label_vector(train);
  const auto folds = make_folds(train.size(), k, seed);

  GridSearchReport report;
  report.folds = k;
  report.seed = seed;
  std::optional<std::size_t> best;
  for (double c : cs) {
    GridCell cell;
    cell.c = c;
    for (const auto& fold : folds) {
      const auto rows = training_rows(train.size(), fold);
      const Eigen::MatrixXd x_fit = x(rows, Eigen::all);
      const Eigen::VectorXd y_fit = y(rows);
      Eigen::VectorXd theta;
      try {
        theta = fit_logistic_parameters(x_fit, y_fit, c, opts);
      } catch (const Error& e) {
        cell.disqualified = true;
        cell.reason = e.what();
        break;
      }
      std::vector<double> probs;
      std::vector<int> labels;
      for (auto i : fold) {
        probs.push_back(sigmoid(x.row(static_cast<Eigen::Index>(i)).dot(theta)));
        labels.push_back(static_cast<int>(y(static_cast<Eigen::Index>(i))));
      }
      cell.fold_log_loss.push_back(log_loss(probs, labels));
    }
    if (!cell.disqualified) {
      double sum = 0.0;
      for (double v : cell.fold_log_loss) sum += v;
      cell.mean_log_loss = sum / static_cast<double>(cell.fold_log_loss.size());
      cell.sd_log_loss = sample_sd(cell.fold_log_loss, cell.mean_log_loss);
      if (!best || cell.mean_log_loss < report.cells[*best].mean_log_loss) best = report.cells.size();
    }
    report.cells.push_back(std::move(cell));
  }
  if (!best) throw ConvergenceError("every C in the grid was disqualified", std::numeric_limits<double>::quiet_NaN());

  report.chosen_c = report.cells[*best].c;
  GridSearchResult result{fit_logistic(train, enc, report.chosen_c, opts), std::move(report)};
  result.model.seed = seed;
  result.model.cv_log_loss = result.report.cells[*best].mean_log_loss;
  return result;
}

}  // namespace lesionrisk
