#include "lesionrisk/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "lesionrisk/error.hpp"
#include "lesionrisk/format.hpp"

namespace lesionrisk {
namespace {

void check_inputs(std::span<const double> probs, std::span<const int> labels) {
  if (probs.size() != labels.size()) {
    throw ValidationError("labels", "probability and label lists differ in length (" + std::to_string(probs.size()) +
                                        " vs " + std::to_string(labels.size()) + ")");
  }
  if (probs.empty()) throw ValidationError("probs", "empty input");
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) {
      throw ValidationError("probs", "probability at index " + std::to_string(i) + " outside [0, 1]");
    }
    if (labels[i] != 0 && labels[i] != 1) {
      throw ValidationError("labels", "label at index " + std::to_string(i) + " is not 0 or 1");
    }
  }
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  return {pos, labels.size() - pos};
}

void require_both_classes(std::span<const int> labels) {
  auto [pos, neg] = class_counts(labels);
  if (pos == 0 || neg == 0) throw ValidationError("labels", "both classes must be present");
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string{}; }

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

// Order of row indices by ascending probability.
std::vector<std::size_t> ascending_order(std::span<const double> probs) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });
  return order;
}

}  // namespace

std::optional<double> ConfusionCounts::sensitivity() const { return ratio(tp, tp + fn); }
std::optional<double> ConfusionCounts::specificity() const { return ratio(tn, tn + fp); }
std::optional<double> ConfusionCounts::ppv() const { return ratio(tp, tp + fp); }
std::optional<double> ConfusionCounts::npv() const { return ratio(tn, tn + fn); }

ConfusionCounts confusion_at(std::span<const double> probs, std::span<const int> labels, double threshold) {
  check_inputs(probs, labels);
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] >= threshold;
    if (labels[i] == 1) (predicted ? c.tp : c.fn)++;
    else (predicted ? c.fp : c.tn)++;
  }
  return c;
}

ThresholdCurve threshold_curve(std::span<const double> probs, std::span<const int> labels,
                               std::span<const double> grid) {
  check_inputs(probs, labels);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0 && grid[i] <= 1.0)) throw ValidationError("grid", "threshold outside [0, 1]");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw ValidationError("grid", "threshold grid must be strictly ascending");
  }
  ThresholdCurve curve;
  curve.points.reserve(grid.size());
  for (double t : grid) {
    ThresholdPoint p;
    p.threshold = t;
    p.counts = confusion_at(probs, labels, t);
    p.sensitivity = p.counts.sensitivity();
    p.specificity = p.counts.specificity();
    p.ppv = p.counts.ppv();
    p.npv = p.counts.npv();
    curve.points.push_back(p);
  }
  return curve;
}

std::vector<double> uniform_grid(std::size_t steps) {
  if (steps == 0) throw ValidationError("steps", "grid needs at least one step");
  std::vector<double> g(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) g[i] = static_cast<double>(i) / static_cast<double>(steps);
  return g;
}

double auroc(std::span<const double> probs, std::span<const int> labels) {
  check_inputs(probs, labels);
  require_both_classes(labels);
  const auto order = ascending_order(probs);
  auto [n_pos, n_neg] = class_counts(labels);

  // Twice the Mann-Whitney U statistic, kept integral so the final division is
  // the only rounding step.
  unsigned long long twice_u = 0;
  std::size_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos_tied = 0, neg_tied = 0;
    while (j < order.size() && probs[order[j]] == probs[order[i]]) {
      (labels[order[j]] == 1 ? pos_tied : neg_tied)++;
      ++j;
    }
    twice_u += 2ULL * pos_tied * neg_below + 1ULL * pos_tied * neg_tied;
    neg_below += neg_tied;
    i = j;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auprc(std::span<const double> probs, std::span<const int> labels) {
  check_inputs(probs, labels);
  require_both_classes(labels);
  auto order = ascending_order(probs);
  std::reverse(order.begin(), order.end());
  const auto n_pos = class_counts(labels).first;

  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && probs[order[j]] == probs[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp)++;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double log_loss(std::span<const double> probs, std::span<const int> labels) {
  check_inputs(probs, labels);
  constexpr double kEps = 1e-15;
  std::vector<double> terms(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kEps, 1.0 - kEps);
    terms[i] = labels[i] == 1 ? -std::log(p) : -std::log1p(-p);
  }
  std::sort(terms.begin(), terms.end());
  return std::accumulate(terms.begin(), terms.end(), 0.0) / static_cast<double>(terms.size());
}

ScalarMetrics scalar_metrics(std::span<const double> probs, std::span<const int> labels) {
  return {auroc(probs, labels), auprc(probs, labels), log_loss(probs, labels)};
}

CalibrationCurve calibration_curve(std::span<const double> probs, std::span<const int> labels, std::size_t n_bins) {
  check_inputs(probs, labels);
  if (n_bins < 2) throw ValidationError("n_bins", "need at least 2 bins");
  std::vector<double> sum_p(n_bins, 0.0), sum_y(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    auto b = static_cast<std::size_t>(std::floor(probs[i] * static_cast<double>(n_bins)));
    b = std::min(b, n_bins - 1);
    sum_p[b] += probs[i];
    sum_y[b] += labels[i];
    ++count[b];
  }
  CalibrationCurve curve;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const double n = static_cast<double>(count[b]);
    curve.bins.push_back({static_cast<double>(b) / static_cast<double>(n_bins),
                          static_cast<double>(b + 1) / static_cast<double>(n_bins), sum_p[b] / n, sum_y[b] / n,
                          count[b]});
  }
  return curve;
}

std::vector<double> candidate_thresholds(std::span<const double> probs) {
  std::vector<double> sorted(probs.begin(), probs.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> out{0.0};
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    double mid = sorted[i] + (sorted[i + 1] - sorted[i]) / 2.0;
    if (mid <= sorted[i]) mid = sorted[i + 1];  // adjacent doubles
    out.push_back(mid);
  }
  out.push_back(1.0);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

ThresholdDecision optimize_threshold(std::span<const double> probs, std::span<const int> labels, double ppv_floor) {
  check_inputs(probs, labels);
  require_both_classes(labels);
  if (!(ppv_floor >= 0.0 && ppv_floor <= 1.0)) throw ValidationError("ppv_floor", "PPV floor outside [0, 1]");

  const auto order = ascending_order(probs);
  std::vector<double> sorted(order.size());
  // positives_below[i] = malignant count among the i smallest probabilities.
  std::vector<std::size_t> positives_below(order.size() + 1, 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    sorted[i] = probs[order[i]];
    positives_below[i + 1] = positives_below[i] + (labels[order[i]] == 1 ? 1 : 0);
  }
  const std::size_t n = sorted.size();
  const std::size_t n_pos = positives_below[n];

  ThresholdDecision best;
  best.ppv_floor = ppv_floor;
  best.n = n;
  for (double t : candidate_thresholds(probs)) {
    const auto below = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
    ConfusionCounts c;
    c.fn = positives_below[below];
    c.tn = below - c.fn;
    c.tp = n_pos - c.fn;
    c.fp = (n - below) - c.tp;
    const auto ppv = c.ppv();
    if (!ppv || *ppv < ppv_floor) continue;
    const auto npv = c.npv();
    bool take = !best.feasible;
    if (!take) {
      if (npv && (!best.npv || *npv >= *best.npv)) take = true;
      else if (!npv && !best.npv) take = true;
    }
    if (take) {
      best.feasible = true;
      best.threshold = t;
      best.npv = npv;
      best.ppv = ppv;
      best.biopsies = {c.tp + c.fp, c.tn + c.fn, c.fn};
    }
  }
  return best;
}

void write_threshold_curve_csv(std::ostream& out, const ThresholdCurve& curve) {
  out << "threshold,sensitivity,specificity,ppv,npv,tp,fp,tn,fn\n";
  for (const auto& p : curve.points) {
    out << format_double(p.threshold) << ',' << opt_cell(p.sensitivity) << ',' << opt_cell(p.specificity) << ','
        << opt_cell(p.ppv) << ',' << opt_cell(p.npv) << ',' << p.counts.tp << ',' << p.counts.fp << ','
        << p.counts.tn << ',' << p.counts.fn << '\n';
  }
}

void write_calibration_csv(std::ostream& out, const CalibrationCurve& curve) {
  out << "bin_lower,bin_upper,mean_predicted,observed_fraction,count\n";
  for (const auto& b : curve.bins) {
    out << format_double(b.lower) << ',' << format_double(b.upper) << ',' << format_double(b.mean_predicted) << ','
        << format_double(b.observed_fraction) << ',' << b.count << '\n';
  }
}

nlohmann::json to_json(const ScalarMetrics& m) {
  return {{"auroc", m.auroc}, {"auprc", m.auprc}, {"log_loss", m.log_loss}};
}

nlohmann::json to_json(const ThresholdDecision& d) {
  return {{"feasible", d.feasible},
          {"threshold", d.feasible ? nlohmann::json(d.threshold) : nlohmann::json(nullptr)},
          {"npv", opt_json(d.npv)},
          {"ppv", opt_json(d.ppv)},
          {"ppv_floor", d.ppv_floor},
          {"n", d.n},
          {"biopsies_requested", d.biopsies.requested},
          {"biopsies_avoided", d.biopsies.avoided},
          {"missed_cancers", d.biopsies.missed_cancers}};
}

}  // namespace lesionrisk
