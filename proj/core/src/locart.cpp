#include "lesionrisk/locart.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "lesionrisk/format.hpp"

namespace lesionrisk {
namespace {

// alpha is a user-facing decimal such as 0.1; (k+1) * alpha may land a few
// ulps above an integer it is meant to equal.
long long ceil_decimal(double x) { return static_cast<long long>(std::ceil(x - 1e-9 * std::max(1.0, std::abs(x)))); }

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha", "alpha must lie in (0, 1)");
}

double kth_smallest(std::vector<double> values, std::size_t rank) {
  const auto nth = values.begin() + static_cast<std::ptrdiff_t>(rank - 1);
  std::nth_element(values.begin(), nth, values.end());
  return *nth;
}

void add_row(CoverageRow& row, const PredictionSet& s, Label truth) {
  row.n++;
  row.set_size_counts[s.size()]++;
  row.avg_set_size += static_cast<double>(s.size());
  if (s.contains(truth)) {
    row.coverage_pct += 1.0;
    if (s.size() == 1) row.truth_only_pct += 1.0;
  }
}

void finish_row(CoverageRow& row) {
  const double n = static_cast<double>(row.n);
  row.avg_set_size /= n;
  row.coverage_pct = 100.0 * row.coverage_pct / n;
  row.truth_only_pct = 100.0 * row.truth_only_pct / n;
}

}  // namespace

double nonconformity(double p_malignant, Label label) {
  const double p_label = label == Label::kMalignant ? p_malignant : 1.0 - p_malignant;
  return 1.0 - p_label;
}

ResidualDataset compute_residuals(const RiskModel& m, const Dataset& cal) {
  ResidualDataset out;
  out.role = ResidualRole::kFull;
  out.samples.reserve(cal.size());
  for (const auto& r : cal.records) {
    if (!r.label) throw ValidationError("label", "calibration record '" + r.id + "' has no label");
    out.samples.push_back({r, nonconformity(m.predict_proba(r), *r.label)});
  }
  return out;
}

ResidualSplit split_residuals(const ResidualDataset& rd, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("fraction", "split fraction must lie in (0, 1)");
  const std::size_t n = rd.size();
  if (n < 2) throw ValidationError("residuals", "need at least 2 residuals to split");
  const auto n_tree = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (n_tree == 0 || n_tree == n) throw ValidationError("fraction", "split fraction leaves one half empty");

  std::array<std::vector<std::size_t>, 2> strata;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& label = rd.samples[i].record.label;
    if (!label) throw ValidationError("label", "residual sample without label");
    strata[static_cast<std::size_t>(*label)].push_back(i);
  }
  // Largest-remainder allocation of n_tree across the two labels.
  std::array<std::size_t, 2> quota{};
  std::array<double, 2> remainder{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    const double exact = fraction * static_cast<double>(strata[c].size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    remainder[c] = exact - static_cast<double>(quota[c]);
    assigned += quota[c];
  }
  while (assigned < n_tree) {
    std::size_t c = remainder[1] > remainder[0] ? 1 : 0;
    if (quota[c] >= strata[c].size()) c = 1 - c;
    quota[c]++;
    remainder[c] = -1.0;
    assigned++;
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> tree_idx, quantile_idx;
  for (std::size_t c = 0; c < 2; ++c) {
    auto idx = strata[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    tree_idx.insert(tree_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    quantile_idx.insert(quantile_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]), idx.end());
  }
  std::sort(tree_idx.begin(), tree_idx.end());
  std::sort(quantile_idx.begin(), quantile_idx.end());

  ResidualSplit out;
  out.tree_half.role = ResidualRole::kTreeHalf;
  out.quantile_half.role = ResidualRole::kQuantileHalf;
  for (auto i : tree_idx) out.tree_half.samples.push_back(rd.samples[i]);
  for (auto i : quantile_idx) out.quantile_half.samples.push_back(rd.samples[i]);
  return out;
}

QuantileLevel conformal_level(std::size_t k, double alpha, bool conservative) {
  check_alpha(alpha);
  if (k == 0) throw ValidationError("k", "calibration sample is empty");
  const auto kk = static_cast<long long>(k);
  long long rank = 0;
  double alpha_tilde = 0.0;
  if (conservative) {
    rank = ceil_decimal(static_cast<double>(kk + 1) * (1.0 - alpha));
    alpha_tilde = 1.0 - static_cast<double>(std::clamp(rank, 1LL, kk)) / static_cast<double>(kk);
  } else {
    const long long c = ceil_decimal(static_cast<double>(kk + 1) * alpha);
    alpha_tilde = static_cast<double>(c) / static_cast<double>(kk);
    rank = kk - c;
  }
  return {alpha_tilde, static_cast<std::size_t>(std::clamp(rank, 1LL, kk))};
}

LeafCalibration calibrate_pooled(std::span<const double> residuals, double alpha, bool conservative) {
  if (residuals.empty()) throw ValidationError("residuals", "calibration residuals are empty");
  const auto level = conformal_level(residuals.size(), alpha, conservative);
  LeafCalibration c;
  c.k = residuals.size();
  c.alpha = alpha;
  c.alpha_tilde = level.alpha_tilde;
  c.rank = level.rank;
  c.q = kth_smallest(std::vector<double>(residuals.begin(), residuals.end()), level.rank);
  return c;
}

const LeafCalibration& Calibration::for_leaf(std::int64_t leaf_id) const {
  auto it = leaves.find(leaf_id);
  if (it == leaves.end()) throw Error("no calibration for leaf " + std::to_string(leaf_id));
  return it->second;
}

Calibration calibrate_leaves(const PartitionTree& t, const ResidualDataset& d1, const CalibrationOptions& opts) {
  check_alpha(opts.alpha);
  if (d1.empty()) throw ValidationError("residuals", "quantile half is empty");

  std::map<std::int64_t, std::vector<double>> by_leaf;
  for (auto id : t.tree.leaf_ids()) by_leaf[id];
  std::vector<double> all;
  all.reserve(d1.size());
  for (const auto& s : d1.samples) {
    by_leaf[t.assign_leaf(s.record)].push_back(s.residual);
    all.push_back(s.residual);
  }

  Calibration out;
  out.options = opts;
  out.pooled = calibrate_pooled(all, opts.alpha, opts.conservative_level);
  for (auto& [id, residuals] : by_leaf) {
    LeafCalibration c;
    if (residuals.size() >= std::max<std::size_t>(opts.k_min, 1)) {
      c = calibrate_pooled(residuals, opts.alpha, opts.conservative_level);
    } else {
      c = out.pooled;
      c.k = residuals.size();
      c.fallback_used = true;
    }
    c.leaf_id = id;
    out.leaves.emplace(id, c);
  }
  return out;
}

std::vector<int> PredictionSet::labels() const {
  std::vector<int> out;
  if (benign) out.push_back(0);
  if (malignant) out.push_back(1);
  return out;
}

PredictionSet make_prediction_set(double p_malignant, std::int64_t leaf_id, double q) {
  PredictionSet s;
  s.p_malignant = p_malignant;
  s.leaf_id = leaf_id;
  s.q = q;
  s.cutoff = 1.0 - q;
  s.benign = nonconformity(p_malignant, Label::kBenign) <= q;
  s.malignant = nonconformity(p_malignant, Label::kMalignant) <= q;
  return s;
}

PredictionSet predict_set(const RiskModel& m, const PartitionTree& t, const Calibration& calib,
                          const LesionRecord& x) {
  const double p = m.predict_proba(x);
  const auto leaf = t.assign_leaf(x);
  return make_prediction_set(p, leaf, calib.for_leaf(leaf).q);
}

CoverageReport coverage_report(std::span<const PredictionSet> sets, std::span<const Label> truth, double alpha) {
  if (sets.size() != truth.size()) {
    throw ValidationError("truth", "prediction set and label lists differ in length (" + std::to_string(sets.size()) +
                                       " vs " + std::to_string(truth.size()) + ")");
  }
  if (sets.empty()) throw ValidationError("sets", "no prediction sets to report on");
  CoverageReport r;
  r.alpha = alpha;
  std::map<std::int64_t, CoverageRow> rows;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    auto& row = rows[sets[i].leaf_id];
    row.leaf_id = sets[i].leaf_id;
    add_row(row, sets[i], truth[i]);
    add_row(r.marginal, sets[i], truth[i]);
  }
  for (auto& [id, row] : rows) {
    finish_row(row);
    r.leaves.push_back(row);
  }
  finish_row(r.marginal);
  return r;
}

void write_coverage_csv(std::ostream& out, const CoverageReport& r) {
  out << "leaf,avg_set_size,empirical_coverage_pct,truth_only_pct,n\n";
  auto line = [&](const CoverageRow& row) {
    out << (row.leaf_id ? std::to_string(*row.leaf_id) : std::string("all")) << ',' << format_fixed(row.avg_set_size, 4)
        << ',' << format_fixed(row.coverage_pct, 2) << ',' << format_fixed(row.truth_only_pct, 2) << ',' << row.n
        << '\n';
  };
  for (const auto& row : r.leaves) line(row);
  line(r.marginal);
}

void write_set_size_csv(std::ostream& out, const CoverageReport& r) {
  out << "leaf,size0,size1,size2,n\n";
  auto line = [&](const CoverageRow& row) {
    out << (row.leaf_id ? std::to_string(*row.leaf_id) : std::string("all")) << ',' << row.set_size_counts[0] << ','
        << row.set_size_counts[1] << ',' << row.set_size_counts[2] << ',' << row.n << '\n';
  };
  for (const auto& row : r.leaves) line(row);
  line(r.marginal);
}

nlohmann::json to_json(const LeafCalibration& c) {
  return {{"leaf_id", c.leaf_id}, {"k", c.k},   {"alpha", c.alpha},
          {"alpha_tilde", c.alpha_tilde}, {"rank", c.rank}, {"q", c.q},
          {"fallback_used", c.fallback_used}};
}

nlohmann::json to_json(const Calibration& c) {
  auto leaves = nlohmann::json::array();
  for (const auto& [id, lc] : c.leaves) leaves.push_back(to_json(lc));
  return {{"alpha", c.options.alpha},
          {"k_min", c.options.k_min},
          {"conservative_level", c.options.conservative_level},
          {"pooled", to_json(c.pooled)},
          {"leaves", leaves}};
}

namespace {

LeafCalibration leaf_calibration_from_json(const nlohmann::json& j) {
  LeafCalibration c;
  c.leaf_id = j.at("leaf_id").get<std::int64_t>();
  c.k = j.at("k").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.alpha_tilde = j.at("alpha_tilde").get<double>();
  c.rank = j.at("rank").get<std::size_t>();
  c.q = j.at("q").get<double>();
  c.fallback_used = j.at("fallback_used").get<bool>();
  if (!(c.q >= 0.0 && c.q <= 1.0)) throw ConsistencyError("calibration cutoff q outside [0, 1]");
  return c;
}

}  // namespace

Calibration calibration_from_json(const nlohmann::json& j) {
  Calibration c;
  c.options.alpha = j.at("alpha").get<double>();
  c.options.k_min = j.at("k_min").get<std::size_t>();
  c.options.conservative_level = j.at("conservative_level").get<bool>();
  c.pooled = leaf_calibration_from_json(j.at("pooled"));
  for (const auto& jl : j.at("leaves")) {
    auto lc = leaf_calibration_from_json(jl);
    if (!c.leaves.emplace(lc.leaf_id, lc).second) {
      throw ConsistencyError("duplicate calibration for leaf " + std::to_string(lc.leaf_id));
    }
  }
  return c;
}

}  // namespace lesionrisk
