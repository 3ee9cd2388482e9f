// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "lesionrisk/service.hpp"
#include "lesionrisk/synthetic.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace lesionrisk;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int decimals = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string fmt_sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<PredictionSet> predict_all(const ModelBundle& b, const Dataset& ds) {
  std::vector<PredictionSet> out;
  out.reserve(ds.size());
  for (const auto& r : ds.records) out.push_back(predict_set(b.model, *b.tree, *b.calibration, r));
  return out;
}

std::vector<Label> truth_of(const Dataset& ds) {
  std::vector<Label> out;
  for (const auto& r : ds.records) out.push_back(*r.label);
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LESIONRISK_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream s(line);
  std::string cell;
  while (std::getline(s, cell, ',')) out.push_back(cell);
  return out;
}

// A1: default generator, 1000/4000/4000, 20 seeds.
Outcome marginal_coverage() {
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> cov;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto data = synthesize(default_generator_config(9000, seed)).data;
    TrainOptions topts;
    topts.strategy = SplitStrategy::kRandom;
    topts.seed = seed;
    topts.sizes = SplitSpec{1000, 4000, 4000, SplitStrategy::kRandom, seed};
    auto trained = train_bundle(data, topts);
    CalibrateOptions copts;
    copts.alpha = 0.1;
    copts.seed = seed;
    calibrate_bundle(trained.bundle, trained.split.cal, copts);
    const auto sets = predict_all(trained.bundle, trained.split.test);
    const auto truth = truth_of(trained.split.test);
    cov.push_back(coverage_report(sets, truth, 0.1).marginal.coverage_pct / 100.0);
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double mean = mean_of(cov);
  const double worst = *std::min_element(cov.begin(), cov.end());
  const bool pass = mean >= 0.885 && mean <= 0.915 && worst >= 0.87 && seconds <= 300.0;
  return {pass, "mean=" + fmt(mean) + " min=" + fmt(worst) + " runtime=" + fmt(seconds, 1) + "s"};
}

GeneratorConfig planted_config(std::size_t n, std::uint64_t seed) {
  auto cfg = default_generator_config(n, seed);
  const RegionCondition young{Feature::kAge, true, 52.0}, old{Feature::kAge, false, 52.0};
  const RegionCondition small{Feature::kSize, true, 16.0}, large{Feature::kSize, false, 16.0};
  cfg.regions = {{"young_small", {young, small}, 0.0},
                 {"young_large", {young, large}, 0.05},
                 {"old_small", {old, small}, 0.15},
                 {"old_large", {old, large}, 0.35}};
  return cfg;
}

// A2: planted regions with increasing label noise; Locart per leaf against a
// pooled split-conformal baseline on the hardest region.
Outcome local_coverage() {
  constexpr double kAlpha = 0.1;
  constexpr std::size_t kMinTest = 500;
  std::vector<double> leaf_cov, seed_leaf_mean, baseline_hard, locart_hard;
  double worst = 1.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto synth = synthesize(planted_config(82000, seed));
    TrainOptions topts;
    topts.strategy = SplitStrategy::kRandom;
    topts.seed = seed;
    topts.sizes = SplitSpec{2000, 40000, 40000, SplitStrategy::kRandom, seed};
    topts.cs = {1.0};
    auto trained = train_bundle(synth.data, topts);
    CalibrateOptions copts;
    copts.alpha = kAlpha;
    copts.seed = seed;
    copts.depths = {2, 3, 4};
    copts.min_leaves = {1000, 2000};
    const auto cal = calibrate_bundle(trained.bundle, trained.split.cal, copts);
    const auto& test = trained.split.test;
    const auto sets = predict_all(trained.bundle, test);
    const auto report = coverage_report(sets, truth_of(test), kAlpha);
    std::vector<double> this_seed;
    for (const auto& row : report.leaves) {
      if (row.n < kMinTest) continue;
      const double c = row.coverage_pct / 100.0;
      this_seed.push_back(c);
      leaf_cov.push_back(c);
      worst = std::min(worst, c);
    }
    seed_leaf_mean.push_back(mean_of(this_seed));

    std::vector<double> pooled_residuals;
    for (const auto& s : cal.halves.quantile_half.samples) pooled_residuals.push_back(s.residual);
    const double q_global = calibrate_pooled(pooled_residuals, kAlpha, true).q;
    std::size_t hard_n = 0, hard_base = 0, hard_local = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto& r = test.records[i];
      if (synth.oracle.region_of(r) != 3) continue;
      ++hard_n;
      const double p = trained.bundle.model.predict_proba(r);
      hard_base += make_prediction_set(p, -1, q_global).contains(*r.label);
      hard_local += sets[i].contains(*r.label);
    }
    baseline_hard.push_back(static_cast<double>(hard_base) / static_cast<double>(hard_n));
    locart_hard.push_back(static_cast<double>(hard_local) / static_cast<double>(hard_n));
  }
  const double avg = mean_of(seed_leaf_mean);
  const double base = mean_of(baseline_hard);
  const bool pass = worst >= 0.87 && avg >= 0.885 && base <= (1.0 - kAlpha) - 0.02;
  return {pass, "leaves=" + std::to_string(leaf_cov.size()) + " min_leaf=" + fmt(worst) + " avg_leaf=" + fmt(avg) +
                    " hardest_region locart=" + fmt(mean_of(locart_hard)) + " pooled=" + fmt(base)};
}

// A3: per-leaf quantiles against sort-and-index with exact integer ranks.
Outcome quantile_oracle() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> kdist(1, 200);
  std::uniform_int_distribution<long long> alpha_milli(10, 500);
  std::uniform_int_distribution<int> level(0, 100);

  TreeNode root{0, 0, 0, 50.0, 1, 2, 0.0, 0};
  TreeNode left{1, 1, -1, 0.0, -1, -1, 0.0, 0};
  TreeNode right{2, 1, -1, 0.0, -1, -1, 0.0, 0};
  PartitionTree tree{{{Feature::kAge}}, RegressionTree({root, left, right}, {1, 1})};

  std::size_t mismatches = 0;
  for (int c = 0; c < 1000; ++c) {
    const long long milli = c == 0 ? 100 : alpha_milli(rng);
    const double alpha = static_cast<double>(milli) / 1000.0;
    const std::size_t k_left = c == 0 ? 9 : kdist(rng), k_right = kdist(rng);
    ResidualDataset d1;
    std::map<std::int64_t, std::vector<double>> by_leaf;
    for (std::size_t i = 0; i < k_left + k_right; ++i) {
      LesionRecord r = testing::suspicious_record();
      r.age = i < k_left ? 40.0 : 60.0;
      r.label = Label::kBenign;
      const double res = level(rng) / 100.0;
      d1.samples.push_back({r, res});
      by_leaf[i < k_left ? 1 : 2].push_back(res);
    }
    const auto calib = calibrate_leaves(tree, d1, {alpha, 1, false});
    for (auto& [id, values] : by_leaf) {
      std::sort(values.begin(), values.end());
      const auto k = static_cast<long long>(values.size());
      const long long ceil_k1_alpha = ((k + 1) * milli + 999) / 1000;
      const long long m = std::clamp(k - ceil_k1_alpha, 1LL, k);
      const auto& lc = calib.for_leaf(id);
      if (lc.rank != static_cast<std::size_t>(m) || lc.q != values[static_cast<std::size_t>(m - 1)]) ++mismatches;
      if (c == 0 && id == 1 && lc.rank != 8) ++mismatches;
    }
  }
  return {mismatches == 0, "cases=1000 mismatches=" + std::to_string(mismatches) + " hand_case_k9_rank=" +
                               std::to_string(conformal_level(9, 0.1).rank)};
}

// A4: analytic gradient against central differences.
Outcome gradient_check() {
  std::mt19937_64 rng(404);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int d = 0; d < 3; ++d) {
    const Eigen::Index n = 40 + 30 * d, p = 4 + 2 * d;
    Eigen::MatrixXd x(n, p);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      for (Eigen::Index j = 1; j < p; ++j) x(i, j) = normal(rng);
      y(i) = u(rng) < 0.4 ? 1.0 : 0.0;
    }
    const LogisticObjective obj(x, y, 0.5 + d);
    for (int point = 0; point < 20; ++point) {
      Eigen::VectorXd theta(p);
      for (Eigen::Index j = 0; j < p; ++j) theta(j) = normal(rng);
      const Eigen::VectorXd g = obj.gradient(theta);
      Eigen::VectorXd fd(p);
      const double h = 1e-5;
      for (Eigen::Index j = 0; j < p; ++j) {
        Eigen::VectorXd plus = theta, minus = theta;
        plus(j) += h;
        minus(j) -= h;
        fd(j) = (obj.value(plus) - obj.value(minus)) / (2.0 * h);
      }
      worst = std::max(worst, (g - fd).norm() / std::max(g.norm(), 1e-12));
    }
  }
  return {worst <= 1e-5, "max_relative_error=" + fmt_sci(worst)};
}

// A5: AUROC against pair counting; log-loss of the 0.5 predictor.
Outcome auroc_oracle() {
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<int> level(0, 30);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int mismatches = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 2 + static_cast<std::size_t>(u(rng) * 199);
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = level(rng) / 30.0;
      y[i] = u(rng) < 0.4 ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    long long twice = 0, pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (y[i] != 1 || y[j] != 0) continue;
        ++pairs;
        twice += p[i] > p[j] ? 2 : (p[i] == p[j] ? 1 : 0);
      }
    }
    const double oracle = static_cast<double>(twice) / (2.0 * static_cast<double>(pairs));
    if (scalar_metrics(p, y).auroc != oracle) ++mismatches;
  }
  std::vector<double> half(100, 0.5);
  std::vector<int> balanced(100);
  for (std::size_t i = 0; i < 100; ++i) balanced[i] = static_cast<int>(i % 2);
  const double ll_err = std::abs(scalar_metrics(half, balanced).log_loss - std::log(2.0));
  return {mismatches == 0 && ll_err <= 1e-12,
          "instances=50 mismatches=" + std::to_string(mismatches) + " |logloss-ln2|=" + fmt_sci(ll_err)};
}

double sse(const std::vector<double>& y) {
  if (y.empty()) return 0.0;
  const double m = mean_of(y);
  double s = 0.0;
  for (double v : y) s += (v - m) * (v - m);
  return s;
}

// A6: root split against exhaustive midpoint search; caps as a property.
Outcome tree_oracle() {
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> age_level(18, 40);
  const std::vector<Feature> one = {Feature::kAge};
  int mismatches = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 2 + static_cast<std::size_t>(u(rng) * 29);
    const std::size_t min_leaf = 1 + static_cast<std::size_t>(u(rng) * 4);
    ResidualDataset rd;
    for (std::size_t i = 0; i < n; ++i) {
      LesionRecord r = testing::suspicious_record();
      r.age = age_level(rng);
      r.label = Label::kBenign;
      rd.samples.push_back({r, u(rng)});
    }
    std::vector<double> xs, ys;
    for (const auto& s : rd.samples) {
      xs.push_back(s.record.age);
      ys.push_back(s.residual);
    }
    std::vector<double> distinct = xs;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    const double parent = sse(ys);
    double best = parent;
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
      const double t = (distinct[i] + distinct[i + 1]) / 2.0;
      std::vector<double> l, r;
      for (std::size_t j = 0; j < n; ++j) (xs[j] < t ? l : r).push_back(ys[j]);
      if (l.size() < min_leaf || r.size() < min_leaf) continue;
      best = std::min(best, sse(l) + sse(r));
    }
    const auto t = fit_tree(rd, {1, min_leaf}, one);
    const auto& root = t.tree.nodes()[0];
    double got = parent;
    if (!root.is_leaf()) {
      std::vector<double> l, r;
      for (std::size_t j = 0; j < n; ++j) (xs[j] < root.threshold ? l : r).push_back(ys[j]);
      got = sse(l) + sse(r);
      bool midpoint = false;
      for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
        midpoint = midpoint || root.threshold == (distinct[i] + distinct[i + 1]) / 2.0;
      }
      if (!midpoint) ++mismatches;
    } else if (parent - best > 1e-12 * static_cast<double>(n)) {
      ++mismatches;
    }
    if (std::abs(got - best) > 1e-9) ++mismatches;
  }

  int violations = 0;
  for (int rep = 0; rep < 100; ++rep) {
    ResidualDataset rd;
    const std::size_t n = 50 + static_cast<std::size_t>(u(rng) * 500);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = testing::random_record(rng, static_cast<int>(i));
      r.label = Label::kBenign;
      rd.samples.push_back({r, u(rng) * (r.age > 50 ? 1.0 : 0.5)});
    }
    const TreeParams params{static_cast<int>(u(rng) * 7), 1 + static_cast<std::size_t>(u(rng) * 40)};
    const auto t = fit_tree(rd, params);
    if (t.tree.depth() > params.max_depth) ++violations;
    std::map<std::int64_t, std::size_t> counts;
    for (const auto& s : rd.samples) counts[t.assign_leaf(s.record)]++;
    for (const auto& node : t.tree.nodes()) {
      if (!node.is_leaf()) continue;
      const bool single_leaf = t.leaf_count() == 1;
      if ((!single_leaf && counts[node.id] < params.min_samples_leaf) || counts[node.id] != node.count) ++violations;
    }
  }
  return {mismatches == 0 && violations == 0,
          "instances=100 mismatches=" + std::to_string(mismatches) + " cap_violations=" + std::to_string(violations)};
}

// A7: membership rule, non-emptiness and alpha monotonicity.
Outcome set_algebra() {
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int rule = 0, empty = 0, monotone = 0;
  for (int i = 0; i < 10000; ++i) {
    const double p = u(rng), q = u(rng);
    const auto s = make_prediction_set(p, 0, q);
    const bool malignant = 1.0 - p <= q, benign = p <= q;
    if (s.malignant != malignant || s.benign != benign) ++rule;
    if (q >= 0.5 && s.size() == 0) ++empty;
  }
  TreeNode root{0, 0, 0, 50.0, 1, 2, 0.0, 0};
  TreeNode left{1, 1, -1, 0.0, -1, -1, 0.0, 0};
  TreeNode right{2, 1, -1, 0.0, -1, -1, 0.0, 0};
  const PartitionTree tree{{{Feature::kAge}}, RegressionTree({root, left, right}, {1, 1})};
  RiskModel model;
  for (int c = 0; c < 1000; ++c) {
    ResidualDataset d1;
    const std::size_t n = 5 + static_cast<std::size_t>(u(rng) * 300);
    for (std::size_t i = 0; i < n; ++i) {
      LesionRecord r = testing::suspicious_record();
      r.age = u(rng) < 0.5 ? 40.0 : 60.0;
      r.label = Label::kBenign;
      d1.samples.push_back({r, u(rng)});
    }
    double a1 = 0.01 + 0.98 * u(rng), a2 = 0.01 + 0.98 * u(rng);
    if (a1 > a2) std::swap(a1, a2);
    const auto tight = calibrate_leaves(tree, d1, {a1, 10, false});
    const auto loose = calibrate_leaves(tree, d1, {a2, 10, false});
    for (std::int64_t leaf : {1, 2}) {
      for (int probe = 0; probe < 5; ++probe) {
        const double p = u(rng);
        const auto big = make_prediction_set(p, leaf, tight.for_leaf(leaf).q);
        const auto small = make_prediction_set(p, leaf, loose.for_leaf(leaf).q);
        if ((small.benign && !big.benign) || (small.malignant && !big.malignant)) ++monotone;
      }
    }
  }
  return {rule == 0 && empty == 0 && monotone == 0, "rule_violations=" + std::to_string(rule) + " empty_sets=" +
                                                        std::to_string(empty) + " superset_violations=" +
                                                        std::to_string(monotone)};
}

// A8: exhaustive sweep plus a 20%-prevalence subset with and without
// separation at the floor.
Outcome threshold_optimizer() {
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int sweep_mismatch = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 5 + static_cast<std::size_t>(u(rng) * 150);
    std::vector<double> p(n);
    std::vector<int> y(n);
    const int levels = 5 + inst % 40;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = std::floor(u(rng) * levels) / levels;
      y[i] = u(rng) < p[i] ? 1 : 0;
    }
    y[0] = 1;
    const double floor = 0.8 * u(rng);
    std::vector<double> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<double> cands = {0.0, 1.0};
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) cands.push_back((sorted[i] + sorted[i + 1]) / 2.0);
    std::sort(cands.begin(), cands.end());
    bool found = false;
    double best_t = 0.0, best_npv = -1.0;
    for (double t : cands) {
      long tp = 0, fp = 0, tn = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool pos = p[i] >= t;
        tp += pos && y[i];
        fp += pos && !y[i];
        tn += !pos && !y[i];
        fn += !pos && y[i];
      }
      if (tp + fp == 0 || static_cast<double>(tp) / static_cast<double>(tp + fp) < floor) continue;
      const double npv = tn + fn == 0 ? -0.5 : static_cast<double>(tn) / static_cast<double>(tn + fn);
      if (!found || npv >= best_npv) {
        found = true;
        best_npv = npv;
        best_t = t;
      }
    }
    const auto d = optimize_threshold(p, y, floor);
    if (d.feasible != found || (found && d.threshold != best_t)) ++sweep_mismatch;
  }

  int separable_missed = 0, infeasible_wrong = 0, floor_violations = 0, separable_cases = 0, infeasible_cases = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t n = 300;
    std::vector<double> p(n);
    std::vector<int> y(n);
    const bool separable = inst % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i < n / 5 ? 1 : 0;
      if (separable) {
        p[i] = y[i] ? 0.5 + 0.5 * u(rng) : 0.45 * u(rng);
      } else {
        p[i] = y[i] ? 0.6 * u(rng) : 0.3 + 0.7 * u(rng);
      }
    }
    const double floor = separable ? 0.2 : 0.2 + 0.8 * u(rng);
    double max_ppv = 0.0;
    for (double t : candidate_thresholds(p)) {
      const auto c = confusion_at(p, y, t);
      if (c.ppv()) max_ppv = std::max(max_ppv, *c.ppv());
    }
    const auto d = optimize_threshold(p, y, floor);
    if (d.feasible && (!d.ppv || *d.ppv < floor)) ++floor_violations;
    if (d.feasible != (max_ppv >= floor)) ++infeasible_wrong;
    if (!d.feasible) ++infeasible_cases;
    if (separable) {
      ++separable_cases;
      if (!d.feasible || d.biopsies.missed_cancers != 0) ++separable_missed;
    }
  }
  const bool pass = sweep_mismatch == 0 && separable_missed == 0 && infeasible_wrong == 0 && floor_violations == 0 &&
                    infeasible_cases > 0;
  return {pass, "sweep_mismatches=" + std::to_string(sweep_mismatch) + " separable_with_misses=" +
                    std::to_string(separable_missed) + "/" + std::to_string(separable_cases) +
                    " infeasible_reported=" + std::to_string(infeasible_cases) + " wrong_feasibility=" +
                    std::to_string(infeasible_wrong) + " floor_violations=" + std::to_string(floor_violations)};
}

struct CliRun {
  bool ok = false;
  double seconds = 0.0;
};

CliRun cli_pipeline(const fs::path& dir, std::size_t n) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto data = (dir / "data.csv").string(), bundle = (dir / "bundle.json").string();
  const auto start = std::chrono::steady_clock::now();
  const bool ok = run_cli("synth --n " + std::to_string(n) + " --seed 42 --out " + data) == 0 &&
                  run_cli("train --data " + data + " --split by_cohort --seed 7 --out " + bundle) == 0 &&
                  run_cli("calibrate --bundle " + bundle + " --data " + data + " --alpha 0.1 --seed 9") == 0 &&
                  run_cli("evaluate --bundle " + bundle + " --data " + data + " --out-dir " + (dir / "reports").string() +
                          " --optimize-threshold") == 0;
  return {ok, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
}

// A9: coverage and leaf-profile report formats.
Outcome report_formats(const fs::path& root) {
  const auto run = cli_pipeline(root / "formats", 2000);
  if (!run.ok) return {false, "pipeline failed"};
  const auto reports = root / "formats" / "reports";
  std::ifstream cov(reports / "coverage.csv");
  std::string line;
  std::getline(cov, line);
  const bool cov_header = line == "leaf,avg_set_size,empirical_coverage_pct,truth_only_pct,n";
  int rows = 0, bad_rows = 0;
  while (std::getline(cov, line)) {
    const auto cells = split_line(line);
    ++rows;
    if (cells.size() != 5 || std::stod(cells[3]) > std::stod(cells[2])) ++bad_rows;
  }
  std::ifstream prof(reports / "leaf_profiles.csv");
  std::getline(prof, line);
  const bool prof_header =
      line == "leaf,n,birads_3,birads_4a,birads_4b,birads_4c,birads_5,malignancy_rate,accuracy,mean_residual";

  int property_violations = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto b = testing::small_calibrated_bundle(1500, seed);
    const auto data = synthesize(default_generator_config(1000, seed + 100)).data;
    const auto r = coverage_report(predict_all(b, data), truth_of(data), 0.1);
    for (const auto& row : r.leaves) property_violations += row.truth_only_pct > row.coverage_pct;
    property_violations += r.marginal.truth_only_pct > r.marginal.coverage_pct;
  }
  const bool pass = cov_header && prof_header && rows > 1 && bad_rows == 0 && property_violations == 0;
  return {pass, std::string("coverage_header=") + (cov_header ? "ok" : "bad") + " profile_header=" +
                    (prof_header ? "ok" : "bad") + " rows=" + std::to_string(rows) + " truth_only>coverage=" +
                    std::to_string(bad_rows + property_violations)};
}

// A10: byte-identical reports across two runs; bundle round trip.
Outcome reproducibility(const fs::path& root) {
  const auto a = cli_pipeline(root / "run_a", 2000);
  const auto b = cli_pipeline(root / "run_b", 2000);
  if (!a.ok || !b.ok) return {false, "pipeline failed"};
  int differing = 0, files = 0;
  for (const auto& entry : fs::directory_iterator(root / "run_a" / "reports")) {
    ++files;
    const auto other = root / "run_b" / "reports" / entry.path().filename();
    if (!fs::exists(other) || read_file(entry.path()) != read_file(other)) ++differing;
  }
  const auto bundle = load_bundle_file((root / "run_a" / "bundle.json").string());
  std::ostringstream saved;
  save_bundle(bundle, saved);
  std::istringstream in(saved.str());
  const auto back = load_bundle(in);
  std::mt19937_64 rng(1010);
  int diffs = 0;
  for (int i = 0; i < 100; ++i) {
    const auto r = testing::random_record(rng, i);
    const auto x = predict(bundle, r), y = predict(back, r);
    if (x.risk != y.risk || x.set.labels() != y.set.labels() || x.set.q != y.set.q || x.set.leaf_id != y.set.leaf_id) {
      ++diffs;
    }
  }
  const bool pass = differing == 0 && files >= 7 && diffs == 0 && a.seconds <= 60.0;
  return {pass, "report_files=" + std::to_string(files) + " differing=" + std::to_string(differing) +
                    " roundtrip_diffs=" + std::to_string(diffs) + " pipeline_seconds=" + fmt(a.seconds, 2)};
}

// A11: service golden checks on an in-process bundle.
Outcome service_contract() {
  const auto bundle = std::make_shared<const ModelBundle>(testing::small_calibrated_bundle());
  const InferenceService svc(bundle);
  int failures = 0;

  const auto rec = testing::suspicious_record();
  const auto ok = svc.handle("POST", "/v1/predict", to_json(rec).dump());
  const double z = bundle->model.logit(rec);
  const double p = 1.0 / (1.0 + std::exp(-z));
  const auto leaf = bundle->tree->assign_leaf(rec);
  const double q = bundle->calibration->for_leaf(leaf).q;
  json expected_set = json::array();
  if (p <= q) expected_set.push_back(0);
  if (1.0 - p <= q) expected_set.push_back(1);
  if (ok.status != 200 || std::abs(ok.body.at("risk").get<double>() - p) > 1e-12 || ok.body.at("leaf_id") != leaf ||
      ok.body.at("prediction_set") != expected_set || ok.body.at("alpha") != 0.1) {
    ++failures;
  }

  auto young = to_json(rec);
  young["age"] = 17;
  const auto bad = svc.handle("POST", "/v1/predict", young.dump());
  if (bad.status != 422 || bad.body.at("issues").empty() ||
      bad.body.at("issues")[0].at("message").get<std::string>().find("age ≥ 18") == std::string::npos) {
    ++failures;
  }

  std::mt19937_64 rng(1111);
  auto batch = json::array();
  for (int i = 0; i < 20; ++i) batch.push_back(to_json(testing::random_record(rng, i)));
  const auto many = svc.handle("POST", "/v1/predict/batch", batch.dump());
  if (many.status != 200 || many.body.size() != batch.size()) {
    ++failures;
  } else {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (many.body[i] != svc.handle("POST", "/v1/predict", batch[i].dump()).body) ++failures;
    }
  }
  return {failures == 0, "golden_failures=" + std::to_string(failures)};
}

}  // namespace

int main() {
  const auto root = fs::temp_directory_path() / "lesionrisk_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"A1", marginal_coverage},
      {"A2", local_coverage},
      {"A3", quantile_oracle},
      {"A4", gradient_check},
      {"A5", auroc_oracle},
      {"A6", tree_oracle},
      {"A7", set_algebra},
      {"A8", threshold_optimizer},
      {"A9", [&] { return report_formats(root); }},
      {"A10", [&] { return reproducibility(root); }},
      {"A11", service_contract},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << name << ' ' << (o.pass ? "PASS" : "FAIL") << ' ' << o.detail << std::endl;
    failed += o.pass ? 0 : 1;
  }
  fs::remove_all(root);
  return failed == 0 ? 0 : 1;
}
