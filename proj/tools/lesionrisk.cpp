#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lesionrisk/bundle.hpp"
#include "lesionrisk/format.hpp"
#include "lesionrisk/pipeline.hpp"
#include "lesionrisk/service.hpp"
#include "lesionrisk/synthetic.hpp"

namespace lr = lesionrisk;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kValidation = 3, kParse = 4, kConsistency = 5 };

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw lr::Error("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw lr::ParseError(0, "", "'" + path + "' is not valid JSON: " + e.what());
  }
}

template <typename T>
std::vector<T> parse_numbers(const std::string& text, const char* what) {
  std::vector<T> out;
  for (const auto& item : lr::split_list(text, ',')) {
    try {
      std::size_t used = 0;
      T v{};
      if constexpr (std::is_floating_point_v<T>) v = std::stod(item, &used);
      else v = static_cast<T>(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw lr::ValidationError(what, "'" + item + "' is not a valid number");
    }
  }
  if (out.empty()) throw lr::ValidationError(what, "list is empty");
  return out;
}

std::vector<lr::Feature> parse_features(const std::string& text) {
  std::vector<lr::Feature> out;
  for (const auto& item : lr::split_list(text, ',')) {
    const auto f = lr::parse_feature(item);
    if (!f) throw lr::ValidationError("features", "unknown feature '" + item + "'");
    out.push_back(*f);
  }
  return out;
}

std::vector<lr::Birads> parse_birads_list(const std::string& text) {
  std::vector<lr::Birads> out;
  for (const auto& item : lr::split_list(text, ',')) {
    const auto b = lr::parse_birads(item);
    if (!b) throw lr::ValidationError("birads", "unknown BI-RADS category '" + item + "'");
    out.push_back(*b);
  }
  return out;
}

lr::Subset subset_or_throw(const std::string& text) {
  const auto s = lr::parse_subset(text);
  if (!s) throw lr::ValidationError("subset", "subset must be auto, train, cal, test or all");
  return *s;
}

void print_grid_report(std::ostream& out, const lr::GridSearchReport& r) {
  out << "C grid search (" << r.folds << "-fold, seed " << r.seed << ")\n";
  out << "  C         mean_log_loss  sd_log_loss\n";
  for (const auto& c : r.cells) {
    char line[128];
    if (c.disqualified) {
      std::snprintf(line, sizeof line, "  %-9g disqualified: %s\n", c.c, c.reason.c_str());
    } else {
      std::snprintf(line, sizeof line, "  %-9g %-14.6f %.6f%s\n", c.c, c.mean_log_loss, c.sd_log_loss,
                    c.c == r.chosen_c ? "  *" : "");
    }
    out << line;
  }
  out << "chosen C = " << lr::format_double(r.chosen_c) << '\n';
}

void print_tree_report(std::ostream& out, const lr::TreeGridReport& r) {
  out << "tree grid search (" << r.folds << "-fold, seed " << r.seed << ")\n";
  out << "  depth  min_leaf  mean_mse\n";
  for (const auto& c : r.cells) {
    char line[96];
    std::snprintf(line, sizeof line, "  %-6d %-9zu %.6f%s\n", c.max_depth, c.min_samples_leaf, c.mean_mse,
                  c.max_depth == r.chosen_depth && c.min_samples_leaf == r.chosen_min_samples_leaf ? "  *" : "");
    out << line;
  }
}

int run_synth(const std::string& config_path, std::size_t n, std::uint64_t seed, const std::string& out_path,
              std::string oracle_path) {
  auto cfg = config_path.empty() ? lr::default_generator_config(n, seed)
                                 : lr::generator_config_from_json(read_json_file(config_path));
  const auto data = lr::synthesize(cfg);
  {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw lr::Error("cannot write '" + out_path + "'");
    lr::write_csv(out, data.data);
  }
  if (oracle_path.empty()) oracle_path = out_path + ".oracle.json";
  auto records = nlohmann::json::array();
  for (const auto& r : data.data.records) {
    records.push_back({{"id", r.id},
                       {"clean_risk", data.oracle.clean_risk(r)},
                       {"risk", data.oracle(r)},
                       {"region", data.oracle.region_of(r)}});
  }
  std::ofstream meta(oracle_path, std::ios::binary | std::ios::trunc);
  if (!meta) throw lr::Error("cannot write '" + oracle_path + "'");
  meta << nlohmann::json{{"config", lr::to_json(cfg)}, {"records", records}}.dump(2) << '\n';
  std::cout << "wrote " << data.data.size() << " records to " << out_path << " (oracle: " << oracle_path << ")\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Breast-lesion malignancy risk with subgroup conformal prediction sets"};
  app.require_subcommand(1);

  std::string data_path, bundle_path, out_path, config_path, oracle_path, out_dir, input_path, addr = "127.0.0.1:8080";
  std::string split_name = "by_cohort", sizes_text, cs_text, features_text, depths_text, min_leaves_text;
  std::string subset_text = "auto", birads_text = "4a,4b", external_path;
  std::uint64_t seed = 0;
  std::size_t n = 2000, folds = 5, k_min = 20, bins = 10, curve_steps = 100;
  double alpha = 0.1, fraction = 0.5, ppv_floor = -1.0;
  bool conservative = false, optimize = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset with its risk oracle");
  synth->add_option("--config", config_path, "Generator configuration JSON (default: built-in)");
  synth->add_option("--n", n, "Record count for the built-in configuration");
  synth->add_option("--seed", seed, "Seed for the built-in configuration");
  synth->add_option("--out", out_path, "Output CSV")->required();
  synth->add_option("--oracle-out", oracle_path, "Oracle JSON (default: <out>.oracle.json)");

  auto* train = app.add_subcommand("train", "Split the data and fit the logistic risk model");
  train->add_option("--data", data_path, "Labeled CSV")->required();
  train->add_option("--split", split_name, "by_cohort or random")->check(CLI::IsMember({"by_cohort", "random"}));
  train->add_option("--seed", seed, "Seed for the split and CV folds");
  train->add_option("--out", out_path, "Bundle JSON to write")->required();
  train->add_option("--sizes", sizes_text, "Explicit n_train,n_cal,n_test");
  train->add_option("--cs", cs_text, "Comma-separated C grid");
  train->add_option("--folds", folds, "CV folds");
  train->add_option("--features", features_text, "Comma-separated model features");

  auto* calibrate = app.add_subcommand("calibrate", "Fit the residual tree and per-leaf conformal quantiles");
  calibrate->add_option("--bundle", bundle_path, "Bundle JSON, updated in place")->required();
  calibrate->add_option("--data", data_path, "Labeled CSV")->required();
  calibrate->add_option("--alpha", alpha, "Miscoverage level");
  calibrate->add_option("--fraction", fraction, "Share of calibration residuals used to fit the tree");
  calibrate->add_option("--seed", seed, "Seed for the residual split and tree CV");
  calibrate->add_option("--depths", depths_text, "Comma-separated max_depth grid");
  calibrate->add_option("--min-leaves", min_leaves_text, "Comma-separated min_samples_leaf grid");
  calibrate->add_option("--folds", folds, "Tree CV folds");
  calibrate->add_option("--k-min", k_min, "Leaves with fewer quantile-half samples use the pooled quantile");
  calibrate->add_flag("--conservative-level", conservative, "Use the ceil((k+1)(1-alpha)) order statistic");
  calibrate->add_option("--subset", subset_text, "auto (calibration part of the training file), cal or all");
  calibrate->add_option("--out", out_path, "Write the calibrated bundle here instead");

  auto* evaluate = app.add_subcommand("evaluate", "Write metric, coverage and leaf reports");
  evaluate->add_option("--bundle", bundle_path, "Calibrated bundle JSON")->required();
  evaluate->add_option("--data", data_path, "Labeled CSV")->required();
  evaluate->add_option("--out-dir", out_dir, "Report directory")->required();
  evaluate->add_option("--subset", subset_text, "auto (test part of the training file), test, cal, train or all");
  evaluate->add_option("--bins", bins, "Calibration curve bins");
  evaluate->add_option("--curve-steps", curve_steps, "Threshold curve grid steps");
  evaluate->add_flag("--optimize-threshold", optimize, "Write threshold_decision.json");
  evaluate->add_option("--ppv-floor", ppv_floor, "PPV floor (default: BI-RADS 4b malignancy rate)");
  evaluate->add_option("--birads", birads_text, "Categories for the threshold decision");
  evaluate->add_option("--external", external_path, "CSV of extra probability columns keyed by id");

  auto* predict = app.add_subcommand("predict", "Predict one record (or an array of records) from JSON");
  predict->add_option("--bundle", bundle_path, "Calibrated bundle JSON")->required();
  predict->add_option("--input", input_path, "Record JSON file")->required();

  auto* serve = app.add_subcommand("serve", "Serve the HTTP inference API");
  serve->add_option("--bundle", bundle_path, "Calibrated bundle JSON")->required();
  serve->add_option("--addr", addr, "host:port (LESIONRISK_ADDR overrides)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synth(config_path, n, seed, out_path, oracle_path);

    if (train->parsed()) {
      const auto data = lr::read_csv_file(data_path);
      lr::TrainOptions opts;
      opts.strategy = split_name == "random" ? lr::SplitStrategy::kRandom : lr::SplitStrategy::kByCohort;
      opts.seed = seed;
      opts.folds = folds;
      if (!sizes_text.empty()) {
        const auto s = parse_numbers<std::size_t>(sizes_text, "sizes");
        if (s.size() != 3) throw lr::ValidationError("sizes", "expected n_train,n_cal,n_test");
        opts.sizes = lr::SplitSpec{s[0], s[1], s[2], opts.strategy, seed};
      }
      if (!cs_text.empty()) opts.cs = parse_numbers<double>(cs_text, "cs");
      if (!features_text.empty()) opts.features = parse_features(features_text);
      const auto result = lr::train_bundle(data, opts);
      lr::save_bundle_file(result.bundle, out_path);
      print_grid_report(std::cout, result.report);
      std::cout << "split: " << result.split.train.size() << " train / " << result.split.cal.size() << " cal / "
                << result.split.test.size() << " test\nwrote " << out_path << '\n';
      return kOk;
    }

    if (calibrate->parsed()) {
      auto bundle = lr::load_bundle_file(bundle_path);
      const auto data = lr::read_csv_file(data_path);
      const auto cal = lr::select_subset(bundle, data, subset_or_throw(subset_text), lr::Subset::kCal);
      lr::CalibrateOptions opts;
      opts.alpha = alpha;
      opts.fraction = fraction;
      opts.seed = seed;
      opts.folds = folds;
      opts.k_min = k_min;
      opts.conservative_level = conservative;
      if (!depths_text.empty()) opts.depths = parse_numbers<int>(depths_text, "depths");
      if (!min_leaves_text.empty()) opts.min_leaves = parse_numbers<std::size_t>(min_leaves_text, "min-leaves");
      const auto outcome = lr::calibrate_bundle(bundle, cal, opts);
      const auto target = out_path.empty() ? bundle_path : out_path;
      lr::save_bundle_file(bundle, target);
      print_tree_report(std::cout, outcome.tree_report);
      std::cout << bundle.tree->format_rules();
      for (const auto& [id, lc] : bundle.calibration->leaves) {
        std::cout << "leaf " << id << ": k=" << lc.k << " alpha_tilde=" << lr::format_fixed(lc.alpha_tilde, 4)
                  << " q=" << lr::format_fixed(lc.q, 4) << (lc.fallback_used ? " (pooled fallback)" : "") << '\n';
      }
      std::cout << "wrote " << target << '\n';
      return kOk;
    }

    if (evaluate->parsed()) {
      const auto bundle = lr::load_bundle_file(bundle_path);
      const auto data = lr::read_csv_file(data_path);
      const auto ds = lr::select_subset(bundle, data, subset_or_throw(subset_text), lr::Subset::kTest);
      lr::EvaluateOptions opts;
      opts.calibration_bins = bins;
      opts.curve_steps = curve_steps;
      opts.optimize_threshold = optimize;
      if (ppv_floor >= 0.0) opts.ppv_floor = ppv_floor;
      opts.decision_birads = parse_birads_list(birads_text);
      if (!external_path.empty()) {
        std::ifstream in(external_path, std::ios::binary);
        if (!in) throw lr::Error("cannot open '" + external_path + "'");
        opts.external = lr::read_external_probabilities(in);
      }
      const auto report = lr::evaluate(bundle, ds, opts);
      for (const auto& name : lr::write_evaluation_reports(report, out_dir)) std::cout << out_dir << '/' << name << '\n';
      std::cout << "n=" << report.ids.size() << " auroc=" << lr::format_fixed(report.metrics.auroc, 4)
                << " coverage=" << lr::format_fixed(report.coverage.marginal.coverage_pct, 2) << "%\n";
      return kOk;
    }

    if (predict->parsed()) {
      const auto bundle = lr::load_bundle_file(bundle_path);
      const auto input = read_json_file(input_path);
      if (input.is_array()) {
        auto out = nlohmann::json::array();
        for (const auto& j : input) out.push_back(lr::to_json(lr::predict(bundle, lr::record_from_json(j))));
        std::cout << out.dump(2) << '\n';
      } else {
        std::cout << lr::to_json(lr::predict(bundle, lr::record_from_json(input))).dump(2) << '\n';
      }
      return kOk;
    }

    if (serve->parsed()) {
      auto bundle = std::make_shared<const lr::ModelBundle>(lr::load_bundle_file(bundle_path));
      auto service = std::make_shared<const lr::InferenceService>(bundle);
      const auto [host, port] = lr::resolve_bind_address(addr);
      lr::HttpServer server(service);
      std::cout << "serving model " << bundle->model_version() << " on " << host << ':' << port << std::endl;
      server.listen(host, port);
      return kOk;
    }
  } catch (const lr::ValidationError& e) {
    nlohmann::json err{{"error", "validation_error"}, {"message", e.what()}};
    for (const auto& i : e.issues()) err["issues"].push_back({{"field", i.field}, {"message", i.message}});
    std::cerr << err.dump() << '\n';
    return kValidation;
  } catch (const lr::ParseError& e) {
    std::cerr << nlohmann::json{{"error", "parse_error"}, {"message", e.what()}, {"row", e.row()}, {"field", e.field()}}.dump()
              << '\n';
    return kParse;
  } catch (const lr::ConsistencyError& e) {
    std::cerr << nlohmann::json{{"error", "consistency_error"}, {"message", e.what()}}.dump() << '\n';
    return kConsistency;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "error"}, {"message", e.what()}}.dump() << '\n';
    return kFailure;
  }
  return kFailure;
}
