#include "lesionrisk/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "lesionrisk/format.hpp"

namespace lesionrisk {
namespace {

std::string_view to_string(SplitStrategy s) { return s == SplitStrategy::kByCohort ? "by_cohort" : "random"; }

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json split_json(const SplitSpec& s) {
  return {{"strategy", to_string(s.strategy)},
          {"seed", s.seed},
          {"n_train", s.n_train},
          {"n_cal", s.n_cal},
          {"n_test", s.n_test}};
}

SplitSpec split_from_json(const nlohmann::json& j) {
  SplitSpec s;
  s.strategy = j.at("strategy").get<std::string>() == "by_cohort" ? SplitStrategy::kByCohort : SplitStrategy::kRandom;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.n_train = j.at("n_train").get<std::size_t>();
  s.n_cal = j.at("n_cal").get<std::size_t>();
  s.n_test = j.at("n_test").get<std::size_t>();
  return s;
}

std::vector<int> label_ints(const Dataset& ds) {
  std::vector<int> out;
  out.reserve(ds.size());
  for (const auto& r : ds.records) {
    if (!r.label) throw ValidationError("label", "record '" + r.id + "' has no label");
    out.push_back(static_cast<int>(*r.label));
  }
  return out;
}

std::string set_text(const PredictionSet& s) {
  if (s.benign && s.malignant) return "0|1";
  if (s.benign) return "0";
  if (s.malignant) return "1";
  return "";
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  auto cells = split_list(line, ',');
  for (auto& c : cells) {
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
    while (!c.empty() && c.front() == ' ') c.erase(c.begin());
  }
  return cells;
}

}  // namespace

nlohmann::json to_json(const GridSearchReport& r) {
  auto cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json jc{{"C", c.c},
                      {"fold_log_loss", c.fold_log_loss},
                      {"mean_log_loss", c.mean_log_loss},
                      {"sd_log_loss", c.sd_log_loss},
                      {"disqualified", c.disqualified}};
    if (c.disqualified) jc["reason"] = c.reason;
    cells.push_back(jc);
  }
  return {{"cells", cells}, {"chosen_C", r.chosen_c}, {"folds", r.folds}, {"seed", r.seed}};
}

TrainOutcome train_bundle(const Dataset& data, const TrainOptions& opts) {
  check_unique_ids(data);
  SplitSpec spec = opts.sizes ? *opts.sizes : proportional_split(data.size(), opts.strategy, opts.seed);
  spec.strategy = opts.strategy;
  spec.seed = opts.seed;
  Split parts = split(data, spec);
  const auto enc = fit_encoder(parts.train, opts.features);
  auto result = grid_search(parts.train, enc, opts.cs, opts.folds, opts.seed);

  TrainOutcome out;
  out.bundle.model = std::move(result.model);
  out.report = result.report;
  out.bundle.metadata = {{"dataset_hash", dataset_fingerprint(data)},
                         {"dataset_provenance", data.provenance},
                         {"n_records", data.size()},
                         {"split", split_json(spec)},
                         {"train_seed", opts.seed},
                         {"grid_search", to_json(result.report)},
                         {"created_at", utc_timestamp()}};
  out.split = std::move(parts);
  return out;
}

std::optional<Subset> parse_subset(std::string_view s) {
  if (s == "auto") return Subset::kAuto;
  if (s == "train") return Subset::kTrain;
  if (s == "cal") return Subset::kCal;
  if (s == "test") return Subset::kTest;
  if (s == "all") return Subset::kAll;
  return std::nullopt;
}

Dataset select_subset(const ModelBundle& b, const Dataset& data, Subset subset, Subset auto_part) {
  if (subset == Subset::kAll) return data;
  const bool same_data = b.metadata.contains("dataset_hash") && b.metadata.contains("split") &&
                         b.metadata.at("dataset_hash").get<std::string>() == dataset_fingerprint(data);
  if (subset == Subset::kAuto) {
    if (!same_data) return data;
    subset = auto_part;
  }
  if (!same_data) {
    throw ValidationError("data", "dataset does not match the one the bundle was trained on; use the whole file");
  }
  auto parts = split(data, split_from_json(b.metadata.at("split")));
  switch (subset) {
    case Subset::kTrain: return std::move(parts.train);
    case Subset::kCal: return std::move(parts.cal);
    default: return std::move(parts.test);
  }
}

CalibrateOutcome calibrate_bundle(ModelBundle& b, const Dataset& cal, const CalibrateOptions& opts) {
  if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) throw ValidationError("alpha", "alpha must lie in (0, 1)");
  const auto residuals = compute_residuals(b.model, cal);
  CalibrateOutcome out;
  out.halves = split_residuals(residuals, opts.fraction, opts.seed);

  std::vector<Feature> features;
  for (const auto& f : b.model.encoder.features) features.push_back(f.feature);
  auto grid = tree_grid_search(out.halves.tree_half, opts.depths, opts.min_leaves, opts.folds, opts.seed, features);
  out.tree_report = grid.report;

  const CalibrationOptions copts{opts.alpha, opts.k_min, opts.conservative_level};
  b.calibration = calibrate_leaves(grid.tree, out.halves.quantile_half, copts);
  b.tree = std::move(grid.tree);

  auto profiles = nlohmann::json::array();
  for (const auto& p : leaf_profiles(*b.tree, cal, b.model)) profiles.push_back(to_json(p));
  b.metadata["calibration"] = {{"n", cal.size()},
                               {"dataset_provenance", cal.provenance},
                               {"alpha", opts.alpha},
                               {"fraction", opts.fraction},
                               {"seed", opts.seed},
                               {"tree_half", out.halves.tree_half.size()},
                               {"quantile_half", out.halves.quantile_half.size()}};
  b.metadata["tree_grid_search"] = to_json(out.tree_report);
  b.metadata["leaf_profiles"] = profiles;
  b.metadata["calibrated_at"] = utc_timestamp();
  check_consistency(b);
  return out;
}

LesionRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("record", "record must be a JSON object");
  LesionRecord r;
  std::vector<FieldIssue> issues;

  auto number = [&](const char* name, double& out) {
    if (!j.contains(name)) return issues.push_back({name, std::string(name) + " is required"});
    const auto& v = j.at(name);
    if (!v.is_number()) return issues.push_back({name, std::string(name) + " must be a number"});
    out = v.get<double>();
  };
  auto category = [&]<typename Enum>(const char* name, Enum& out, auto parse, bool required) {
    if (!j.contains(name) || j.at(name).is_null()) {
      if (required) issues.push_back({name, std::string(name) + " is required"});
      return;
    }
    const auto& v = j.at(name);
    std::string text;
    if (v.is_string()) {
      text = v.get<std::string>();
    } else if (v.is_number_integer()) {
      text = std::to_string(v.get<long long>());
    } else {
      return issues.push_back({name, std::string(name) + " must be a string"});
    }
    const std::optional<Enum> parsed = parse(text);
    if (!parsed) return issues.push_back({name, std::string(name) + " has unknown value '" + text + "'"});
    out = *parsed;
  };

  if (j.contains("id")) {
    if (j.at("id").is_string()) r.id = j.at("id").get<std::string>();
    else issues.push_back({"id", "id must be a string"});
  }
  number("age", r.age);
  number("size_mm", r.size_mm);
  number("ri", r.ri);
  if (!j.contains("palpable")) {
    issues.push_back({"palpable", "palpable is required"});
  } else {
    const auto& v = j.at("palpable");
    if (v.is_boolean()) r.palpable = v.get<bool>();
    else if (v.is_number_integer() && (v.get<long long>() == 0 || v.get<long long>() == 1)) r.palpable = v.get<long long>() == 1;
    else if (v.is_string() && (v == "yes" || v == "no")) r.palpable = v == "yes";
    else issues.push_back({"palpable", "palpable must be true/false, 0/1 or yes/no"});
  }
  category("shape", r.shape, parse_shape, true);
  category("margins", r.margins, parse_margins, true);
  category("orientation", r.orientation, parse_orientation, true);
  category("birads", r.birads, parse_birads, false);
  category("cohort", r.cohort, parse_cohort, false);
  if (j.contains("label") && !j.at("label").is_null()) {
    const auto& v = j.at("label");
    if (v == "benign" || v == 0) r.label = Label::kBenign;
    else if (v == "malignant" || v == 1) r.label = Label::kMalignant;
    else issues.push_back({"label", "label must be benign/malignant or 0/1"});
  }

  for (auto& issue : check_record(r)) {
    const bool already = std::any_of(issues.begin(), issues.end(), [&](const FieldIssue& i) { return i.field == issue.field; });
    if (!already) issues.push_back(std::move(issue));
  }
  if (!issues.empty()) throw ValidationError(std::move(issues));
  return r;
}

nlohmann::json to_json(const LesionRecord& r) {
  nlohmann::json j{{"id", r.id},
                   {"age", r.age},
                   {"size_mm", r.size_mm},
                   {"ri", r.ri},
                   {"palpable", r.palpable},
                   {"shape", to_string(r.shape)},
                   {"margins", to_string(r.margins)},
                   {"orientation", to_string(r.orientation)},
                   {"birads", to_string(r.birads)},
                   {"cohort", to_string(r.cohort)}};
  if (r.label) j["label"] = *r.label == Label::kMalignant ? "malignant" : "benign";
  return j;
}

PredictResponse predict(const ModelBundle& b, const LesionRecord& r) {
  if (!b.calibrated()) throw Error("bundle is not calibrated; run calibrate first");
  PredictResponse out;
  out.set = predict_set(b.model, *b.tree, *b.calibration, r);
  out.risk = out.set.p_malignant;
  out.leaf_rule_path = b.tree->leaf_rule(out.set.leaf_id);
  out.alpha = b.calibration->options.alpha;
  out.model_version = b.model_version();
  return out;
}

nlohmann::json to_json(const PredictResponse& r) {
  auto names = nlohmann::json::array();
  if (r.set.benign) names.push_back("benign");
  if (r.set.malignant) names.push_back("malignant");
  return {{"risk", r.risk},
          {"prediction_set", r.set.labels()},
          {"prediction_set_labels", names},
          {"leaf_id", r.set.leaf_id},
          {"leaf_rule_path", r.leaf_rule_path},
          {"cutoff", r.set.cutoff},
          {"q", r.set.q},
          {"alpha", r.alpha},
          {"model_version", r.model_version}};
}

EvaluationReport evaluate(const ModelBundle& b, const Dataset& ds, const EvaluateOptions& opts) {
  if (!b.calibrated()) throw Error("bundle is not calibrated; run calibrate first");
  if (ds.empty()) throw ValidationError("data", "evaluation dataset is empty");
  EvaluationReport r;
  r.labels = label_ints(ds);
  std::vector<Label> truth;
  for (const auto& rec : ds.records) {
    r.ids.push_back(rec.id);
    r.sets.push_back(predict_set(b.model, *b.tree, *b.calibration, rec));
    r.probs.push_back(r.sets.back().p_malignant);
    truth.push_back(*rec.label);
  }
  r.metrics = scalar_metrics(r.probs, r.labels);
  r.curve = threshold_curve(r.probs, r.labels, uniform_grid(opts.curve_steps));
  r.calibration = calibration_curve(r.probs, r.labels, opts.calibration_bins);
  r.coverage = coverage_report(r.sets, truth, b.calibration->options.alpha);
  r.profiles = leaf_profiles(*b.tree, ds, b.model);

  if (opts.optimize_threshold) {
    const auto sub = filter_birads(ds, opts.decision_birads);
    if (sub.empty()) throw ValidationError("birads", "no records in the requested BI-RADS categories");
    double floor = 0.0;
    if (opts.ppv_floor) {
      floor = *opts.ppv_floor;
      r.ppv_floor_source = "explicit";
    } else {
      const Birads anchor[] = {Birads::k4b};
      const auto b4 = filter_birads(ds, anchor);
      if (b4.empty()) throw ValidationError("ppv_floor", "no BI-RADS 4b records to derive the PPV floor from");
      const auto l4 = label_ints(b4);
      floor = static_cast<double>(std::count(l4.begin(), l4.end(), 1)) / static_cast<double>(l4.size());
      r.ppv_floor_source = "birads_4b_malignancy_rate";
    }
    std::vector<double> p;
    for (const auto& rec : sub.records) p.push_back(b.model.predict_proba(rec));
    r.decision = optimize_threshold(p, label_ints(sub), floor);
  }

  for (const auto& [name, by_id] : opts.external) {
    std::vector<double> p;
    p.reserve(ds.size());
    for (const auto& rec : ds.records) {
      auto it = by_id.find(rec.id);
      if (it == by_id.end()) throw ValidationError("external", "column '" + name + "' has no value for '" + rec.id + "'");
      p.push_back(it->second);
    }
    r.external[name] = scalar_metrics(p, r.labels);
  }
  return r;
}

void write_leaf_profiles_csv(std::ostream& out, std::span<const LeafProfile> profiles) {
  out << "leaf,n,birads_3,birads_4a,birads_4b,birads_4c,birads_5,malignancy_rate,accuracy,mean_residual\n";
  for (const auto& p : profiles) {
    out << p.leaf_id << ',' << p.count;
    for (auto c : p.birads) out << ',' << c;
    out << ',' << format_fixed(p.malignancy_rate, 4) << ',' << format_fixed(p.accuracy, 4) << ','
        << format_fixed(p.mean_residual, 4) << '\n';
  }
}

nlohmann::json to_json(const LeafProfile& p) {
  nlohmann::json birads;
  for (std::size_t i = 0; i < p.birads.size(); ++i) birads[std::string(to_string(static_cast<Birads>(i)))] = p.birads[i];
  return {{"leaf_id", p.leaf_id},
          {"n", p.count},
          {"birads", birads},
          {"malignancy_rate", p.malignancy_rate},
          {"accuracy", p.accuracy},
          {"mean_residual", p.mean_residual}};
}

std::vector<std::string> write_evaluation_reports(const EvaluationReport& r, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    write_file(fs::path(dir) / name, content);
    written.push_back(name);
  };

  std::ostringstream s;
  write_threshold_curve_csv(s, r.curve);
  emit("threshold_curve.csv", s.str());

  s.str("");
  write_calibration_csv(s, r.calibration);
  emit("calibration_curve.csv", s.str());

  s.str("");
  write_coverage_csv(s, r.coverage);
  emit("coverage.csv", s.str());

  s.str("");
  write_set_size_csv(s, r.coverage);
  emit("set_sizes.csv", s.str());

  s.str("");
  write_leaf_profiles_csv(s, r.profiles);
  emit("leaf_profiles.csv", s.str());

  s.str("");
  s << "id,p_malignant,leaf,set,label\n";
  for (std::size_t i = 0; i < r.ids.size(); ++i) {
    s << r.ids[i] << ',' << format_double(r.probs[i]) << ',' << r.sets[i].leaf_id << ',' << set_text(r.sets[i]) << ','
      << r.labels[i] << '\n';
  }
  emit("predictions.csv", s.str());

  nlohmann::json metrics = to_json(r.metrics);
  metrics["n"] = r.ids.size();
  metrics["positives"] = std::count(r.labels.begin(), r.labels.end(), 1);
  metrics["alpha"] = r.coverage.alpha;
  metrics["marginal_coverage"] = r.coverage.marginal.coverage_pct / 100.0;
  metrics["average_set_size"] = r.coverage.marginal.avg_set_size;
  if (!r.external.empty()) {
    nlohmann::json ext;
    for (const auto& [name, m] : r.external) ext[name] = to_json(m);
    metrics["external"] = ext;
  }
  emit("metrics.json", metrics.dump(2) + "\n");

  if (r.decision) {
    auto d = to_json(*r.decision);
    d["ppv_floor_source"] = r.ppv_floor_source;
    emit("threshold_decision.json", d.dump(2) + "\n");
  }
  return written;
}

std::map<std::string, std::map<std::string, double>> read_external_probabilities(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "", "external probability file is empty");
  const auto header = split_csv_line(line);
  const auto id_col = std::find(header.begin(), header.end(), "id");
  if (id_col == header.end()) throw ParseError(1, "id", "external probability file has no id column");
  const auto id_index = static_cast<std::size_t>(id_col - header.begin());
  if (header.size() < 2) throw ParseError(1, "", "external probability file has no probability columns");

  std::map<std::string, std::map<std::string, double>> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw ParseError(row, "", "expected " + std::to_string(header.size()) + " cells");
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == id_index) continue;
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(cells[c], &used);
        if (used != cells[c].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw ParseError(row, header[c], "'" + cells[c] + "' is not a number");
      }
      if (!(v >= 0.0 && v <= 1.0)) throw ParseError(row, header[c], "probability outside [0, 1]");
      out[header[c]][cells[id_index]] = v;
    }
  }
  return out;
}

}  // namespace lesionrisk
