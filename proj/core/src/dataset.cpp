#include "lesionrisk/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "lesionrisk/format.hpp"

namespace lesionrisk {
namespace {

constexpr std::array<std::string_view, kShapeCount> kShapeNames = {"oval", "round", "irregular"};
constexpr std::array<std::string_view, kMarginsCount> kMarginsNames = {
    "circumscribed", "indistinct", "angular", "microlobulated", "spiculated"};
constexpr std::array<std::string_view, kOrientationCount> kOrientationNames = {"parallel", "not_parallel"};
constexpr std::array<std::string_view, kBiradsCount> kBiradsNames = {"3", "4a", "4b", "4c", "5"};
constexpr std::array<std::string_view, 2> kCohortNames = {"retrospective", "prospective"};
constexpr std::array<std::string_view, 7> kFeatureNames = {"age",    "size_mm", "ri",         "palpable",
                                                           "shape", "margins", "orientation"};

template <typename Enum, std::size_t N>
std::optional<Enum> lookup(const std::array<std::string_view, N>& names, std::string_view s) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<Enum>(i);
  }
  return std::nullopt;
}

// RFC 4180 field splitting for one logical line. Quoted fields may contain
// commas and doubled quotes but not newlines.
std::vector<std::string> split_csv_line(std::string_view line, std::size_t row) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  bool field_started_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"' && cur.empty() && !field_started_quoted) {
      quoted = true;
      field_started_quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
      field_started_quoted = false;
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw ParseError(row, "", "unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

double parse_number(std::string_view text, std::size_t row, std::string_view field) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (text.empty()) throw ParseError(row, std::string(field), "missing value");
  if (ec != std::errc{} || ptr != end || !std::isfinite(v)) {
    throw ParseError(row, std::string(field), "not a finite number: '" + std::string(text) + "'");
  }
  return v;
}

template <typename Enum>
Enum parse_enum(std::optional<Enum> v, std::string_view text, std::size_t row, std::string_view field) {
  if (text.empty()) throw ParseError(row, std::string(field), "missing value");
  if (!v) {
    // Closed vocabularies: an unknown category is a validation failure, not a
    // syntax error.
    throw ValidationError({{std::string(field), std::string(field) + " has unknown category '" + std::string(text) + "'"}},
                          "row " + std::to_string(row));
  }
  return *v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

MeanSd mean_sd(const std::vector<double>& xs) {
  MeanSd out;
  if (xs.empty()) return out;
  const double n = static_cast<double>(xs.size());
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.sd = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

CohortSummary summarize_records(const std::vector<const LesionRecord*>& rs) {
  CohortSummary s;
  s.n = rs.size();
  std::vector<double> age, size, ri;
  std::size_t malignant = 0;
  for (const auto* r : rs) {
    age.push_back(r->age);
    size.push_back(r->size_mm);
    ri.push_back(r->ri);
    s.palpable[r->palpable ? 1 : 0] += 1.0;
    s.shape[static_cast<std::size_t>(r->shape)] += 1.0;
    s.margins[static_cast<std::size_t>(r->margins)] += 1.0;
    s.orientation[static_cast<std::size_t>(r->orientation)] += 1.0;
    s.birads[static_cast<std::size_t>(r->birads)] += 1.0;
    if (r->label) {
      ++s.labeled;
      if (*r->label == Label::kMalignant) ++malignant;
    }
  }
  s.age = mean_sd(age);
  s.size_mm = mean_sd(size);
  s.ri = mean_sd(ri);
  const double n = static_cast<double>(s.n);
  auto normalize = [n](auto& arr) {
    for (auto& v : arr) v /= n;
  };
  normalize(s.palpable);
  normalize(s.shape);
  normalize(s.margins);
  normalize(s.orientation);
  normalize(s.birads);
  if (s.labeled > 0) s.malignancy_rate = static_cast<double>(malignant) / static_cast<double>(s.labeled);
  return s;
}

Dataset subset(const Dataset& ds, std::vector<std::size_t> idx, const std::string& tag) {
  std::sort(idx.begin(), idx.end());
  Dataset out;
  out.provenance = ds.provenance + tag;
  out.records.reserve(idx.size());
  for (auto i : idx) out.records.push_back(ds.records[i]);
  return out;
}

}  // namespace

std::string_view to_string(Shape v) { return kShapeNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Margins v) { return kMarginsNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Orientation v) { return kOrientationNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Birads v) { return kBiradsNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Cohort v) { return kCohortNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Feature f) { return kFeatureNames[static_cast<std::size_t>(f)]; }

std::optional<Shape> parse_shape(std::string_view s) { return lookup<Shape>(kShapeNames, s); }
std::optional<Margins> parse_margins(std::string_view s) { return lookup<Margins>(kMarginsNames, s); }
std::optional<Orientation> parse_orientation(std::string_view s) {
  return lookup<Orientation>(kOrientationNames, s);
}
std::optional<Birads> parse_birads(std::string_view s) { return lookup<Birads>(kBiradsNames, s); }
std::optional<Cohort> parse_cohort(std::string_view s) { return lookup<Cohort>(kCohortNames, s); }
std::optional<Feature> parse_feature(std::string_view s) { return lookup<Feature>(kFeatureNames, s); }

bool is_numeric(Feature f) { return f == Feature::kAge || f == Feature::kSize || f == Feature::kRi; }

std::vector<Feature> default_features() {
  return {Feature::kAge, Feature::kSize, Feature::kRi, Feature::kPalpable, Feature::kShape, Feature::kMargins};
}

double feature_value(const LesionRecord& r, Feature f) {
  switch (f) {
    case Feature::kAge: return r.age;
    case Feature::kSize: return r.size_mm;
    case Feature::kRi: return r.ri;
    case Feature::kPalpable: return r.palpable ? 1.0 : 0.0;
    case Feature::kShape: return static_cast<double>(r.shape);
    case Feature::kMargins: return static_cast<double>(r.margins);
    case Feature::kOrientation: return static_cast<double>(r.orientation);
  }
  return 0.0;
}

std::vector<FieldIssue> check_record(const LesionRecord& r) {
  std::vector<FieldIssue> issues;
  if (!std::isfinite(r.age)) issues.push_back({"age", "age must be a finite number"});
  else if (r.age < 18.0) issues.push_back({"age", "age ≥ 18 violated"});
  if (!std::isfinite(r.size_mm)) issues.push_back({"size_mm", "size_mm must be a finite number"});
  else if (r.size_mm <= 0.0) issues.push_back({"size_mm", "size > 0 violated"});
  else if (r.size_mm > 30.0) issues.push_back({"size_mm", "size ≤ 30 violated"});
  if (!std::isfinite(r.ri)) issues.push_back({"ri", "ri must be a finite number"});
  else if (r.ri < 0.0) issues.push_back({"ri", "ri ≥ 0 violated"});
  if (static_cast<std::size_t>(r.shape) >= kShapeCount) issues.push_back({"shape", "shape outside vocabulary"});
  if (static_cast<std::size_t>(r.margins) >= kMarginsCount) issues.push_back({"margins", "margins outside vocabulary"});
  if (static_cast<std::size_t>(r.orientation) >= kOrientationCount) {
    issues.push_back({"orientation", "orientation outside vocabulary"});
  }
  if (static_cast<std::size_t>(r.birads) >= kBiradsCount) issues.push_back({"birads", "birads outside vocabulary"});
  return issues;
}

void validate_record(const LesionRecord& r) {
  auto issues = check_record(r);
  if (!issues.empty()) throw ValidationError(std::move(issues), r.id.empty() ? std::string{} : "record '" + r.id + "'");
}

void check_unique_ids(const Dataset& ds) {
  std::unordered_set<std::string> seen;
  for (const auto& r : ds.records) {
    if (!seen.insert(r.id).second) throw ValidationError("id", "duplicate id '" + r.id + "'");
  }
}

Dataset parse_csv(std::istream& in, std::string provenance) {
  Dataset ds;
  ds.provenance = std::move(provenance);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "", "missing header row");
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);

  const auto header = split_csv_line(line, 1);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name(trim(header[i]));
    if (!col.emplace(name, i).second) throw ParseError(1, name, "duplicate column");
  }
  for (auto name : kCsvColumns) {
    if (!col.contains(std::string(name))) throw ParseError(1, std::string(name), "missing column");
  }
  auto at = [&](const std::vector<std::string>& f, std::string_view name) {
    return trim(f[col.at(std::string(name))]);
  };

  std::unordered_set<std::string> ids;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line, row);
    if (f.size() != header.size()) {
      throw ParseError(row, "", "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    }
    LesionRecord r;
    r.id = std::string(at(f, "id"));
    if (r.id.empty()) throw ParseError(row, "id", "missing value");
    r.age = parse_number(at(f, "age"), row, "age");
    r.size_mm = parse_number(at(f, "size_mm"), row, "size_mm");
    r.ri = parse_number(at(f, "ri"), row, "ri");
    const auto palp = at(f, "palpable");
    if (palp == "1" || palp == "true") r.palpable = true;
    else if (palp == "0" || palp == "false") r.palpable = false;
    else if (palp.empty()) throw ParseError(row, "palpable", "missing value");
    else throw ParseError(row, "palpable", "expected 0 or 1, got '" + std::string(palp) + "'");
    r.shape = parse_enum(parse_shape(at(f, "shape")), at(f, "shape"), row, "shape");
    r.margins = parse_enum(parse_margins(at(f, "margins")), at(f, "margins"), row, "margins");
    r.orientation = parse_enum(parse_orientation(at(f, "orientation")), at(f, "orientation"), row, "orientation");
    r.birads = parse_enum(parse_birads(at(f, "birads")), at(f, "birads"), row, "birads");
    r.cohort = parse_enum(parse_cohort(at(f, "cohort")), at(f, "cohort"), row, "cohort");
    const auto lab = at(f, "label");
    if (lab == "1") r.label = Label::kMalignant;
    else if (lab == "0") r.label = Label::kBenign;
    else if (!lab.empty()) throw ParseError(row, "label", "expected 0, 1 or empty, got '" + std::string(lab) + "'");

    auto issues = check_record(r);
    if (!issues.empty()) throw ValidationError(std::move(issues), "row " + std::to_string(row));
    if (!ids.insert(r.id).second) throw ValidationError({{"id", "duplicate id '" + r.id + "'"}}, "row " + std::to_string(row));
    ds.records.push_back(std::move(r));
  }
  return ds;
}

Dataset read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return parse_csv(in, path);
}

void write_csv(std::ostream& out, const Dataset& ds) {
  for (std::size_t i = 0; i < kCsvColumns.size(); ++i) {
    out << (i ? "," : "") << kCsvColumns[i];
  }
  out << '\n';
  for (const auto& r : ds.records) {
    out << quote_if_needed(r.id) << ',' << format_double(r.age) << ',' << format_double(r.size_mm) << ','
        << format_double(r.ri) << ',' << (r.palpable ? 1 : 0) << ',' << to_string(r.shape) << ','
        << to_string(r.margins) << ',' << to_string(r.orientation) << ',' << to_string(r.birads) << ','
        << to_string(r.cohort) << ',';
    if (r.label) out << static_cast<int>(*r.label);
    out << '\n';
  }
}

Split split(const Dataset& ds, const SplitSpec& spec) {
  const std::size_t n = ds.size();
  if (spec.n_train == 0 || spec.n_cal == 0 || spec.n_test == 0) {
    throw ValidationError("split", "split sizes must all be positive");
  }
  if (spec.n_train + spec.n_cal + spec.n_test != n) {
    throw ValidationError("split", "split sizes " + std::to_string(spec.n_train) + "+" + std::to_string(spec.n_cal) +
                                       "+" + std::to_string(spec.n_test) + " do not sum to dataset size " +
                                       std::to_string(n));
  }
  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> train, cal, test;

  if (spec.strategy == SplitStrategy::kRandom) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(spec.n_train));
    cal.assign(idx.begin() + static_cast<std::ptrdiff_t>(spec.n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(spec.n_train + spec.n_cal));
    test.assign(idx.begin() + static_cast<std::ptrdiff_t>(spec.n_train + spec.n_cal), idx.end());
  } else {
    std::vector<std::size_t> retro, prosp;
    for (std::size_t i = 0; i < n; ++i) {
      (ds.records[i].cohort == Cohort::kRetrospective ? retro : prosp).push_back(i);
    }
    if (retro.size() < spec.n_train) {
      throw ValidationError("split", "by_cohort split needs " + std::to_string(spec.n_train) +
                                         " retrospective records, found " + std::to_string(retro.size()));
    }
    if (prosp.size() < spec.n_test) {
      throw ValidationError("split", "by_cohort split needs " + std::to_string(spec.n_test) +
                                         " prospective records, found " + std::to_string(prosp.size()));
    }
    std::shuffle(retro.begin(), retro.end(), rng);
    std::shuffle(prosp.begin(), prosp.end(), rng);
    train.assign(retro.begin(), retro.begin() + static_cast<std::ptrdiff_t>(spec.n_train));
    test.assign(prosp.begin(), prosp.begin() + static_cast<std::ptrdiff_t>(spec.n_test));
    cal.assign(retro.begin() + static_cast<std::ptrdiff_t>(spec.n_train), retro.end());
    cal.insert(cal.end(), prosp.begin() + static_cast<std::ptrdiff_t>(spec.n_test), prosp.end());
  }
  return {subset(ds, std::move(train), "#train"), subset(ds, std::move(cal), "#cal"),
          subset(ds, std::move(test), "#test")};
}

SplitSpec proportional_split(std::size_t n, SplitStrategy strategy, std::uint64_t seed) {
  constexpr double kTotal = 513.0 + 1059.0 + 364.0;
  SplitSpec s;
  s.strategy = strategy;
  s.seed = seed;
  s.n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(n) * 513.0 / kTotal)));
  s.n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(n) * 364.0 / kTotal)));
  if (n < s.n_train + s.n_test + 1) throw ValidationError("split", "dataset too small to split three ways");
  s.n_cal = n - s.n_train - s.n_test;
  return s;
}

SummaryStats summarize(const Dataset& ds) {
  if (ds.empty()) throw ValidationError("dataset", "cannot summarize an empty dataset");
  SummaryStats out;
  std::map<Cohort, std::vector<const LesionRecord*>> by_cohort;
  std::vector<const LesionRecord*> all;
  for (const auto& r : ds.records) {
    by_cohort[r.cohort].push_back(&r);
    all.push_back(&r);
  }
  for (const auto& [cohort, rs] : by_cohort) out.cohorts.emplace(cohort, summarize_records(rs));
  out.overall = summarize_records(all);
  return out;
}

Dataset filter_birads(const Dataset& ds, std::span<const Birads> categories) {
  Dataset out;
  out.provenance = ds.provenance;
  for (const auto& r : ds.records) {
    if (std::find(categories.begin(), categories.end(), r.birads) != categories.end()) out.records.push_back(r);
  }
  return out;
}

}  // namespace lesionrisk
