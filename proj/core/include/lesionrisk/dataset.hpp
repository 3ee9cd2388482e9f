#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lesionrisk/error.hpp"

namespace lesionrisk {

// BI-RADS lexicon vocabularies. Enumerator order is the ordinal code used by
// the subgroup tree (increasing suspicion), so do not reorder.
enum class Shape { kOval, kRound, kIrregular };
enum class Margins { kCircumscribed, kIndistinct, kAngular, kMicrolobulated, kSpiculated };
enum class Orientation { kParallel, kNotParallel };
enum class Birads { k3, k4a, k4b, k4c, k5 };
enum class Cohort { kRetrospective, kProspective };
enum class Label { kBenign = 0, kMalignant = 1 };

inline constexpr std::size_t kShapeCount = 3;
inline constexpr std::size_t kMarginsCount = 5;
inline constexpr std::size_t kOrientationCount = 2;
inline constexpr std::size_t kBiradsCount = 5;

std::string_view to_string(Shape v);
std::string_view to_string(Margins v);
std::string_view to_string(Orientation v);
std::string_view to_string(Birads v);
std::string_view to_string(Cohort v);

// Parsers return nullopt for strings outside the closed vocabulary.
std::optional<Shape> parse_shape(std::string_view s);
std::optional<Margins> parse_margins(std::string_view s);
std::optional<Orientation> parse_orientation(std::string_view s);
std::optional<Birads> parse_birads(std::string_view s);
std::optional<Cohort> parse_cohort(std::string_view s);

/// Model-facing lesion attributes. BI-RADS category and cohort are record
/// metadata and never appear here.
enum class Feature { kAge, kSize, kRi, kPalpable, kShape, kMargins, kOrientation };

std::string_view to_string(Feature f);
std::optional<Feature> parse_feature(std::string_view s);
bool is_numeric(Feature f);

/// {age, size_mm, ri, palpable, shape, margins}; orientation is opt-in.
std::vector<Feature> default_features();

struct LesionRecord {
  std::string id;
  double age = 0.0;
  double size_mm = 0.0;
  double ri = 0.0;
  bool palpable = false;
  Shape shape = Shape::kOval;
  Margins margins = Margins::kCircumscribed;
  Orientation orientation = Orientation::kParallel;
  Birads birads = Birads::k3;
  Cohort cohort = Cohort::kRetrospective;
  std::optional<Label> label;

  friend bool operator==(const LesionRecord&, const LesionRecord&) = default;
};

/// Raw value of a feature: numeric fields as-is, palpable as 0/1, categorical
/// fields as their ordinal code.
double feature_value(const LesionRecord& r, Feature f);

/// Every schema rule the record violates; empty when valid.
std::vector<FieldIssue> check_record(const LesionRecord& r);

/// Throws ValidationError listing every violated rule.
void validate_record(const LesionRecord& r);

struct Dataset {
  std::vector<LesionRecord> records;
  std::string provenance;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
};

/// Throws ValidationError if two records share an id.
void check_unique_ids(const Dataset& ds);

/// Column order written by write_csv. parse_csv accepts any order.
inline constexpr std::array<std::string_view, 11> kCsvColumns = {
    "id", "age", "size_mm", "ri", "palpable", "shape", "margins", "orientation", "birads", "cohort", "label"};

Dataset parse_csv(std::istream& in, std::string provenance = {});
Dataset read_csv_file(const std::string& path);
void write_csv(std::ostream& out, const Dataset& ds);

enum class SplitStrategy { kByCohort, kRandom };

struct SplitSpec {
  std::size_t n_train = 0;
  std::size_t n_cal = 0;
  std::size_t n_test = 0;
  SplitStrategy strategy = SplitStrategy::kRandom;
  std::uint64_t seed = 0;
};

struct Split {
  Dataset train;
  Dataset cal;
  Dataset test;
};

/// Deterministic disjoint partition. Each part keeps the input's relative
/// record order.
Split split(const Dataset& ds, const SplitSpec& spec);

/// Sizes in the 513:1059:364 train/cal/test ratio, remainder going to cal.
SplitSpec proportional_split(std::size_t n, SplitStrategy strategy, std::uint64_t seed);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample sd, n-1 denominator; 0 for a single record
};

struct CohortSummary {
  std::size_t n = 0;
  MeanSd age;
  MeanSd size_mm;
  MeanSd ri;
  std::array<double, 2> palpable{};  // {no, yes}
  std::array<double, kShapeCount> shape{};
  std::array<double, kMarginsCount> margins{};
  std::array<double, kOrientationCount> orientation{};
  std::array<double, kBiradsCount> birads{};
  std::size_t labeled = 0;
  std::optional<double> malignancy_rate;  // among labeled records
};

struct SummaryStats {
  std::map<Cohort, CohortSummary> cohorts;  // cohorts with no records are absent
  CohortSummary overall;
};

SummaryStats summarize(const Dataset& ds);

/// Records whose BI-RADS category is in `categories`, order preserved.
Dataset filter_birads(const Dataset& ds, std::span<const Birads> categories);

}  // namespace lesionrisk
