#include "lesionrisk/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace lesionrisk {
namespace {

// Marginals loosely follow the pooled cohort statistics of the source study.
constexpr double kAgeMean = 52.0, kAgeSd = 14.0, kAgeMax = 95.0;
constexpr double kSizeMean = 16.7, kSizeSd = 7.0, kSizeMin = 0.5, kSizeMax = 30.0;
constexpr double kRiMean = 0.45, kRiSd = 0.4;
constexpr double kPalpable = 0.60;
constexpr std::array<double, kShapeCount> kShapeProbs = {0.33, 0.10, 0.57};
constexpr std::array<double, kMarginsCount> kMarginsProbs = {0.33, 0.25, 0.12, 0.12, 0.18};
constexpr double kNotParallel = 0.30;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double term_value(const LesionRecord& r, const std::string& term) {
  if (term == "age") return (r.age - kAgeMean) / kAgeSd;
  if (term == "size_mm") return (r.size_mm - kSizeMean) / kSizeSd;
  if (term == "ri") return (r.ri - kRiMean) / kRiSd;
  if (term == "palpable") return r.palpable ? 1.0 : 0.0;
  if (term == "shape=round") return r.shape == Shape::kRound ? 1.0 : 0.0;
  if (term == "shape=irregular") return r.shape == Shape::kIrregular ? 1.0 : 0.0;
  if (term == "margins=indistinct") return r.margins == Margins::kIndistinct ? 1.0 : 0.0;
  if (term == "margins=angular") return r.margins == Margins::kAngular ? 1.0 : 0.0;
  if (term == "margins=microlobulated") return r.margins == Margins::kMicrolobulated ? 1.0 : 0.0;
  if (term == "margins=spiculated") return r.margins == Margins::kSpiculated ? 1.0 : 0.0;
  if (term == "orientation=not_parallel") return r.orientation == Orientation::kNotParallel ? 1.0 : 0.0;
  return 0.0;
}

template <std::size_t N>
std::size_t draw_category(std::mt19937_64& rng, const std::array<double, N>& probs) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < N; ++i) {
    acc += probs[i];
    if (x < acc) return i;
  }
  return N - 1;
}

Birads birads_for_risk(double p) {
  if (p < 0.02) return Birads::k3;
  if (p < 0.10) return Birads::k4a;
  if (p < 0.50) return Birads::k4b;
  if (p < 0.95) return Birads::k4c;
  return Birads::k5;
}

double condition_value(const nlohmann::json& v, Feature f) {
  if (v.is_number()) return v.get<double>();
  if (!v.is_string()) throw ValidationError("regions", "condition value must be a number or category name");
  const auto s = v.get<std::string>();
  std::optional<double> code;
  switch (f) {
    case Feature::kShape:
      if (auto x = parse_shape(s)) code = static_cast<double>(*x);
      break;
    case Feature::kMargins:
      if (auto x = parse_margins(s)) code = static_cast<double>(*x);
      break;
    case Feature::kOrientation:
      if (auto x = parse_orientation(s)) code = static_cast<double>(*x);
      break;
    default:
      break;
  }
  if (!code) throw ValidationError("regions", "unknown category '" + s + "' for " + std::string(to_string(f)));
  return *code;
}

}  // namespace

const std::vector<std::string>& generator_terms() {
  static const std::vector<std::string> terms = {
      "age",          "size_mm",           "ri",
      "palpable",     "shape=round",       "shape=irregular",
      "margins=indistinct", "margins=angular", "margins=microlobulated",
      "margins=spiculated", "orientation=not_parallel"};
  return terms;
}

void validate(const GeneratorConfig& cfg) {
  std::vector<FieldIssue> issues;
  if (cfg.n == 0) issues.push_back({"n", "n must be positive"});
  const auto& terms = generator_terms();
  for (const auto& [k, v] : cfg.coefficients) {
    if (std::find(terms.begin(), terms.end(), k) == terms.end()) {
      issues.push_back({"coefficients", "unknown coefficient term '" + k + "'"});
    } else if (!std::isfinite(v)) {
      issues.push_back({"coefficients", "coefficient '" + k + "' is not finite"});
    }
  }
  if (!std::isfinite(cfg.intercept)) issues.push_back({"intercept", "intercept is not finite"});
  for (const auto& r : cfg.regions) {
    if (!(r.noise >= 0.0 && r.noise <= 0.5)) {
      issues.push_back({"regions", "noise rate of region '" + r.name + "' outside [0, 0.5]"});
    }
  }
  if (!(cfg.prospective_fraction >= 0.0 && cfg.prospective_fraction <= 1.0)) {
    issues.push_back({"prospective_fraction", "prospective_fraction outside [0, 1]"});
  }
  if (!issues.empty()) throw ValidationError(std::move(issues), "generator config");
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config", "generator config must be a JSON object");
  GeneratorConfig cfg;
  try {
    cfg.n = j.at("n").get<std::size_t>();
    cfg.seed = j.value("seed", std::uint64_t{0});
    cfg.intercept = j.value("intercept", 0.0);
    cfg.prospective_fraction = j.value("prospective_fraction", 0.5);
    if (j.contains("coefficients")) cfg.coefficients = j.at("coefficients").get<std::map<std::string, double>>();
    if (j.contains("regions")) {
      for (const auto& jr : j.at("regions")) {
        NoiseRegion region;
        region.name = jr.value("name", std::string{});
        region.noise = jr.at("noise").get<double>();
        for (const auto& jc : jr.value("conditions", nlohmann::json::array())) {
          RegionCondition c;
          const auto fname = jc.at("feature").get<std::string>();
          const auto f = parse_feature(fname);
          if (!f) throw ValidationError("regions", "unknown feature '" + fname + "'");
          c.feature = *f;
          const auto op = jc.at("op").get<std::string>();
          if (op == "<") c.less_than = true;
          else if (op == ">=") c.less_than = false;
          else throw ValidationError("regions", "condition op must be '<' or '>=', got '" + op + "'");
          c.value = condition_value(jc.at("value"), c.feature);
          region.conditions.push_back(c);
        }
        cfg.regions.push_back(std::move(region));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config", std::string("malformed generator config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

nlohmann::json to_json(const GeneratorConfig& cfg) {
  nlohmann::json j;
  j["n"] = cfg.n;
  j["seed"] = cfg.seed;
  j["intercept"] = cfg.intercept;
  j["coefficients"] = cfg.coefficients;
  j["prospective_fraction"] = cfg.prospective_fraction;
  auto regions = nlohmann::json::array();
  for (const auto& r : cfg.regions) {
    auto conds = nlohmann::json::array();
    for (const auto& c : r.conditions) {
      conds.push_back({{"feature", to_string(c.feature)}, {"op", c.less_than ? "<" : ">="}, {"value", c.value}});
    }
    regions.push_back({{"name", r.name}, {"noise", r.noise}, {"conditions", conds}});
  }
  j["regions"] = regions;
  return j;
}

GeneratorConfig default_generator_config(std::size_t n, std::uint64_t seed) {
  GeneratorConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  cfg.intercept = -1.6;
  cfg.coefficients = {{"age", 0.8},
                      {"size_mm", 0.6},
                      {"ri", 0.9},
                      {"palpable", 0.4},
                      {"shape=round", 0.3},
                      {"shape=irregular", 1.3},
                      {"margins=indistinct", 0.9},
                      {"margins=angular", 1.6},
                      {"margins=microlobulated", 1.4},
                      {"margins=spiculated", 2.2},
                      {"orientation=not_parallel", 0.6}};
  return cfg;
}

Oracle::Oracle(GeneratorConfig cfg) : cfg_(std::move(cfg)) {}

double Oracle::clean_risk(const LesionRecord& r) const {
  double z = cfg_.intercept;
  for (const auto& [term, coef] : cfg_.coefficients) z += coef * term_value(r, term);
  return sigmoid(z);
}

int Oracle::region_of(const LesionRecord& r) const {
  for (std::size_t i = 0; i < cfg_.regions.size(); ++i) {
    const auto& conds = cfg_.regions[i].conditions;
    const bool hit = std::all_of(conds.begin(), conds.end(), [&](const RegionCondition& c) {
      const double v = feature_value(r, c.feature);
      return c.less_than ? v < c.value : v >= c.value;
    });
    if (hit) return static_cast<int>(i);
  }
  return -1;
}

double Oracle::operator()(const LesionRecord& r) const {
  const double p = clean_risk(r);
  const int region = region_of(r);
  if (region < 0) return p;
  const double eta = cfg_.regions[static_cast<std::size_t>(region)].noise;
  return (1.0 - eta) * p + eta * (1.0 - p);
}

SyntheticData synthesize(const GeneratorConfig& cfg) {
  validate(cfg);
  SyntheticData out{Dataset{}, Oracle(cfg)};
  out.data.provenance = "synthetic:seed=" + std::to_string(cfg.seed);
  out.data.records.reserve(cfg.n);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> age(kAgeMean, kAgeSd);
  std::normal_distribution<double> size(kSizeMean, kSizeSd);
  std::normal_distribution<double> ri(kRiMean, kRiSd);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  for (std::size_t i = 0; i < cfg.n; ++i) {
    LesionRecord r;
    r.id = "syn-" + std::to_string(cfg.seed) + "-" + std::to_string(i);
    r.age = std::clamp(age(rng), 18.0, kAgeMax);
    r.size_mm = std::clamp(size(rng), kSizeMin, kSizeMax);
    r.ri = std::max(ri(rng), 0.0);
    r.palpable = u(rng) < kPalpable;
    r.shape = static_cast<Shape>(draw_category(rng, kShapeProbs));
    r.margins = static_cast<Margins>(draw_category(rng, kMarginsProbs));
    r.orientation = u(rng) < kNotParallel ? Orientation::kNotParallel : Orientation::kParallel;
    r.cohort = u(rng) < cfg.prospective_fraction ? Cohort::kProspective : Cohort::kRetrospective;
    r.birads = birads_for_risk(out.oracle.clean_risk(r));
    r.label = u(rng) < out.oracle(r) ? Label::kMalignant : Label::kBenign;
    out.data.records.push_back(std::move(r));
  }
  return out;
}

}  // namespace lesionrisk
