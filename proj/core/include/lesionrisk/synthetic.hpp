#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lesionrisk/dataset.hpp"

namespace lesionrisk {

/// `feature < value` (or `>=`). Categorical features compare by ordinal code.
struct RegionCondition {
  Feature feature = Feature::kAge;
  bool less_than = true;
  double value = 0.0;
};

/// Records matching every condition have their labels flipped with
/// probability `noise`.
struct NoiseRegion {
  std::string name;
  std::vector<RegionCondition> conditions;
  double noise = 0.0;
};

/// Ground-truth generator. The clean risk is
///   sigmoid(intercept + sum_t coefficients[t] * term_t(x))
/// over the terms listed by generator_terms(); numeric terms are centered and
/// scaled by the generator's own marginals. The first matching region then
/// mixes in its label-flip rate.
struct GeneratorConfig {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  double intercept = 0.0;
  std::map<std::string, double> coefficients;
  std::vector<NoiseRegion> regions;
  double prospective_fraction = 0.5;
};

/// Valid keys for GeneratorConfig::coefficients.
const std::vector<std::string>& generator_terms();

/// Throws ValidationError on unknown terms, noise outside [0, 0.5], n == 0 or a
/// cohort fraction outside [0, 1].
void validate(const GeneratorConfig& cfg);

GeneratorConfig generator_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GeneratorConfig& cfg);

/// Moderately informative default link with no planted regions.
GeneratorConfig default_generator_config(std::size_t n, std::uint64_t seed);

/// True conditional malignancy probability of the generator.
class Oracle {
 public:
  explicit Oracle(GeneratorConfig cfg);

  /// Risk before region label noise.
  double clean_risk(const LesionRecord& r) const;
  double operator()(const LesionRecord& r) const;
  /// Index into config().regions of the first matching region, or -1.
  int region_of(const LesionRecord& r) const;

  const GeneratorConfig& config() const noexcept { return cfg_; }

 private:
  GeneratorConfig cfg_;
};

struct SyntheticData {
  Dataset data;
  Oracle oracle;
};

/// Draws features from fixed marginals, BI-RADS from the clean risk band and
/// the label from Bernoulli(oracle(x)). Bit-identical for a fixed seed.
SyntheticData synthesize(const GeneratorConfig& cfg);

}  // namespace lesionrisk
