#pragma once

#include <random>
#include <string>

#include "lesionrisk/pipeline.hpp"
#include "lesionrisk/synthetic.hpp"

namespace lesionrisk::testing {

/// A suspicious lesion: irregular, spiculated, not parallel, high RI.
inline LesionRecord suspicious_record() {
  LesionRecord r;
  r.id = "suspicious";
  r.age = 63.0;
  r.size_mm = 22.0;
  r.ri = 0.82;
  r.palpable = true;
  r.shape = Shape::kIrregular;
  r.margins = Margins::kSpiculated;
  r.orientation = Orientation::kNotParallel;
  r.birads = Birads::k4c;
  r.cohort = Cohort::kProspective;
  return r;
}

inline LesionRecord random_record(std::mt19937_64& rng, int index = 0) {
  std::uniform_real_distribution<double> age(18.0, 90.0), size(0.5, 30.0), ri(0.0, 1.5), u(0.0, 1.0);
  std::uniform_int_distribution<int> shape(0, 2), margins(0, 4), orient(0, 1), birads(0, 4);
  LesionRecord r;
  r.id = "r" + std::to_string(index);
  r.age = age(rng);
  r.size_mm = size(rng);
  r.ri = ri(rng);
  r.palpable = u(rng) < 0.3;
  r.shape = static_cast<Shape>(shape(rng));
  r.margins = static_cast<Margins>(margins(rng));
  r.orientation = static_cast<Orientation>(orient(rng));
  r.birads = static_cast<Birads>(birads(rng));
  r.cohort = u(rng) < 0.5 ? Cohort::kRetrospective : Cohort::kProspective;
  return r;
}

/// synth -> train -> calibrate on the built-in generator, small grids.
inline ModelBundle small_calibrated_bundle(std::size_t n = 2000, std::uint64_t seed = 11) {
  const auto data = synthesize(default_generator_config(n, seed)).data;
  TrainOptions topts;
  topts.strategy = SplitStrategy::kRandom;
  topts.seed = seed;
  topts.cs = {0.1, 1.0};
  auto trained = train_bundle(data, topts);
  CalibrateOptions copts;
  copts.seed = seed + 1;
  copts.depths = {2, 3};
  copts.min_leaves = {40, 60};
  calibrate_bundle(trained.bundle, trained.split.cal, copts);
  return trained.bundle;
}

}  // namespace lesionrisk::testing
