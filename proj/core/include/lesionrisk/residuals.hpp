#pragma once

#include <cstddef>
#include <vector>

#include "lesionrisk/dataset.hpp"

namespace lesionrisk {

/// 1 - p(label | x) given p = P(malignant | x). This single expression defines
/// both the calibration residuals and prediction-set membership, so the two
/// agree bit for bit.
double nonconformity(double p_malignant, Label label);

struct ResidualSample {
  LesionRecord record;
  double residual = 0.0;  // in [0, 1]
};

enum class ResidualRole { kFull, kTreeHalf, kQuantileHalf };

struct ResidualDataset {
  std::vector<ResidualSample> samples;
  ResidualRole role = ResidualRole::kFull;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
};

}  // namespace lesionrisk
