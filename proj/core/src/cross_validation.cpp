#include "lesionrisk/cross_validation.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "lesionrisk/error.hpp"

namespace lesionrisk {

std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("k", "fold count must be at least 2");
  if (n < k) throw ValidationError("k", "need at least as many rows as folds");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);

  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos), idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
    std::sort(folds[f].begin(), folds[f].end());
    pos += len;
  }
  return folds;
}

std::vector<std::size_t> training_rows(std::size_t n, const std::vector<std::size_t>& fold) {
  std::vector<std::size_t> out;
  out.reserve(n - fold.size());
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (j < fold.size() && fold[j] == i) {
      ++j;
      continue;
    }
    out.push_back(i);
  }
  return out;
}

}  // namespace lesionrisk
