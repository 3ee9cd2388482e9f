#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace lesionrisk {

/// K folds of held-out row indices: a seeded shuffle of 0..n-1 cut into
/// contiguous blocks, the first n % k blocks one longer. Indices inside each
/// fold are sorted.
std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t k, std::uint64_t seed);

/// Complement of `fold` in 0..n-1, ascending.
std::vector<std::size_t> training_rows(std::size_t n, const std::vector<std::size_t>& fold);

}  // namespace lesionrisk
