#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lesionrisk/dataset.hpp"
#include "lesionrisk/residuals.hpp"
#include "lesionrisk/risk_model.hpp"

namespace lesionrisk {

/// Tree inputs: numeric features as-is, palpable 0/1, shape/margins/orientation
/// as their ordinal codes (oval=0 < round < irregular; circumscribed=0 < ... <
/// spiculated=4; parallel=0 < not_parallel).
struct OrdinalEncoderSpec {
  std::vector<Feature> features;

  std::vector<double> encode(const LesionRecord& r) const;
};

struct TreeParams {
  int max_depth = 3;
  std::size_t min_samples_leaf = 1;
};

/// Nodes are numbered as in a full binary heap: root 0, children of i are
/// 2i+1 and 2i+2. A leaf's id is its node id.
struct TreeNode {
  std::int64_t id = 0;
  int depth = 0;
  int feature = -1;  // column of the encoded row; -1 marks a leaf
  double threshold = 0.0;
  int left = -1;  // index into RegressionTree::nodes
  int right = -1;
  double value = 0.0;  // mean training target in the node
  std::size_t count = 0;

  bool is_leaf() const noexcept { return feature < 0; }
};

class RegressionTree {
 public:
  RegressionTree() = default;
  RegressionTree(std::vector<TreeNode> nodes, TreeParams params);

  /// Descends with "go left iff value < threshold".
  const TreeNode& leaf_for(std::span<const double> row) const;
  double predict(std::span<const double> row) const { return leaf_for(row).value; }

  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  const TreeParams& params() const noexcept { return params_; }
  std::vector<std::int64_t> leaf_ids() const;  // ascending
  std::size_t leaf_count() const;
  int depth() const;

 private:
  std::vector<TreeNode> nodes_;
  TreeParams params_;
};

/// Greedy CART on squared error. `rows` is row-major, n x n_features. Splits
/// are midpoints between consecutive distinct values; a node splits only if
/// depth < max_depth, both children keep >= min_samples_leaf rows and the MSE
/// drops by more than 1e-12.
RegressionTree fit_regression_tree(std::span<const double> rows, std::size_t n_features, std::span<const double> y,
                                   const TreeParams& params);

struct PartitionTree {
  OrdinalEncoderSpec encoder;
  RegressionTree tree;

  std::int64_t assign_leaf(const LesionRecord& r) const;
  double predict(const LesionRecord& r) const;
  std::size_t leaf_count() const { return tree.leaf_count(); }

  /// Conditions on the root-to-leaf path, e.g. "margins ≥ microlobulated".
  std::vector<std::string> rule_path(const LesionRecord& r) const;
  /// Same conditions for a leaf given by id; throws Error for unknown ids.
  std::vector<std::string> leaf_rule(std::int64_t leaf_id) const;
  /// Indented rule list of the whole tree.
  std::string format_rules() const;
};

/// Single-leaf tree when |data| < 2 * min_samples_leaf; throws ValidationError
/// on empty data.
PartitionTree fit_tree(const ResidualDataset& data, const TreeParams& params,
                       std::span<const Feature> features);
PartitionTree fit_tree(const ResidualDataset& data, const TreeParams& params);

struct TreeGridCell {
  int max_depth = 0;
  std::size_t min_samples_leaf = 0;
  std::vector<double> fold_mse;
  double mean_mse = 0.0;
};

struct TreeGridReport {
  std::vector<TreeGridCell> cells;
  int chosen_depth = 0;
  std::size_t chosen_min_samples_leaf = 0;
  std::size_t folds = 0;
  std::uint64_t seed = 0;
};

struct TreeGridResult {
  PartitionTree tree;
  TreeGridReport report;
};

std::vector<int> default_depth_grid();                 // {3, 4, 5, 6}
std::vector<std::size_t> default_min_leaf_grid();      // {70, 80, 90, 100}

/// k-fold CV over depth x min-leaf; lowest mean held-out MSE wins, ties to the
/// smaller depth, then the larger min leaf. Refits the winner on all data.
TreeGridResult tree_grid_search(const ResidualDataset& data, std::span<const int> depths,
                                std::span<const std::size_t> min_leaves, std::size_t k, std::uint64_t seed,
                                std::span<const Feature> features);

struct LeafProfile {
  std::int64_t leaf_id = 0;
  std::size_t count = 0;
  std::array<std::size_t, kBiradsCount> birads{};
  double malignancy_rate = 0.0;
  double accuracy = 0.0;  // risk model at threshold 0.5
  double mean_residual = 0.0;
};

/// One profile per leaf that receives at least one record, ascending leaf id.
std::vector<LeafProfile> leaf_profiles(const PartitionTree& t, const Dataset& ds, const RiskModel& m);

nlohmann::json to_json(const PartitionTree& t);
PartitionTree partition_tree_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TreeGridReport& r);

}  // namespace lesionrisk
