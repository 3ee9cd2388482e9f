#include "lesionrisk/subgroup_tree.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "lesionrisk/cross_validation.hpp"

namespace lesionrisk {
namespace {

constexpr double kMinGain = 1e-12;

class TreeBuilder {
 public:
  TreeBuilder(std::span<const double> rows, std::size_t n_features, std::span<const double> y, TreeParams params)
      : rows_(rows), nf_(n_features), y_(y), params_(params), goes_left_(y.size(), 0) {}

  std::vector<TreeNode> build() {
    const std::size_t n = y_.size();
    std::vector<std::size_t> members(n);
    std::iota(members.begin(), members.end(), 0);
    std::vector<std::vector<std::size_t>> sorted(nf_, members);
    for (std::size_t f = 0; f < nf_; ++f) {
      std::stable_sort(sorted[f].begin(), sorted[f].end(),
                       [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
    }
    grow(members, std::move(sorted), 0, 0);
    return std::move(nodes_);
  }

 private:
  double x(std::size_t row, std::size_t f) const { return rows_[row * nf_ + f]; }

  // `members` in ascending row order; `sorted[f]` holds the same rows ordered
  // by feature f.
  int grow(const std::vector<std::size_t>& members, std::vector<std::vector<std::size_t>> sorted, std::int64_t id,
           int depth) {
    const std::size_t n = members.size();
    double sum = 0.0;
    for (auto i : members) sum += y_[i];

    const int index = static_cast<int>(nodes_.size());
    TreeNode node;
    node.id = id;
    node.depth = depth;
    node.count = n;
    node.value = sum / static_cast<double>(n);
    nodes_.push_back(node);

    const std::size_t min_leaf = std::max<std::size_t>(params_.min_samples_leaf, 1);
    if (depth >= params_.max_depth || n < 2 * min_leaf || nf_ == 0) return index;

    // Maximizing sum_L^2/n_L + sum_R^2/n_R minimizes the children's SSE.
    const double parent_score = sum * sum / static_cast<double>(n);
    double best_score = -std::numeric_limits<double>::infinity();
    std::size_t best_feature = 0;
    double best_threshold = 0.0;
    for (std::size_t f = 0; f < nf_; ++f) {
      const auto& order = sorted[f];
      double left_sum = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_sum += y_[order[i]];
        const std::size_t n_left = i + 1;
        const std::size_t n_right = n - n_left;
        if (n_right < min_leaf) break;
        if (n_left < min_leaf) continue;
        const double lo = x(order[i], f);
        const double hi = x(order[i + 1], f);
        if (!(lo < hi)) continue;
        const double right_sum = sum - left_sum;
        const double score = left_sum * left_sum / static_cast<double>(n_left) +
                             right_sum * right_sum / static_cast<double>(n_right);
        if (score > best_score) {
          best_score = score;
          best_feature = f;
          double mid = lo + (hi - lo) / 2.0;
          if (mid <= lo) mid = hi;
          best_threshold = mid;
        }
      }
    }
    if (!((best_score - parent_score) / static_cast<double>(n) > kMinGain)) return index;

    std::vector<std::size_t> left_members, right_members;
    for (auto i : members) {
      const bool left = x(i, best_feature) < best_threshold;
      goes_left_[i] = left ? 1 : 0;
      (left ? left_members : right_members).push_back(i);
    }
    std::vector<std::vector<std::size_t>> left_sorted(nf_), right_sorted(nf_);
    for (std::size_t f = 0; f < nf_; ++f) {
      left_sorted[f].reserve(left_members.size());
      right_sorted[f].reserve(right_members.size());
      for (auto i : sorted[f]) (goes_left_[i] ? left_sorted[f] : right_sorted[f]).push_back(i);
    }
    sorted.clear();

    const int left = grow(left_members, std::move(left_sorted), 2 * id + 1, depth + 1);
    const int right = grow(right_members, std::move(right_sorted), 2 * id + 2, depth + 1);
    auto& self = nodes_[static_cast<std::size_t>(index)];
    self.feature = static_cast<int>(best_feature);
    self.threshold = best_threshold;
    self.left = left;
    self.right = right;
    return index;
  }

  std::span<const double> rows_;
  std::size_t nf_;
  std::span<const double> y_;
  TreeParams params_;
  std::vector<char> goes_left_;
  std::vector<TreeNode> nodes_;
};

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string category_name(Feature f, int code) {
  switch (f) {
    case Feature::kShape: return std::string(to_string(static_cast<Shape>(code)));
    case Feature::kMargins: return std::string(to_string(static_cast<Margins>(code)));
    case Feature::kOrientation: return std::string(to_string(static_cast<Orientation>(code)));
    default: return std::to_string(code);
  }
}

std::string condition_text(Feature f, double threshold, bool left) {
  const std::string name(to_string(f));
  if (f == Feature::kPalpable) return name + (left ? " = no" : " = yes");
  if (is_numeric(f)) return name + (left ? " < " : " ≥ ") + short_number(threshold);
  const int first_right = static_cast<int>(std::ceil(threshold));
  return left ? name + " ≤ " + category_name(f, first_right - 1) : name + " ≥ " + category_name(f, first_right);
}

std::vector<double> encode_rows(const OrdinalEncoderSpec& enc, const ResidualDataset& data, std::vector<double>& y) {
  std::vector<double> rows;
  rows.reserve(data.size() * enc.features.size());
  y.clear();
  y.reserve(data.size());
  for (const auto& s : data.samples) {
    const auto row = enc.encode(s.record);
    rows.insert(rows.end(), row.begin(), row.end());
    y.push_back(s.residual);
  }
  return rows;
}

void gather_rows(std::span<const double> rows, std::size_t nf, std::span<const double> y,
                 const std::vector<std::size_t>& idx, std::vector<double>& out_rows, std::vector<double>& out_y) {
  out_rows.clear();
  out_y.clear();
  for (auto i : idx) {
    out_rows.insert(out_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(i * nf),
                    rows.begin() + static_cast<std::ptrdiff_t>((i + 1) * nf));
    out_y.push_back(y[i]);
  }
}

}  // namespace

std::vector<double> OrdinalEncoderSpec::encode(const LesionRecord& r) const {
  validate_record(r);
  std::vector<double> out;
  out.reserve(features.size());
  for (Feature f : features) out.push_back(feature_value(r, f));
  return out;
}

RegressionTree::RegressionTree(std::vector<TreeNode> nodes, TreeParams params)
    : nodes_(std::move(nodes)), params_(params) {}

const TreeNode& RegressionTree::leaf_for(std::span<const double> row) const {
  const TreeNode* node = &nodes_.at(0);
  while (!node->is_leaf()) {
    const double v = row[static_cast<std::size_t>(node->feature)];
    node = &nodes_[static_cast<std::size_t>(v < node->threshold ? node->left : node->right)];
  }
  return *node;
}

std::vector<std::int64_t> RegressionTree::leaf_ids() const {
  std::vector<std::int64_t> ids;
  for (const auto& n : nodes_) {
    if (n.is_leaf()) ids.push_back(n.id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

int RegressionTree::depth() const {
  int d = 0;
  for (const auto& n : nodes_) d = std::max(d, n.depth);
  return d;
}

RegressionTree fit_regression_tree(std::span<const double> rows, std::size_t n_features, std::span<const double> y,
                                   const TreeParams& params) {
  if (y.empty()) throw ValidationError("data", "cannot fit a tree on empty data");
  if (rows.size() != y.size() * n_features) throw ValidationError("rows", "row matrix does not match target length");
  if (params.max_depth < 0) throw ValidationError("max_depth", "max_depth must be non-negative");
  return RegressionTree(TreeBuilder(rows, n_features, y, params).build(), params);
}

std::int64_t PartitionTree::assign_leaf(const LesionRecord& r) const { return tree.leaf_for(encoder.encode(r)).id; }

double PartitionTree::predict(const LesionRecord& r) const { return tree.predict(encoder.encode(r)); }

std::vector<std::string> PartitionTree::rule_path(const LesionRecord& r) const {
  const auto row = encoder.encode(r);
  std::vector<std::string> path;
  const auto& nodes = tree.nodes();
  const TreeNode* node = &nodes.at(0);
  while (!node->is_leaf()) {
    const auto f = encoder.features[static_cast<std::size_t>(node->feature)];
    const bool left = row[static_cast<std::size_t>(node->feature)] < node->threshold;
    path.push_back(condition_text(f, node->threshold, left));
    node = &nodes[static_cast<std::size_t>(left ? node->left : node->right)];
  }
  return path;
}

std::vector<std::string> PartitionTree::leaf_rule(std::int64_t leaf_id) const {
  // Heap numbering: the path from the root is read off the id's ancestry.
  std::vector<bool> went_left;
  for (std::int64_t id = leaf_id; id > 0; id = (id - 1) / 2) went_left.push_back(id % 2 == 1);
  std::reverse(went_left.begin(), went_left.end());

  const auto& nodes = tree.nodes();
  const TreeNode* node = &nodes.at(0);
  std::vector<std::string> path;
  for (bool left : went_left) {
    if (node->is_leaf()) break;
    const auto f = encoder.features[static_cast<std::size_t>(node->feature)];
    path.push_back(condition_text(f, node->threshold, left));
    node = &nodes[static_cast<std::size_t>(left ? node->left : node->right)];
  }
  if (node->id != leaf_id || !node->is_leaf()) throw Error("tree has no leaf " + std::to_string(leaf_id));
  return path;
}

std::string PartitionTree::format_rules() const {
  std::ostringstream out;
  const auto& nodes = tree.nodes();
  auto visit = [&](auto&& self, int index, int indent, const std::string& label) -> void {
    const auto& n = nodes[static_cast<std::size_t>(index)];
    out << std::string(static_cast<std::size_t>(indent) * 2, ' ') << label;
    if (n.is_leaf()) {
      out << "leaf " << n.id << " (n=" << n.count << ", mean residual=" << short_number(n.value) << ")\n";
      return;
    }
    out << "node " << n.id << " (n=" << n.count << ")\n";
    const auto f = encoder.features[static_cast<std::size_t>(n.feature)];
    self(self, n.left, indent + 1, "if " + condition_text(f, n.threshold, true) + ": ");
    self(self, n.right, indent + 1, "if " + condition_text(f, n.threshold, false) + ": ");
  };
  if (!nodes.empty()) visit(visit, 0, 0, "");
  return out.str();
}

PartitionTree fit_tree(const ResidualDataset& data, const TreeParams& params, std::span<const Feature> features) {
  if (data.empty()) throw ValidationError("data", "cannot fit a tree on an empty residual dataset");
  PartitionTree t;
  t.encoder.features.assign(features.begin(), features.end());
  std::vector<double> y;
  const auto rows = encode_rows(t.encoder, data, y);
  t.tree = fit_regression_tree(rows, features.size(), y, params);
  return t;
}

PartitionTree fit_tree(const ResidualDataset& data, const TreeParams& params) {
  const auto features = default_features();
  return fit_tree(data, params, features);
}

std::vector<int> default_depth_grid() { return {3, 4, 5, 6}; }
std::vector<std::size_t> default_min_leaf_grid() { return {70, 80, 90, 100}; }

TreeGridResult tree_grid_search(const ResidualDataset& data, std::span<const int> depths,
                                std::span<const std::size_t> min_leaves, std::size_t k, std::uint64_t seed,
                                std::span<const Feature> features) {
  if (depths.empty() || min_leaves.empty()) throw ValidationError("grid", "tree grid is empty");
  if (data.empty()) throw ValidationError("data", "cannot fit a tree on an empty residual dataset");
  const OrdinalEncoderSpec enc{std::vector<Feature>(features.begin(), features.end())};
  const std::size_t nf = features.size();
  std::vector<double> y;
  const auto rows = encode_rows(enc, data, y);
  const auto folds = make_folds(data.size(), k, seed);

  struct FoldData {
    std::vector<double> fit_rows, fit_y, held_rows, held_y;
  };
  std::vector<FoldData> fold_data(folds.size());
  for (std::size_t f = 0; f < folds.size(); ++f) {
    gather_rows(rows, nf, y, training_rows(data.size(), folds[f]), fold_data[f].fit_rows, fold_data[f].fit_y);
    gather_rows(rows, nf, y, folds[f], fold_data[f].held_rows, fold_data[f].held_y);
  }

  TreeGridReport report;
  report.folds = k;
  report.seed = seed;
  std::optional<std::size_t> best;
  for (int depth : depths) {
    for (std::size_t min_leaf : min_leaves) {
      TreeGridCell cell;
      cell.max_depth = depth;
      cell.min_samples_leaf = min_leaf;
      const TreeParams params{depth, min_leaf};
      for (const auto& fd : fold_data) {
        const auto tree = fit_regression_tree(fd.fit_rows, nf, fd.fit_y, params);
        double sse = 0.0;
        for (std::size_t i = 0; i < fd.held_y.size(); ++i) {
          const double e = tree.predict(std::span<const double>(fd.held_rows).subspan(i * nf, nf)) - fd.held_y[i];
          sse += e * e;
        }
        cell.fold_mse.push_back(sse / static_cast<double>(fd.held_y.size()));
      }
      cell.mean_mse = std::accumulate(cell.fold_mse.begin(), cell.fold_mse.end(), 0.0) /
                      static_cast<double>(cell.fold_mse.size());
      bool better = !best;
      if (best) {
        const auto& b = report.cells[*best];
        better = cell.mean_mse < b.mean_mse ||
                 (cell.mean_mse == b.mean_mse &&
                  (depth < b.max_depth || (depth == b.max_depth && min_leaf > b.min_samples_leaf)));
      }
      if (better) best = report.cells.size();
      report.cells.push_back(std::move(cell));
    }
  }
  report.chosen_depth = report.cells[*best].max_depth;
  report.chosen_min_samples_leaf = report.cells[*best].min_samples_leaf;

  PartitionTree t;
  t.encoder = enc;
  t.tree = fit_regression_tree(rows, nf, y, TreeParams{report.chosen_depth, report.chosen_min_samples_leaf});
  return {std::move(t), std::move(report)};
}

std::vector<LeafProfile> leaf_profiles(const PartitionTree& t, const Dataset& ds, const RiskModel& m) {
  if (ds.empty()) throw ValidationError("dataset", "cannot profile leaves of an empty dataset");
  struct Acc {
    LeafProfile p;
    std::size_t malignant = 0, correct = 0;
    double residual_sum = 0.0;
  };
  std::map<std::int64_t, Acc> acc;
  for (const auto& r : ds.records) {
    if (!r.label) throw ValidationError("label", "record '" + r.id + "' has no label");
    auto& a = acc[t.assign_leaf(r)];
    a.p.count++;
    a.p.birads[static_cast<std::size_t>(r.birads)]++;
    const double p = m.predict_proba(r);
    const bool malignant = *r.label == Label::kMalignant;
    if (malignant) a.malignant++;
    if ((p >= 0.5) == malignant) a.correct++;
    a.residual_sum += nonconformity(p, *r.label);
  }
  std::vector<LeafProfile> out;
  for (auto& [id, a] : acc) {
    const double n = static_cast<double>(a.p.count);
    a.p.leaf_id = id;
    a.p.malignancy_rate = static_cast<double>(a.malignant) / n;
    a.p.accuracy = static_cast<double>(a.correct) / n;
    a.p.mean_residual = a.residual_sum / n;
    out.push_back(a.p);
  }
  return out;
}

nlohmann::json to_json(const PartitionTree& t) {
  nlohmann::json j;
  auto features = nlohmann::json::array();
  for (Feature f : t.encoder.features) features.push_back(to_string(f));
  j["features"] = features;
  j["max_depth"] = t.tree.params().max_depth;
  j["min_samples_leaf"] = t.tree.params().min_samples_leaf;
  auto nodes = nlohmann::json::array();
  const auto& ns = t.tree.nodes();
  for (const auto& n : ns) {
    nlohmann::json jn{{"id", n.id}, {"depth", n.depth}, {"count", n.count}, {"value", n.value}};
    if (n.is_leaf()) {
      jn["leaf"] = true;
    } else {
      jn["leaf"] = false;
      jn["feature"] = to_string(t.encoder.features[static_cast<std::size_t>(n.feature)]);
      jn["threshold"] = n.threshold;
      jn["left"] = ns[static_cast<std::size_t>(n.left)].id;
      jn["right"] = ns[static_cast<std::size_t>(n.right)].id;
    }
    nodes.push_back(jn);
  }
  j["nodes"] = nodes;
  return j;
}

PartitionTree partition_tree_from_json(const nlohmann::json& j) {
  PartitionTree t;
  for (const auto& jf : j.at("features")) {
    const auto f = parse_feature(jf.get<std::string>());
    if (!f) throw ConsistencyError("tree references unknown feature '" + jf.get<std::string>() + "'");
    t.encoder.features.push_back(*f);
  }
  TreeParams params{j.at("max_depth").get<int>(), j.at("min_samples_leaf").get<std::size_t>()};
  std::vector<TreeNode> nodes;
  std::unordered_map<std::int64_t, int> index_of;
  for (const auto& jn : j.at("nodes")) {
    TreeNode n;
    n.id = jn.at("id").get<std::int64_t>();
    n.depth = jn.at("depth").get<int>();
    n.count = jn.at("count").get<std::size_t>();
    n.value = jn.at("value").get<double>();
    if (!index_of.emplace(n.id, static_cast<int>(nodes.size())).second) {
      throw ConsistencyError("duplicate tree node id " + std::to_string(n.id));
    }
    nodes.push_back(n);
  }
  if (nodes.empty() || nodes.front().id != 0) throw ConsistencyError("tree must start with root node 0");
  std::size_t i = 0;
  for (const auto& jn : j.at("nodes")) {
    auto& n = nodes[i++];
    if (jn.at("leaf").get<bool>()) continue;
    const auto fname = jn.at("feature").get<std::string>();
    const auto f = parse_feature(fname);
    auto it = std::find(t.encoder.features.begin(), t.encoder.features.end(), f.value_or(Feature::kAge));
    if (!f || it == t.encoder.features.end()) throw ConsistencyError("split on feature '" + fname + "' not in tree inputs");
    n.feature = static_cast<int>(it - t.encoder.features.begin());
    n.threshold = jn.at("threshold").get<double>();
    const auto left = jn.at("left").get<std::int64_t>();
    const auto right = jn.at("right").get<std::int64_t>();
    if (left != 2 * n.id + 1 || right != 2 * n.id + 2 || !index_of.contains(left) || !index_of.contains(right)) {
      throw ConsistencyError("tree node " + std::to_string(n.id) + " has inconsistent children");
    }
    n.left = index_of.at(left);
    n.right = index_of.at(right);
  }
  t.tree = RegressionTree(std::move(nodes), params);
  return t;
}

nlohmann::json to_json(const TreeGridReport& r) {
  auto cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"max_depth", c.max_depth},
                     {"min_samples_leaf", c.min_samples_leaf},
                     {"fold_mse", c.fold_mse},
                     {"mean_mse", c.mean_mse}});
  }
  return {{"cells", cells},
          {"chosen_max_depth", r.chosen_depth},
          {"chosen_min_samples_leaf", r.chosen_min_samples_leaf},
          {"folds", r.folds},
          {"seed", r.seed}};
}

}  // namespace lesionrisk
