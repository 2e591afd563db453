#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpa/matrix.hpp"
#include "cpa/rng.hpp"

namespace cpa {

struct TreeParams {
  /// Negative means unlimited.
  int max_depth = -1;
  std::size_t min_leaf = 1;
  /// Candidate features sampled per node; 0 or >= p means all features.
  std::size_t max_features = 0;
  /// Keep the (multiset of) targets reaching each leaf.
  bool retain_samples = false;
};

/// Row indices of a training matrix sorted by each column, computed once and
/// shared by every tree grown on the same rows.
class SortedColumns {
 public:
  explicit SortedColumns(const Matrix& X);
  std::span<const std::uint32_t> order(std::size_t feature) const {
    return {orders_.data() + feature * rows_, rows_};
  }
  std::size_t rows() const { return rows_; }

 private:
  std::size_t rows_ = 0;
  std::vector<std::uint32_t> orders_;
};

/// Binary regression tree with axis-aligned splits `x[f] <= threshold`.
class RegressionTree {
 public:
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
    std::uint32_t leaf_begin = 0;
    std::uint32_t leaf_count = 0;
    bool is_leaf() const { return feature < 0; }
  };

  double predict(std::span<const double> x) const { return nodes_[static_cast<std::size_t>(leaf_index(x))].value; }
  int leaf_index(std::span<const double> x) const;
  const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  std::size_t node_count() const { return nodes_.size(); }
  int depth() const;
  /// Targets retained in a leaf (empty unless grown with retain_samples).
  std::span<const double> leaf_samples(int leaf) const {
    const Node& n = node(leaf);
    return {leaf_values_.data() + n.leaf_begin, n.leaf_count};
  }
  void set_leaf_value(int leaf, double v) { nodes_[static_cast<std::size_t>(leaf)].value = v; }
  void scale_leaves(double factor);

  nlohmann::json to_json() const;
  static RegressionTree from_json(const nlohmann::json& j);

 private:
  friend class TreeBuilder;
  std::vector<Node> nodes_;
  std::vector<double> leaf_values_;
};

struct TreeFitInput {
  const Matrix& X;
  const SortedColumns& sorted;
  std::span<const double> target;
  /// Per-row weights; empty means 1.
  std::span<const double> weight = {};
  /// Per-row bootstrap multiplicities; empty means 1.
  std::span<const std::uint32_t> multiplicity = {};
};

/// Greedy CART growth minimizing weighted squared error. Thresholds sit at
/// midpoints between consecutive distinct values; ties in gain keep the
/// lowest (feature, threshold) pair. Leaf values are weighted target means.
RegressionTree fit_tree(const TreeFitInput& input, const TreeParams& params, RngStream& rng);

}  // namespace cpa
