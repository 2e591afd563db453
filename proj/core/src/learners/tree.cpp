#include "cpa/learners/tree.hpp"

#include <algorithm>
#include <numeric>

#include "cpa/error.hpp"

namespace cpa {

SortedColumns::SortedColumns(const Matrix& X) : rows_(X.rows()), orders_(X.rows() * X.cols()) {
  std::vector<std::uint32_t> idx(rows_);
  for (std::size_t f = 0; f < X.cols(); ++f) {
    std::iota(idx.begin(), idx.end(), 0u);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return X(a, f) < X(b, f); });
    std::copy(idx.begin(), idx.end(), orders_.begin() + static_cast<std::ptrdiff_t>(f * rows_));
  }
}

int RegressionTree::leaf_index(std::span<const double> x) const {
  int i = 0;
  while (true) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.feature < 0) return i;
    i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
  }
}

int RegressionTree::depth() const {
  std::vector<int> d(nodes_.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    best = std::max(best, d[i]);
    if (!nodes_[i].is_leaf()) {
      d[static_cast<std::size_t>(nodes_[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes_[i].right)] = d[i] + 1;
    }
  }
  return best;
}

void RegressionTree::scale_leaves(double factor) {
  for (auto& n : nodes_)
    if (n.is_leaf()) n.value *= factor;
}

nlohmann::json RegressionTree::to_json() const {
  std::vector<int> feature, left, right;
  std::vector<double> threshold, value;
  std::vector<std::uint32_t> leaf_begin, leaf_count;
  for (const auto& n : nodes_) {
    feature.push_back(n.feature);
    left.push_back(n.left);
    right.push_back(n.right);
    threshold.push_back(n.threshold);
    value.push_back(n.value);
    leaf_begin.push_back(n.leaf_begin);
    leaf_count.push_back(n.leaf_count);
  }
  return {{"feature", feature},       {"threshold", threshold},   {"left", left},
          {"right", right},           {"value", value},           {"leaf_begin", leaf_begin},
          {"leaf_count", leaf_count}, {"leaf_values", leaf_values_}};
}

RegressionTree RegressionTree::from_json(const nlohmann::json& j) {
  RegressionTree t;
  auto feature = j.at("feature").get<std::vector<int>>();
  auto left = j.at("left").get<std::vector<int>>();
  auto right = j.at("right").get<std::vector<int>>();
  auto threshold = j.at("threshold").get<std::vector<double>>();
  auto value = j.at("value").get<std::vector<double>>();
  auto lb = j.at("leaf_begin").get<std::vector<std::uint32_t>>();
  auto lc = j.at("leaf_count").get<std::vector<std::uint32_t>>();
  t.nodes_.resize(feature.size());
  for (std::size_t i = 0; i < feature.size(); ++i)
    t.nodes_[i] = {feature[i], threshold[i], left[i], right[i], value[i], lb[i], lc[i]};
  t.leaf_values_ = j.at("leaf_values").get<std::vector<double>>();
  return t;
}

class TreeBuilder {
 public:
  TreeBuilder(const TreeFitInput& in, const TreeParams& params, RngStream& rng)
      : in_(in), params_(params), rng_(rng), p_(in.X.cols()) {}

  RegressionTree build() {
    const std::size_t n = in_.X.rows();
    if (in_.target.size() != n) throw ConfigError("fit_tree: target length mismatch");
    // Expand rows into slots according to multiplicity.
    std::vector<std::uint32_t> first_slot(n + 1, 0);
    for (std::size_t r = 0; r < n; ++r) {
      const std::uint32_t c = in_.multiplicity.empty() ? 1u : in_.multiplicity[r];
      first_slot[r + 1] = first_slot[r] + c;
    }
    m_ = first_slot[n];
    if (m_ == 0) throw ConfigError("fit_tree: no training rows");
    slot_row_.resize(m_);
    for (std::size_t r = 0; r < n; ++r)
      for (auto s = first_slot[r]; s < first_slot[r + 1]; ++s) slot_row_[s] = static_cast<std::uint32_t>(r);
    orders_.resize(p_ * m_);
    for (std::size_t f = 0; f < p_; ++f) {
      std::uint32_t* out = orders_.data() + f * m_;
      for (auto r : in_.sorted.order(f))
        for (auto s = first_slot[r]; s < first_slot[r + 1]; ++s) *out++ = s;
    }
    goes_left_.assign(m_, 0);
    buffer_.resize(m_);
    features_.resize(p_);
    std::iota(features_.begin(), features_.end(), 0u);

    tree_.nodes_.reserve(2 * m_ / std::max<std::size_t>(1, params_.min_leaf) + 1);
    tree_.nodes_.emplace_back();
    grow(0, 0, m_, 0);
    return std::move(tree_);
  }

 private:
  double x_of(std::uint32_t slot, std::size_t f) const { return in_.X(slot_row_[slot], f); }
  double w_of(std::uint32_t slot) const { return in_.weight.empty() ? 1.0 : in_.weight[slot_row_[slot]]; }
  double g_of(std::uint32_t slot) const { return in_.target[slot_row_[slot]]; }

  void make_leaf(int node, std::size_t begin, std::size_t end, double sw, double swg) {
    auto& nd = tree_.nodes_[static_cast<std::size_t>(node)];
    nd.feature = -1;
    nd.value = sw > 0 ? swg / sw : 0.0;
    if (params_.retain_samples) {
      nd.leaf_begin = static_cast<std::uint32_t>(tree_.leaf_values_.size());
      nd.leaf_count = static_cast<std::uint32_t>(end - begin);
      const std::uint32_t* ord = orders_.data();
      for (std::size_t i = begin; i < end; ++i) tree_.leaf_values_.push_back(g_of(ord[i]));
    }
  }

  void grow(int node, std::size_t begin, std::size_t end, int depth) {
    const std::size_t count = end - begin;
    double sw = 0, swg = 0, swgg = 0;
    const std::uint32_t* ord0 = orders_.data();
    for (std::size_t i = begin; i < end; ++i) {
      const double w = w_of(ord0[i]);
      const double g = g_of(ord0[i]);
      sw += w;
      swg += w * g;
      swgg += w * g * g;
    }
    const double sse = swgg - (sw > 0 ? swg * swg / sw : 0.0);
    const bool depth_ok = params_.max_depth < 0 || depth < params_.max_depth;
    if (!depth_ok || count < 2 * params_.min_leaf || sw <= 0 || sse <= 1e-12 * swgg + 1e-300) {
      make_leaf(node, begin, end, sw, swg);
      return;
    }

    // Candidate features.
    std::size_t k = params_.max_features == 0 || params_.max_features >= p_ ? p_ : params_.max_features;
    if (k < p_) {
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng_.uniform_index(p_ - i));
        std::swap(features_[i], features_[j]);
      }
      std::sort(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(k));
    }

    const double parent = swg * swg / sw;
    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::size_t best_left = 0;
    for (std::size_t fi = 0; fi < k; ++fi) {
      const std::size_t f = features_[fi];
      const std::uint32_t* ord = orders_.data() + f * m_;
      double lw = 0, lwg = 0;
      for (std::size_t i = begin; i + 1 < end; ++i) {
        const std::uint32_t s = ord[i];
        const double w = w_of(s);
        lw += w;
        lwg += w * g_of(s);
        const std::size_t nl = i - begin + 1;
        if (nl < params_.min_leaf) continue;
        if (count - nl < params_.min_leaf) break;
        const double a = x_of(s, f);
        const double b = x_of(ord[i + 1], f);
        if (!(a < b)) continue;
        const double rw = sw - lw;
        if (lw <= 0 || rw <= 0) continue;
        const double rwg = swg - lwg;
        const double gain = lwg * lwg / lw + rwg * rwg / rw - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          double t = a + (b - a) / 2;
          if (!(t < b)) t = a;
          best_threshold = t;
          best_left = nl;
        }
      }
    }
    if (best_feature < 0 || best_gain <= 1e-12 * sse) {
      make_leaf(node, begin, end, sw, swg);
      return;
    }

    // Mark sides, then stable-partition every feature's segment.
    const std::size_t bf = static_cast<std::size_t>(best_feature);
    {
      const std::uint32_t* ord = orders_.data() + bf * m_;
      for (std::size_t i = begin; i < end; ++i) goes_left_[ord[i]] = (i - begin) < best_left ? 1 : 0;
    }
    for (std::size_t f = 0; f < p_; ++f) {
      if (f == bf) continue;
      std::uint32_t* ord = orders_.data() + f * m_;
      std::size_t l = begin, r = 0;
      for (std::size_t i = begin; i < end; ++i) {
        const std::uint32_t s = ord[i];
        if (goes_left_[s])
          ord[l++] = s;
        else
          buffer_[r++] = s;
      }
      std::copy(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(r),
                ord + static_cast<std::ptrdiff_t>(l));
    }
    // The partition above keeps slot order within each side, so every
    // feature's segment is still sorted. The grow() sums use feature 0's
    // order, which is a permutation of the same slots.

    const int left = static_cast<int>(tree_.nodes_.size());
    tree_.nodes_.emplace_back();
    const int right = static_cast<int>(tree_.nodes_.size());
    tree_.nodes_.emplace_back();
    {
      auto& nd = tree_.nodes_[static_cast<std::size_t>(node)];
      nd.feature = best_feature;
      nd.threshold = best_threshold;
      nd.left = left;
      nd.right = right;
      nd.value = swg / sw;
    }
    const std::size_t mid = begin + best_left;
    grow(left, begin, mid, depth + 1);
    grow(right, mid, end, depth + 1);
  }

  const TreeFitInput& in_;
  const TreeParams& params_;
  RngStream& rng_;
  std::size_t p_;
  std::size_t m_ = 0;
  std::vector<std::uint32_t> slot_row_;
  std::vector<std::uint32_t> orders_;
  std::vector<char> goes_left_;
  std::vector<std::uint32_t> buffer_;
  std::vector<std::uint32_t> features_;
  RegressionTree tree_;
};

RegressionTree fit_tree(const TreeFitInput& input, const TreeParams& params, RngStream& rng) {
  if (params.min_leaf < 1) throw ConfigError("fit_tree: min_leaf must be >= 1");
  if (input.sorted.rows() != input.X.rows()) throw ConfigError("fit_tree: sorted columns built for another matrix");
  TreeBuilder b(input, params, rng);
  return b.build();
}

}  // namespace cpa
