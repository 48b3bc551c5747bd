#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "epistemic/linalg.hpp"

namespace epistemic {

/// Distance used by a LayerIndex: Euclidean, or a quadratic form sqrt(d^T D d).
class Metric {
 public:
  Metric() = default;
  static Metric euclidean() { return Metric(); }
  static Metric weighted(WeightedMetric w) { return Metric(std::move(w)); }

  bool is_weighted() const noexcept { return weighted_.has_value(); }
  const WeightedMetric& weights() const { return weighted_.value(); }

  double operator()(std::span<const double> a, std::span<const double> b) const {
    return weighted_ ? weighted_distance(a, b, *weighted_) : euclidean_distance(a, b);
  }

 private:
  explicit Metric(WeightedMetric w) : weighted_(std::move(w)) {}
  std::optional<WeightedMetric> weighted_;
};

struct Neighbor {
  std::size_t index;  ///< row in the indexed point set
  double distance;
  std::size_t label;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Optional instrumentation for a single query.
struct QueryStats {
  std::size_t nodes_visited = 0;
};

/// Immutable ball tree over labelled points. Queries are exact under the
/// index metric; results are ordered by (distance, index).
class LayerIndex {
 public:
  struct Node {
    std::vector<double> centroid;
    double radius = 0.0;
    std::size_t begin = 0;  ///< range into order()
    std::size_t end = 0;
    int left = -1;
    int right = -1;
    bool is_leaf() const noexcept { return left < 0; }
  };

  static constexpr std::size_t kDefaultLeafSize = 16;

  LayerIndex(Matrix points, std::vector<std::size_t> labels, Metric metric = Metric::euclidean(),
             std::size_t leaf_size = kDefaultLeafSize);

  /// The min(k, size()) nearest points; ties at equal distance go to the lower index.
  std::vector<Neighbor> knn(std::span<const double> q, std::size_t k, QueryStats* stats = nullptr) const;

  /// Every point at distance <= eps (closed ball).
  std::vector<Neighbor> range(std::span<const double> q, double eps, QueryStats* stats = nullptr) const;

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return points_.cols(); }
  std::size_t leaf_size() const noexcept { return leaf_size_; }
  const Matrix& points() const noexcept { return points_; }
  const std::vector<std::size_t>& labels() const noexcept { return labels_; }
  const Metric& metric() const noexcept { return metric_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<std::size_t>& order() const noexcept { return order_; }

 private:
  int build(std::size_t begin, std::size_t end);
  void require_query(std::span<const double> q) const;

  Matrix points_;
  std::vector<std::size_t> labels_;
  Metric metric_;
  std::size_t leaf_size_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

/// Linear-scan reference with the same ordering contract as LayerIndex::knn.
std::vector<Neighbor> brute_force_knn(const Matrix& points, std::span<const std::size_t> labels,
                                      const Metric& metric, std::span<const double> q, std::size_t k);

/// Linear-scan reference with the same ordering contract as LayerIndex::range.
std::vector<Neighbor> brute_force_range(const Matrix& points, std::span<const std::size_t> labels,
                                        const Metric& metric, std::span<const double> q, double eps);

}  // namespace epistemic
