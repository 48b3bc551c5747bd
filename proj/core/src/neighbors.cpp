#include "epistemic/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <string>

namespace epistemic {

namespace {

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
}

// Slack for the triangle-inequality lower bound so that rounding in the
// centroid distance or radius never prunes a point at the boundary.
double prune_slack(double d_centroid, double radius, double bound) {
  return 1e-12 * (d_centroid + radius + (std::isfinite(bound) ? bound : 0.0)) + 1e-300;
}

void require_dims(std::size_t expected, std::size_t got) {
  if (expected != got) {
    throw std::invalid_argument("query of dimension " + std::to_string(got) +
                                " against points of dimension " + std::to_string(expected));
  }
}

}  // namespace

LayerIndex::LayerIndex(Matrix points, std::vector<std::size_t> labels, Metric metric,
                       std::size_t leaf_size)
    : points_(std::move(points)),
      labels_(std::move(labels)),
      metric_(std::move(metric)),
      leaf_size_(leaf_size) {
  if (points_.rows() == 0) throw std::invalid_argument("LayerIndex: no points to index");
  if (labels_.size() != points_.rows()) {
    throw std::invalid_argument("LayerIndex: " + std::to_string(points_.rows()) + " points but " +
                                std::to_string(labels_.size()) + " labels");
  }
  if (leaf_size_ == 0) throw std::invalid_argument("LayerIndex: leaf_size must be at least 1");
  if (metric_.is_weighted() && metric_.weights().dim() != points_.cols()) {
    throw std::invalid_argument("LayerIndex: weighted metric of dimension " +
                                std::to_string(metric_.weights().dim()) + " for points of dimension " +
                                std::to_string(points_.cols()));
  }
  order_.resize(points_.rows());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * (points_.rows() / leaf_size_ + 1));
  build(0, points_.rows());
}

int LayerIndex::build(std::size_t begin, std::size_t end) {
  const std::size_t dim = points_.cols();
  const std::size_t count = end - begin;

  Node node;
  node.begin = begin;
  node.end = end;
  node.centroid.assign(dim, 0.0);
  for (std::size_t i = begin; i < end; ++i) {
    auto p = points_.row(order_[i]);
    for (std::size_t d = 0; d < dim; ++d) node.centroid[d] += p[d];
  }
  for (auto& c : node.centroid) c /= static_cast<double>(count);
  for (std::size_t i = begin; i < end; ++i) {
    node.radius = std::max(node.radius, metric_(node.centroid, points_.row(order_[i])));
  }

  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(node));
  if (count <= leaf_size_) return id;

  // Split on the coordinate of greatest spread at the median, ties by index.
  std::size_t split_dim = 0;
  double best_spread = -1.0;
  for (std::size_t d = 0; d < dim; ++d) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      const double v = points_(order_[i], d);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo > best_spread) {
      best_spread = hi - lo;
      split_dim = d;
    }
  }
  const std::size_t mid = begin + count / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) {
                     const double va = points_(a, split_dim);
                     const double vb = points_(b, split_dim);
                     return va < vb || (va == vb && a < b);
                   });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

void LayerIndex::require_query(std::span<const double> q) const { require_dims(dim(), q.size()); }

std::vector<Neighbor> LayerIndex::knn(std::span<const double> q, std::size_t k, QueryStats* stats) const {
  require_query(q);
  if (k == 0) throw std::invalid_argument("knn: k must be at least 1");
  k = std::min(k, size());

  // Max-heap under (distance, index): top is the current worst kept neighbour.
  std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(&closer)> heap(&closer);
  auto worst = [&] {
    return heap.size() < k ? std::numeric_limits<double>::infinity() : heap.top().distance;
  };

  struct Pending {
    int node;
    double d_centroid;
  };
  std::vector<Pending> stack{{0, metric_(nodes_[0].centroid, q)}};
  while (!stack.empty()) {
    const Pending cur = stack.back();
    stack.pop_back();
    const Node& node = nodes_[static_cast<std::size_t>(cur.node)];
    const double bound = worst();
    if (cur.d_centroid - node.radius > bound + prune_slack(cur.d_centroid, node.radius, bound)) continue;
    if (stats != nullptr) ++stats->nodes_visited;

    if (node.is_leaf()) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        Neighbor cand{idx, metric_(q, points_.row(idx)), labels_[idx]};
        if (heap.size() < k) {
          heap.push(cand);
        } else if (closer(cand, heap.top())) {
          heap.pop();
          heap.push(cand);
        }
      }
      continue;
    }
    const Node& l = nodes_[static_cast<std::size_t>(node.left)];
    const Node& r = nodes_[static_cast<std::size_t>(node.right)];
    const double dl = metric_(l.centroid, q);
    const double dr = metric_(r.centroid, q);
    // Push the farther child first so the nearer one is explored first.
    if (dl - l.radius <= dr - r.radius) {
      stack.push_back({node.right, dr});
      stack.push_back({node.left, dl});
    } else {
      stack.push_back({node.left, dl});
      stack.push_back({node.right, dr});
    }
  }

  std::vector<Neighbor> out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<Neighbor> LayerIndex::range(std::span<const double> q, double eps, QueryStats* stats) const {
  require_query(q);
  if (!(eps >= 0.0)) throw std::invalid_argument("range: eps must be non-negative");
  std::vector<Neighbor> out;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[static_cast<std::size_t>(stack.back())];
    stack.pop_back();
    const double dc = metric_(node.centroid, q);
    if (dc - node.radius > eps + prune_slack(dc, node.radius, eps)) continue;
    if (stats != nullptr) ++stats->nodes_visited;
    if (node.is_leaf()) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        const double d = metric_(q, points_.row(idx));
        if (d <= eps) out.push_back({idx, d, labels_[idx]});
      }
    } else {
      stack.push_back(node.right);
      stack.push_back(node.left);
    }
  }
  std::sort(out.begin(), out.end(), closer);
  return out;
}

std::vector<Neighbor> brute_force_knn(const Matrix& points, std::span<const std::size_t> labels,
                                      const Metric& metric, std::span<const double> q, std::size_t k) {
  require_dims(points.cols(), q.size());
  if (k == 0) throw std::invalid_argument("knn: k must be at least 1");
  std::vector<Neighbor> all;
  all.reserve(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) all.push_back({i, metric(q, points.row(i)), labels[i]});
  std::sort(all.begin(), all.end(), closer);
  all.resize(std::min(k, all.size()));
  return all;
}

std::vector<Neighbor> brute_force_range(const Matrix& points, std::span<const std::size_t> labels,
                                        const Metric& metric, std::span<const double> q, double eps) {
  require_dims(points.cols(), q.size());
  if (!(eps >= 0.0)) throw std::invalid_argument("range: eps must be non-negative");
  std::vector<Neighbor> out;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const double d = metric(q, points.row(i));
    if (d <= eps) out.push_back({i, d, labels[i]});
  }
  std::sort(out.begin(), out.end(), closer);
  return out;
}

}  // namespace epistemic
