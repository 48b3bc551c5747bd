#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include "epistemic/neighbors.hpp"
#include "epistemic/network.hpp"

namespace epistemic {

using ClassSet = std::set<std::size_t>;

/// EpsBall: closed ball of radius eps. Knn: k nearest points.
/// H1: the eps-ball, or the k nearest points when the ball is empty.
/// H2: empty when the eps-ball is empty, otherwise the ball united with the k nearest.
enum class NeighborhoodMode { eps_ball, knn, h1, h2 };

std::string_view to_string(NeighborhoodMode mode);
NeighborhoodMode parse_mode(std::string_view name);

struct NeighborhoodSpec {
  LayerId layer = 0;
  NeighborhoodMode mode = NeighborhoodMode::eps_ball;
  std::optional<double> eps;
  std::optional<std::size_t> k;

  static NeighborhoodSpec ball(LayerId layer, double eps) { return {layer, NeighborhoodMode::eps_ball, eps, {}}; }
  static NeighborhoodSpec nearest(LayerId layer, std::size_t k) { return {layer, NeighborhoodMode::knn, {}, k}; }
  static NeighborhoodSpec hybrid(LayerId layer, NeighborhoodMode mode, double eps, std::size_t k) {
    return {layer, mode, eps, k};
  }

  /// Throws std::invalid_argument when the parameters required by `mode` are missing or invalid.
  void validate() const;

  friend bool operator==(const NeighborhoodSpec&, const NeighborhoodSpec&) = default;
};

struct SupportSet {
  LayerId layer = 0;
  ClassSet classes;
  std::vector<std::size_t> neighbor_ids;

  std::size_t neighbor_count() const noexcept { return neighbor_ids.size(); }
  bool empty() const noexcept { return classes.empty(); }
};

std::vector<Neighbor> neighborhood(const LayerIndex& index, std::span<const double> q,
                                   const NeighborhoodSpec& spec);

/// Labels found in the neighbourhood of `activation`, as a set.
SupportSet support(const LayerIndex& index, std::span<const double> activation,
                   const NeighborhoodSpec& spec);

}  // namespace epistemic
