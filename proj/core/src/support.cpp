#include "epistemic/support.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace epistemic {

std::string_view to_string(NeighborhoodMode mode) {
  switch (mode) {
    case NeighborhoodMode::eps_ball: return "eps";
    case NeighborhoodMode::knn: return "knn";
    case NeighborhoodMode::h1: return "h1";
    case NeighborhoodMode::h2: return "h2";
  }
  return "?";
}

NeighborhoodMode parse_mode(std::string_view name) {
  if (name == "eps" || name == "eps_ball") return NeighborhoodMode::eps_ball;
  if (name == "knn") return NeighborhoodMode::knn;
  if (name == "h1") return NeighborhoodMode::h1;
  if (name == "h2") return NeighborhoodMode::h2;
  throw std::invalid_argument("unknown neighborhood mode '" + std::string(name) +
                              "' (expected eps, knn, h1 or h2)");
}

void NeighborhoodSpec::validate() const {
  const bool needs_eps = mode != NeighborhoodMode::knn;
  const bool needs_k = mode != NeighborhoodMode::eps_ball;
  const std::string who = "neighborhood spec (" + std::string(to_string(mode)) + ")";
  if (needs_eps && !eps) throw std::invalid_argument(who + ": eps is required");
  if (needs_k && !k) throw std::invalid_argument(who + ": k is required");
  if (eps && !(*eps > 0.0)) throw std::invalid_argument(who + ": eps must be positive");
  if (k && *k == 0) throw std::invalid_argument(who + ": k must be at least 1");
}

std::vector<Neighbor> neighborhood(const LayerIndex& index, std::span<const double> q,
                                   const NeighborhoodSpec& spec) {
  spec.validate();
  switch (spec.mode) {
    case NeighborhoodMode::eps_ball:
      return index.range(q, *spec.eps);
    case NeighborhoodMode::knn:
      return index.knn(q, *spec.k);
    case NeighborhoodMode::h1: {
      auto ball = index.range(q, *spec.eps);
      return ball.empty() ? index.knn(q, *spec.k) : ball;
    }
    case NeighborhoodMode::h2: {
      auto ball = index.range(q, *spec.eps);
      if (ball.empty()) return ball;
      // The k nearest either lie inside the ball or beyond every ball member,
      // so appending the ones not already present keeps (distance, index) order.
      const auto nearest = index.knn(q, *spec.k);
      std::vector<Neighbor> merged = ball;
      for (const auto& n : nearest) {
        const bool present = std::any_of(ball.begin(), ball.end(),
                                         [&](const Neighbor& b) { return b.index == n.index; });
        if (!present) merged.push_back(n);
      }
      std::sort(merged.begin(), merged.end(), [](const Neighbor& a, const Neighbor& b) {
        return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
      });
      return merged;
    }
  }
  throw std::logic_error("unhandled neighborhood mode");
}

SupportSet support(const LayerIndex& index, std::span<const double> activation,
                   const NeighborhoodSpec& spec) {
  SupportSet s;
  s.layer = spec.layer;
  for (const auto& n : neighborhood(index, activation, spec)) {
    s.classes.insert(n.label);
    s.neighbor_ids.push_back(n.index);
  }
  return s;
}

}  // namespace epistemic
