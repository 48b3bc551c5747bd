#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "epistemic/linalg.hpp"
#include "epistemic/neighbors.hpp"
#include "epistemic/network.hpp"
#include "epistemic/support.hpp"

namespace epistemic {

enum class Assertion { ik, imk, idk };

std::string_view to_string(Assertion a);

struct EpistemicVerdict {
  std::size_t belief = 0;
  std::vector<SupportSet> supports;
  ClassSet justification;
  Assertion assertion = Assertion::idk;
};

/// Empty if any support is empty, otherwise the union of every support's classes.
ClassSet justify(std::span<const SupportSet> supports);

/// IK when the justification is exactly {belief}; IMK when it strictly
/// contains the belief; IDK otherwise (including an empty justification).
Assertion assert_knowledge(std::size_t belief, const ClassSet& justification);

using SharedIndex = std::shared_ptr<const LayerIndex>;

/// Base network plus one (neighbourhood spec, search index) pair per support layer.
class EpistemicClassifier {
 public:
  EpistemicClassifier(LayeredNet net, std::vector<NeighborhoodSpec> specs, std::vector<SharedIndex> indexes);

  EpistemicVerdict infer(std::span<const double> x) const;

  /// Same network and indexes with different neighbourhood parameters.
  EpistemicClassifier with_specs(std::vector<NeighborhoodSpec> specs) const;

  const LayeredNet& net() const noexcept { return net_; }
  const std::vector<NeighborhoodSpec>& specs() const noexcept { return specs_; }
  const std::vector<SharedIndex>& indexes() const noexcept { return indexes_; }
  std::vector<LayerId> layer_set() const;

 private:
  LayeredNet net_;
  std::vector<NeighborhoodSpec> specs_;
  std::vector<SharedIndex> indexes_;
};

enum class MetricKind { euclidean, weighted };

std::string_view to_string(MetricKind kind);
MetricKind parse_metric(std::string_view name);

/// How candidate neighbourhood parameters are generated and scored.
struct SelectionConfig {
  NeighborhoodMode mode = NeighborhoodMode::eps_ball;
  /// Candidate radii. Multiplied by each layer's median pairwise training
  /// distance when `relative_grid` is set. Empty means 25 log-spaced points on [1e-3, 1e3].
  std::vector<double> eps_grid;
  bool relative_grid = true;
  /// Candidate neighbour counts for knn/h1/h2; one k is shared by all layers.
  std::vector<std::size_t> k_values{1, 3, 5, 10, 20};
  /// Tie every layer to one input-space radius eps0: Euclidean layers use the
  /// Lipschitz chain bound, weighted-metric layers use eps0 directly.
  bool propagate = false;
  /// Scale for a relative eps0 grid under propagation (median pairwise
  /// distance of training inputs). build() fills it in; defaults to the
  /// validation inputs' scale otherwise.
  std::optional<double> input_scale;
  /// When set, pick the candidate whose validation coverage is closest to this
  /// value instead of the one with maximal coverage.
  std::optional<double> target_coverage;
};

struct Candidate {
  std::vector<NeighborhoodSpec> specs;
  double coverage = 0.0;
};

struct SelectionResult {
  std::vector<NeighborhoodSpec> specs;
  double coverage = 0.0;  ///< validation F_IK of the chosen specs
  std::vector<Candidate> evaluated;
};

/// Grid search over neighbourhood parameters scored by validation coverage
/// (F_IK). Ties go to the lexicographically smallest eps tuple, then smallest k.
SelectionResult select_parameters(const LayeredNet& net, std::span<const SharedIndex> indexes,
                                  std::span<const LayerId> layers, const Dataset& validation,
                                  const SelectionConfig& config);

struct BuildOptions {
  std::vector<LayerId> layers;  ///< empty means default_layer_set(net)
  MetricKind metric = MetricKind::euclidean;
  std::size_t leaf_size = LayerIndex::kDefaultLeafSize;
  SelectionConfig selection;
};

struct BuildResult {
  EpistemicClassifier classifier;
  SelectionResult selection;
};

/// Indexes the training activations of every support layer and selects the
/// neighbourhood parameters on the validation set.
BuildResult build(const LayeredNet& net, const Dataset& train, const Dataset& validation,
                  const BuildOptions& options);

/// Search index over the training activations of `layer`.
SharedIndex build_layer_index(const LayeredNet& net, const Dataset& train, LayerId layer,
                              MetricKind metric, std::size_t leaf_size = LayerIndex::kDefaultLeafSize);

/// {last hidden layer, logit layer}, or just {logit} for a network without hidden layers.
std::vector<LayerId> default_layer_set(const LayeredNet& net);

/// Upper bound on the radius at each listed layer for inputs within eps0 of
/// each other: eps0 times the product of L_i * sqrt(lambda_max(W_i W_i^T)) up to that layer.
std::vector<double> propagate_epsilon(const LayeredNet& net, double eps0, std::span<const LayerId> layers);

/// Quadratic-form metric for `layer` built from the eigendecomposition of
/// C C^T, C = W_0 W_1 ... W_layer, such that inputs within eps0 (l2) map to
/// activations within eps0 under the metric for affine chains.
WeightedMetric weighted_metric_for_layer(const LayeredNet& net, LayerId layer);

struct BaselineDecision {
  std::size_t belief = 0;
  bool abstain = false;
  double confidence = 0.0;  ///< max softmax value
};

/// Softmax-threshold abstention: abstain iff max softmax < threshold.
BaselineDecision softmax_baseline(const LayeredNet& net, std::span<const double> x, double threshold);

/// Threshold whose non-abstaining fraction on `validation` is closest to
/// `target_coverage` (ties toward the lower threshold).
double calibrate_softmax_threshold(const LayeredNet& net, const Dataset& validation, double target_coverage);

/// Median l2/metric distance over pairs of the first `max_points` rows (strided sample).
double median_pairwise_distance(const Matrix& points, const Metric& metric, std::size_t max_points = 400);

/// `count` log-spaced values from lo to hi inclusive.
std::vector<double> log_grid(double lo, double hi, std::size_t count);

}  // namespace epistemic
