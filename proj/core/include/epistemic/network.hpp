#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "epistemic/linalg.hpp"

namespace epistemic {

enum class ActivationKind { relu, tanh, linear, softmax };

std::string_view to_string(ActivationKind kind);
ActivationKind parse_activation(std::string_view name);

/// Lipschitz constant of the activation (1 for every supported kind; softmax
/// carries 1 by convention but is never used for bound propagation).
double lipschitz_constant(ActivationKind kind);

/// One dense layer computing phi(x^T W + b). `weights` is input_dim x output_dim.
struct DenseLayer {
  Matrix weights;
  std::vector<double> bias;
  ActivationKind activation = ActivationKind::relu;

  std::size_t input_dim() const noexcept { return weights.rows(); }
  std::size_t output_dim() const noexcept { return weights.cols(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Identifies a layer whose activations serve as a search space.
/// kInputLayer is the raw input; 0..n-2 are hidden layers (post-activation);
/// n-1 is the logit layer (pre-softmax output of the final layer).
using LayerId = int;
inline constexpr LayerId kInputLayer = -1;

/// Feed-forward classifier g. The final layer is always softmax.
class LayeredNet {
 public:
  LayeredNet() = default;
  LayeredNet(std::size_t input_dim, std::vector<DenseLayer> layers);

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t class_count() const noexcept { return layers_.back().output_dim(); }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  LayerId logit_layer() const noexcept { return static_cast<LayerId>(layers_.size()) - 1; }

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  const DenseLayer& layer(std::size_t i) const { return layers_.at(i); }
  DenseLayer& mutable_layer(std::size_t i) { return layers_.at(i); }

  /// Width of the activation space addressed by `id`.
  std::size_t layer_width(LayerId id) const;
  void require_layer(LayerId id) const;

  friend bool operator==(const LayeredNet&, const LayeredNet&) = default;

 private:
  std::size_t input_dim_ = 0;
  std::vector<DenseLayer> layers_;
};

struct ForwardPass {
  /// activations[i] = h_i(x); the last entry holds the logits.
  std::vector<std::vector<double>> activations;
  std::vector<double> softmax;
};

ForwardPass forward_capture(const LayeredNet& net, std::span<const double> x);

/// Activation of a single layer (the input itself for kInputLayer).
std::vector<double> layer_activation(const LayeredNet& net, std::span<const double> x, LayerId id);

/// Activations of every row of `x` in layer `id`, one row per sample.
Matrix layer_activations(const LayeredNet& net, const Matrix& x, LayerId id);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

std::size_t predict(const LayeredNet& net, std::span<const double> x);

enum class DataRole { train, validation, test };

std::string_view to_string(DataRole role);

struct Dataset {
  Matrix features;                  ///< one sample per row
  std::vector<std::size_t> labels;  ///< aligned with rows, each < class_count
  std::size_t class_count = 0;
  DataRole role = DataRole::train;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  std::span<const double> sample(std::size_t i) const { return features.row(i); }

  /// Throws std::invalid_argument if rows and labels disagree or a label is out of range.
  void validate() const;
};

double accuracy(const LayeredNet& net, const Dataset& data);

/// Glorot-uniform initialised network: hidden layers share `hidden_activation`,
/// the output layer is softmax over `class_count` units. Biases start at zero.
LayeredNet make_network(std::size_t input_dim, std::span<const std::size_t> hidden_widths,
                        ActivationKind hidden_activation, std::size_t class_count,
                        std::uint64_t seed);

struct TrainOptions {
  std::size_t epochs = 200;
  double learning_rate = 0.05;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

/// Mini-batch SGD on mean softmax cross-entropy. Deterministic for a given seed.
LayeredNet train(LayeredNet net, const Dataset& data, const TrainOptions& options);

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> bias;
  double loss = 0.0;
};

/// Mean cross-entropy over `rows` of (x, labels) and its gradient w.r.t. every parameter.
Gradients loss_gradients(const LayeredNet& net, const Matrix& x, std::span<const std::size_t> labels,
                         std::span<const std::size_t> rows);

double mean_loss(const LayeredNet& net, const Matrix& x, std::span<const std::size_t> labels);

/// Gradient of the cross-entropy of `label` w.r.t. the input vector.
std::vector<double> input_gradient(const LayeredNet& net, std::span<const double> x, std::size_t label);

struct BimOptions {
  double step = 0.02;
  double bound = 0.2;
  std::size_t iterations = 10;
  std::optional<std::pair<double, double>> clip_range;
};

/// Basic Iterative Method: repeated sign-gradient ascent on the loss of
/// `true_label`, projected onto the l-inf ball of radius `bound` around x
/// (and onto clip_range when given) after every step.
std::vector<double> bim_attack(const LayeredNet& net, std::span<const double> x,
                               std::size_t true_label, const BimOptions& options);

std::string weights_to_json(const LayeredNet& net);
LayeredNet weights_from_json(std::string_view text);
void save_weights(const LayeredNet& net, const std::filesystem::path& path);
LayeredNet load_weights(const std::filesystem::path& path);

}  // namespace epistemic
