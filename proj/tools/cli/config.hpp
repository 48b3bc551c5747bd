#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epistemic/classifier.hpp"
#include "epistemic/eval.hpp"
#include "epistemic/network.hpp"

namespace epistemic::cli {

/// Raised for invalid configuration; the message starts with the offending field path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct BlobSource {
  std::vector<std::vector<double>> centers;
  double sigma = 1.0;
  std::size_t per_class = 500;
};

struct DataSource {
  std::optional<std::filesystem::path> csv;
  bool header = true;
  std::optional<BlobSource> blobs;
};

// Offsets added to the top-level seed for each consumer of randomness.
inline constexpr std::uint64_t kSeedBlobs = 0;
inline constexpr std::uint64_t kSeedSplit = 1;
inline constexpr std::uint64_t kSeedInit = 2;
inline constexpr std::uint64_t kSeedTrain = 3;
inline constexpr std::uint64_t kSeedPerturb = 4;

struct RunConfig {
  std::uint64_t seed = 0;
  DataSource data;
  std::array<double, 3> split{0.6, 0.2, 0.2};

  std::vector<std::size_t> hidden;
  ActivationKind activation = ActivationKind::relu;
  std::size_t epochs = 200;
  double learning_rate = 0.05;
  std::size_t batch_size = 16;
  bool standardize = false;  ///< train on z-scored inputs, folded back into the first layer

  std::vector<LayerId> layers;  ///< resolved ids; empty = default set
  NeighborhoodMode mode = NeighborhoodMode::eps_ball;
  MetricKind metric = MetricKind::euclidean;
  std::vector<double> eps_grid;
  bool relative_grid = true;
  std::vector<std::size_t> k_values{1, 3, 5, 10, 20};
  bool propagate = false;
  std::size_t leaf_size = LayerIndex::kDefaultLeafSize;

  std::vector<PerturbationSpec> perturbations;
  std::vector<double> sweep_grid;
  std::filesystem::path out = "out";

  /// Command-line overrides applied on top of the file, recorded in outputs.
  nlohmann::json overrides = nlohmann::json::object();

  TrainOptions train_options() const { return {epochs, learning_rate, batch_size, seed + kSeedTrain}; }
  SelectionConfig selection() const;
};

/// Parses a config document. Relative paths resolve against `base_dir`.
RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

/// Layer name ("input", "logit", "hidden<N>" 1-based, or an integer id) to id.
LayerId resolve_layer(const nlohmann::json& value, std::size_t hidden_count, const std::string& where);
std::string layer_name(LayerId id, std::size_t hidden_count);

/// Loads or generates the dataset and splits it deterministically.
DataSplit prepare_data(const RunConfig& config);

}  // namespace epistemic::cli
