#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "config.hpp"

namespace epistemic::cli {

/// Trains the base network; writes weights.json and train_report.json under config.out.
void run_train(const RunConfig& config);

/// Indexes training activations and selects parameters; writes manifest.json.
void run_build(const RunConfig& config, const std::filesystem::path& weights);

/// Evaluates the classifier and the calibrated softmax baseline on the test
/// split, optionally perturbed. Writes ACM JSON/text and a one-row CSV.
void run_eval(const RunConfig& config, const std::filesystem::path& weights, const std::filesystem::path& manifest,
              const std::optional<PerturbationSpec>& perturbation);

/// Eps sweep over the test split on the configured layers; writes sweep.csv.
void run_sweep(const RunConfig& config, const std::filesystem::path& weights);

/// Reads CSV feature rows from `in` and writes one JSON verdict per line to `out`.
void run_infer(const RunConfig& config, const std::filesystem::path& weights, const std::filesystem::path& manifest,
               std::istream& in, std::ostream& out);

/// Rebuilds the classifier described by a manifest. Throws if the manifest
/// does not match the network.
EpistemicClassifier load_classifier(const RunConfig& config, const LayeredNet& net, const Dataset& train,
                                    const std::filesystem::path& manifest);

/// Default sweep radii when the config leaves sweep_grid empty.
std::vector<double> default_sweep_grid();

}  // namespace epistemic::cli
