#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "epistemic/classifier.hpp"
#include "epistemic/network.hpp"

namespace epistemic {

/// Three stacked C x C confusion blocks, one per assertion.
/// Orientation: rows = predicted label, columns = true label.
class AugConfusionMatrix {
 public:
  explicit AugConfusionMatrix(std::size_t class_count);

  void add(Assertion assertion, std::size_t predicted, std::size_t truth);
  void accumulate(const EpistemicVerdict& verdict, std::size_t truth) {
    add(verdict.assertion, verdict.belief, truth);
  }
  /// Counter merge; totals are independent of merge order.
  void merge(const AugConfusionMatrix& other);

  std::size_t count(Assertion a, std::size_t predicted, std::size_t truth) const;
  std::size_t block_total(Assertion a) const;
  std::size_t block_diagonal(Assertion a) const;
  std::size_t total() const;
  std::size_t class_count() const noexcept { return classes_; }

 private:
  std::size_t offset(Assertion a, std::size_t p, std::size_t t) const {
    return (static_cast<std::size_t>(a) * classes_ + p) * classes_ + t;
  }
  std::size_t classes_;
  std::vector<std::size_t> counts_;
};

struct EpistemicMetrics {
  double f_ik = 0.0;
  double f_imk = 0.0;
  double f_idk = 0.0;
  std::optional<double> a_ik;      ///< empty when no sample is IK
  std::optional<double> a_not_ik;  ///< pooled over IMK and IDK; empty when both are empty
};

EpistemicMetrics metrics_from(const AugConfusionMatrix& acm);

enum class PerturbationKind { gaussian, uniform, large_uniform, bim };

std::string_view to_string(PerturbationKind kind);

/// magnitude: multiples of per-feature training std (gaussian, uniform),
/// fraction of per-feature training range (large_uniform), or l-inf budget (bim).
struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::gaussian;
  double magnitude = 0.0;
  std::uint64_t seed = 0;
  std::size_t bim_iterations = 10;
  std::optional<std::pair<double, double>> clip_range;
};

/// Parses "kind:magnitude", e.g. "large_uniform:0.5".
PerturbationSpec parse_perturbation(std::string_view text);

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;  ///< population standard deviation
  std::vector<double> min;
  std::vector<double> max;
};

FeatureStats feature_stats(const Matrix& x);

/// Copy with each feature mapped to (x - mean) / stddev. Constant features are only centred.
Dataset standardize(const Dataset& data, const FeatureStats& stats);

/// Network on raw inputs equal to `net` applied to standardized inputs; the
/// affine map is absorbed into the first layer.
LayeredNet fold_standardization(const LayeredNet& net, const FeatureStats& stats);

/// Perturbed copy of `data`; labels are untouched. `reference` holds the
/// training statistics that scale the noise. `net` is required for bim.
Dataset perturb(const Dataset& data, const PerturbationSpec& spec, const FeatureStats& reference,
                const LayeredNet* net = nullptr);

AugConfusionMatrix evaluate(const EpistemicClassifier& ec, const Dataset& data);

/// Baseline ACM: confident samples go to the IK block, abstentions to IDK.
AugConfusionMatrix evaluate_baseline(const LayeredNet& net, const Dataset& data, double threshold);

struct SweepRow {
  double eps = 0.0;
  EpistemicMetrics metrics;
};

/// One full evaluation per radius, every layer's eps set to the grid value.
/// Rows are in increasing eps.
std::vector<SweepRow> epsilon_sweep(const EpistemicClassifier& ec, const Dataset& data, std::span<const double> grid);

/// Isotropic Gaussian blobs, `per_class` samples around each center, label = center index.
Dataset make_blobs(std::span<const std::vector<double>> centers, double sigma, std::size_t per_class,
                   std::uint64_t seed);

/// Numeric CSV, label in the final column. Labels must cover 0..C-1 without gaps.
Dataset parse_csv(std::istream& in, bool has_header);
Dataset load_csv(const std::filesystem::path& path, bool has_header);

struct DataSplit {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Stratified shuffled split into train/validation/test.
DataSplit split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed);

/// 17-significant-digit decimal, or "null".
std::string format_number(std::optional<double> v);

/// CSV `epsilon,f_ik,f_imk,f_idk,a_ik,a_not_ik`.
std::string sweep_csv(std::span<const SweepRow> rows);

/// {"blocks": {...}, "metrics": {...}, "orientation": "rows=predicted,cols=true"}
std::string acm_json(const AugConfusionMatrix& acm);

/// Aligned plain-text rendering of the three stacked blocks.
std::string acm_text(const AugConfusionMatrix& acm);

}  // namespace epistemic
