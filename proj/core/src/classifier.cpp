#include "epistemic/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace epistemic {

std::string_view to_string(Assertion a) {
  switch (a) {
    case Assertion::ik: return "IK";
    case Assertion::imk: return "IMK";
    case Assertion::idk: return "IDK";
  }
  return "?";
}

std::string_view to_string(MetricKind kind) {
  return kind == MetricKind::weighted ? "weighted" : "l2";
}

MetricKind parse_metric(std::string_view name) {
  if (name == "l2" || name == "euclidean") return MetricKind::euclidean;
  if (name == "weighted") return MetricKind::weighted;
  throw std::invalid_argument("unknown metric '" + std::string(name) + "' (expected l2 or weighted)");
}

ClassSet justify(std::span<const SupportSet> supports) {
  if (supports.empty()) throw std::invalid_argument("justify: at least one support is required");
  ClassSet out;
  for (const auto& s : supports) {
    if (s.classes.empty()) return {};
    out.insert(s.classes.begin(), s.classes.end());
  }
  return out;
}

Assertion assert_knowledge(std::size_t belief, const ClassSet& justification) {
  if (!justification.contains(belief)) return Assertion::idk;
  return justification.size() == 1 ? Assertion::ik : Assertion::imk;
}

EpistemicClassifier::EpistemicClassifier(LayeredNet net, std::vector<NeighborhoodSpec> specs,
                                         std::vector<SharedIndex> indexes)
    : net_(std::move(net)), specs_(std::move(specs)), indexes_(std::move(indexes)) {
  if (specs_.empty()) throw std::invalid_argument("epistemic classifier needs at least one layer");
  if (specs_.size() != indexes_.size()) {
    throw std::invalid_argument("epistemic classifier: " + std::to_string(specs_.size()) + " specs but " +
                                std::to_string(indexes_.size()) + " indexes");
  }
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    specs_[i].validate();
    net_.require_layer(specs_[i].layer);
    if (!indexes_[i]) throw std::invalid_argument("epistemic classifier: null index");
    if (indexes_[i]->dim() != net_.layer_width(specs_[i].layer)) {
      throw std::invalid_argument("epistemic classifier: index " + std::to_string(i) + " has dimension " +
                                  std::to_string(indexes_[i]->dim()) + " but layer " +
                                  std::to_string(specs_[i].layer) + " has width " +
                                  std::to_string(net_.layer_width(specs_[i].layer)));
    }
  }
}

EpistemicVerdict EpistemicClassifier::infer(std::span<const double> x) const {
  const ForwardPass pass = forward_capture(net_, x);
  EpistemicVerdict v;
  v.belief = argmax(pass.softmax);
  v.supports.reserve(specs_.size());
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const LayerId id = specs_[i].layer;
    std::span<const double> act = id == kInputLayer ? x : std::span<const double>(pass.activations[static_cast<std::size_t>(id)]);
    v.supports.push_back(support(*indexes_[i], act, specs_[i]));
  }
  v.justification = justify(v.supports);
  v.assertion = assert_knowledge(v.belief, v.justification);
  return v;
}

EpistemicClassifier EpistemicClassifier::with_specs(std::vector<NeighborhoodSpec> specs) const {
  return EpistemicClassifier(net_, std::move(specs), indexes_);
}

std::vector<LayerId> EpistemicClassifier::layer_set() const {
  std::vector<LayerId> out;
  for (const auto& s : specs_) out.push_back(s.layer);
  return out;
}

std::vector<LayerId> default_layer_set(const LayeredNet& net) {
  const LayerId logit = net.logit_layer();
  if (logit == 0) return {logit};
  return {logit - 1, logit};
}

std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  if (count == 0) return {};
  if (!(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("log_grid: need 0 < lo <= hi");
  if (count == 1) return {lo};
  std::vector<double> out(count);
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

double median_pairwise_distance(const Matrix& points, const Metric& metric, std::size_t max_points) {
  const std::size_t n = points.rows();
  const std::size_t m = std::min(n, std::max<std::size_t>(max_points, 2));
  if (m < 2) return 1.0;
  std::vector<std::size_t> rows(m);
  for (std::size_t i = 0; i < m; ++i) rows[i] = i * n / m;
  std::vector<double> d;
  d.reserve(m * (m - 1) / 2);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) d.push_back(metric(points.row(rows[i]), points.row(rows[j])));
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  // All-duplicate data has no usable scale; fall back to unit scale.
  return *mid > 0.0 ? *mid : 1.0;
}

std::vector<double> propagate_epsilon(const LayeredNet& net, double eps0, std::span<const LayerId> layers) {
  if (!(eps0 > 0.0)) throw std::invalid_argument("propagate_epsilon: eps0 must be positive");
  std::vector<double> out;
  out.reserve(layers.size());
  LayerId reached = kInputLayer;
  double eps = eps0;
  for (LayerId target : layers) {
    if (target == static_cast<LayerId>(net.layer_count())) {
      throw std::invalid_argument("propagate_epsilon: the softmax output cannot be used for bound propagation");
    }
    net.require_layer(target);
    if (target < reached) throw std::invalid_argument("propagate_epsilon: layers must be in increasing order");
    while (reached < target) {
      ++reached;
      const DenseLayer& layer = net.layer(static_cast<std::size_t>(reached));
      // The logit layer is the pre-softmax affine map, i.e. 1-Lipschitz.
      const bool is_logit = reached == net.logit_layer();
      if (!is_logit && layer.activation == ActivationKind::softmax) {
        throw std::invalid_argument("propagate_epsilon: softmax layer in chain");
      }
      const double lip = is_logit ? 1.0 : lipschitz_constant(layer.activation);
      eps *= lip * std::sqrt(largest_eigenvalue(outer_gram(layer.weights)));
    }
    out.push_back(eps);
  }
  return out;
}

WeightedMetric weighted_metric_for_layer(const LayeredNet& net, LayerId layer) {
  net.require_layer(layer);
  if (layer == kInputLayer) return WeightedMetric(Matrix::identity(net.input_dim()));

  Matrix chain = net.layer(0).weights;
  for (LayerId i = 1; i <= layer; ++i) chain = matmul(chain, net.layer(static_cast<std::size_t>(i)).weights);
  const std::size_t m = chain.rows();
  const std::size_t n = chain.cols();
  if (n > m) {
    throw std::invalid_argument("weighted_metric_for_layer: layer " + std::to_string(layer) + " has width " +
                                std::to_string(n) + " above the input dimension " + std::to_string(m) +
                                "; the construction assumes output width n <= input width m");
  }
  const EigenDecomposition eig = symmetric_eigendecomposition(outer_gram(chain), n);
  if (eig.values.empty()) {
    throw std::invalid_argument("weighted_metric_for_layer: composed weights of layer " +
                                std::to_string(layer) + " have no non-zero eigenvalue");
  }
  // B = Lambda^-1 U^T C  (r x n); D = B^T B = C^T U Lambda^-2 U^T C.
  const std::size_t r = eig.values.size();
  Matrix bt(n, r);
  for (std::size_t j = 0; j < r; ++j) {
    for (std::size_t c = 0; c < n; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += eig.vectors(k, j) * chain(k, c);
      bt(c, j) = s / eig.values[j];
    }
  }
  return WeightedMetric(outer_gram(bt));
}

SharedIndex build_layer_index(const LayeredNet& net, const Dataset& train, LayerId layer, MetricKind metric,
                              std::size_t leaf_size) {
  Matrix acts = layer_activations(net, train.features, layer);
  Metric m = Metric::euclidean();
  if (metric == MetricKind::weighted && layer != kInputLayer) m = Metric::weighted(weighted_metric_for_layer(net, layer));
  return std::make_shared<const LayerIndex>(std::move(acts), train.labels, std::move(m), leaf_size);
}

namespace {

using Mask = std::uint64_t;

Mask bit(std::size_t c) { return Mask{1} << c; }

struct LayerTables {
  // eps_masks[s][e]: class mask of the eps-ball for eps value e
  std::vector<std::vector<Mask>> eps_masks;
  // knn_masks[s][j]: class mask of the k_values[j] nearest
  std::vector<std::vector<Mask>> knn_masks;
};

std::vector<double> sorted_unique(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

SelectionResult select_parameters(const LayeredNet& net, std::span<const SharedIndex> indexes,
                                  std::span<const LayerId> layers, const Dataset& validation,
                                  const SelectionConfig& config) {
  if (validation.size() == 0) throw std::invalid_argument("select_parameters: empty validation set");
  if (layers.empty() || layers.size() != indexes.size()) {
    throw std::invalid_argument("select_parameters: need one index per layer");
  }
  if (net.class_count() > 64) throw std::invalid_argument("select_parameters: supports at most 64 classes");
  validation.validate();

  const bool uses_eps = config.mode != NeighborhoodMode::knn;
  const bool uses_k = config.mode != NeighborhoodMode::eps_ball;
  const std::size_t n_layers = layers.size();

  std::vector<std::size_t> k_values;
  if (uses_k) {
    k_values = config.k_values;
    std::sort(k_values.begin(), k_values.end());
    k_values.erase(std::unique(k_values.begin(), k_values.end()), k_values.end());
    if (k_values.empty() || k_values.front() == 0) {
      throw std::invalid_argument("select_parameters: k_values must be non-empty and positive");
    }
  }

  // Per-layer eps candidates. `tied` means one shared grid position across layers.
  std::vector<std::vector<double>> eps_values(n_layers);
  bool tied = false;
  std::vector<double> base_grid = config.eps_grid.empty() ? log_grid(1e-3, 1e3, 25) : config.eps_grid;
  for (double e : base_grid)
    if (!(e > 0.0)) throw std::invalid_argument("select_parameters: eps grid values must be positive");
  base_grid = sorted_unique(std::move(base_grid));
  if (uses_eps) {
    if (config.propagate) {
      tied = true;
      double scale = 1.0;
      if (config.relative_grid) {
        scale = config.input_scale ? *config.input_scale
                                   : median_pairwise_distance(validation.features, Metric::euclidean());
      }
      std::vector<LayerId> sorted_layers(layers.begin(), layers.end());
      if (!std::is_sorted(sorted_layers.begin(), sorted_layers.end())) {
        throw std::invalid_argument("select_parameters: propagation requires layers in increasing order");
      }
      for (double g : base_grid) {
        const double eps0 = g * scale;
        const auto chain = propagate_epsilon(net, eps0, layers);
        for (std::size_t l = 0; l < n_layers; ++l) {
          eps_values[l].push_back(indexes[l]->metric().is_weighted() ? eps0 : chain[l]);
        }
      }
    } else {
      tied = n_layers > 2;
      for (std::size_t l = 0; l < n_layers; ++l) {
        const double scale =
            config.relative_grid ? median_pairwise_distance(indexes[l]->points(), indexes[l]->metric()) : 1.0;
        for (double g : base_grid) eps_values[l].push_back(g * scale);
      }
    }
  }

  const std::size_t n_samples = validation.size();
  std::vector<std::size_t> beliefs(n_samples);
  std::vector<std::vector<std::vector<double>>> acts(n_layers, std::vector<std::vector<double>>(n_samples));
  for (std::size_t s = 0; s < n_samples; ++s) {
    const ForwardPass pass = forward_capture(net, validation.sample(s));
    beliefs[s] = argmax(pass.softmax);
    for (std::size_t l = 0; l < n_layers; ++l) {
      const LayerId id = layers[l];
      const auto x = validation.sample(s);
      acts[l][s] = id == kInputLayer ? std::vector<double>(x.begin(), x.end())
                                     : pass.activations[static_cast<std::size_t>(id)];
    }
  }

  std::vector<LayerTables> tables(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const LayerIndex& index = *indexes[l];
    tables[l].eps_masks.resize(n_samples);
    tables[l].knn_masks.resize(n_samples);
    if (uses_eps) {
      // Nearest distance to each class; the eps-ball holds class c iff that distance <= eps.
      std::vector<std::shared_ptr<LayerIndex>> per_class(net.class_count());
      for (std::size_t c = 0; c < net.class_count(); ++c) {
        Matrix pts;
        std::vector<std::size_t> lbl;
        for (std::size_t i = 0; i < index.size(); ++i) {
          if (index.labels()[i] == c) {
            pts.append_row(index.points().row(i));
            lbl.push_back(c);
          }
        }
        if (!lbl.empty()) {
          per_class[c] = std::make_shared<LayerIndex>(std::move(pts), std::move(lbl), index.metric(), index.leaf_size());
        }
      }
      for (std::size_t s = 0; s < n_samples; ++s) {
        std::vector<double> nearest(net.class_count(), std::numeric_limits<double>::infinity());
        for (std::size_t c = 0; c < net.class_count(); ++c)
          if (per_class[c]) nearest[c] = per_class[c]->knn(acts[l][s], 1).front().distance;
        auto& row = tables[l].eps_masks[s];
        row.reserve(eps_values[l].size());
        for (double e : eps_values[l]) {
          Mask m = 0;
          for (std::size_t c = 0; c < nearest.size(); ++c)
            if (nearest[c] <= e) m |= bit(c);
          row.push_back(m);
        }
      }
    }
    if (uses_k) {
      for (std::size_t s = 0; s < n_samples; ++s) {
        const auto nn = index.knn(acts[l][s], k_values.back());
        auto& row = tables[l].knn_masks[s];
        Mask m = 0;
        std::size_t taken = 0;
        for (std::size_t k : k_values) {
          for (; taken < std::min(k, nn.size()); ++taken) m |= bit(nn[taken].label);
          row.push_back(m);
        }
      }
    }
  }

  auto layer_mask = [&](std::size_t l, std::size_t s, std::size_t e, std::size_t j) -> Mask {
    switch (config.mode) {
      case NeighborhoodMode::eps_ball: return tables[l].eps_masks[s][e];
      case NeighborhoodMode::knn: return tables[l].knn_masks[s][j];
      case NeighborhoodMode::h1: {
        const Mask ball = tables[l].eps_masks[s][e];
        return ball != 0 ? ball : tables[l].knn_masks[s][j];
      }
      case NeighborhoodMode::h2: {
        const Mask ball = tables[l].eps_masks[s][e];
        return ball == 0 ? 0 : (ball | tables[l].knn_masks[s][j]);
      }
    }
    return 0;
  };

  // Enumerate eps position tuples in lexicographic order.
  std::vector<std::vector<std::size_t>> eps_tuples;
  if (!uses_eps) {
    eps_tuples.push_back(std::vector<std::size_t>(n_layers, 0));
  } else if (tied) {
    for (std::size_t e = 0; e < eps_values[0].size(); ++e) eps_tuples.push_back(std::vector<std::size_t>(n_layers, e));
  } else {
    std::vector<std::size_t> cur(n_layers, 0);
    for (;;) {
      eps_tuples.push_back(cur);
      std::size_t l = n_layers;
      while (l > 0 && ++cur[l - 1] == eps_values[l - 1].size()) {
        cur[l - 1] = 0;
        --l;
      }
      if (l == 0) break;
    }
  }
  const std::size_t n_k = uses_k ? k_values.size() : 1;

  SelectionResult result;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& tuple : eps_tuples) {
    for (std::size_t j = 0; j < n_k; ++j) {
      std::size_t ik = 0;
      for (std::size_t s = 0; s < n_samples; ++s) {
        Mask just = 0;
        bool empty = false;
        for (std::size_t l = 0; l < n_layers; ++l) {
          const Mask m = layer_mask(l, s, tuple[l], j);
          if (m == 0) {
            empty = true;
            break;
          }
          just |= m;
        }
        if (!empty && just == bit(beliefs[s])) ++ik;
      }
      Candidate cand;
      cand.coverage = static_cast<double>(ik) / static_cast<double>(n_samples);
      for (std::size_t l = 0; l < n_layers; ++l) {
        NeighborhoodSpec spec{layers[l], config.mode, {}, {}};
        if (uses_eps) spec.eps = eps_values[l][tuple[l]];
        if (uses_k) spec.k = k_values[j];
        cand.specs.push_back(spec);
      }
      const double score = config.target_coverage ? -std::abs(cand.coverage - *config.target_coverage)
                                                  : cand.coverage;
      if (score > best_score) {
        best_score = score;
        result.specs = cand.specs;
        result.coverage = cand.coverage;
      }
      result.evaluated.push_back(std::move(cand));
    }
  }
  return result;
}

BuildResult build(const LayeredNet& net, const Dataset& train, const Dataset& validation,
                  const BuildOptions& options) {
  train.validate();
  validation.validate();
  if (train.size() == 0) throw std::invalid_argument("build: empty training set");
  if (train.dim() != net.input_dim() || validation.dim() != net.input_dim()) {
    throw std::invalid_argument("build: dataset dimension does not match the network input");
  }
  bool trained = false;
  for (const auto& l : net.layers()) {
    for (double w : l.weights.data()) {
      if (!std::isfinite(w)) throw std::invalid_argument("build: network has non-finite weights");
      trained = trained || w != 0.0;
    }
  }
  if (!trained) throw std::invalid_argument("build: network weights are all zero (untrained)");

  std::vector<LayerId> layers = options.layers.empty() ? default_layer_set(net) : options.layers;
  if (layers.empty()) throw std::invalid_argument("build: empty layer set");

  std::vector<SharedIndex> indexes;
  for (LayerId id : layers) {
    net.require_layer(id);
    indexes.push_back(build_layer_index(net, train, id, options.metric, options.leaf_size));
  }
  SelectionConfig selection = options.selection;
  if (selection.propagate && !selection.input_scale) {
    selection.input_scale = median_pairwise_distance(train.features, Metric::euclidean());
  }
  SelectionResult sel = select_parameters(net, indexes, layers, validation, selection);
  EpistemicClassifier ec(net, sel.specs, std::move(indexes));
  return {std::move(ec), std::move(sel)};
}

BaselineDecision softmax_baseline(const LayeredNet& net, std::span<const double> x, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("softmax_baseline: threshold must lie in [0, 1]");
  }
  const ForwardPass pass = forward_capture(net, x);
  BaselineDecision d;
  d.belief = argmax(pass.softmax);
  d.confidence = pass.softmax[d.belief];
  d.abstain = d.confidence < threshold;
  return d;
}

double calibrate_softmax_threshold(const LayeredNet& net, const Dataset& validation, double target_coverage) {
  if (validation.size() == 0) throw std::invalid_argument("calibrate_softmax_threshold: empty validation set");
  std::vector<double> conf;
  conf.reserve(validation.size());
  for (std::size_t i = 0; i < validation.size(); ++i) {
    const auto p = forward_capture(net, validation.sample(i)).softmax;
    conf.push_back(p[argmax(p)]);
  }
  std::sort(conf.begin(), conf.end());
  const double n = static_cast<double>(conf.size());

  // Candidate thresholds: each observed confidence, plus one above all of them.
  double best_t = 0.0;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < conf.size(); ++i) {
    if (i > 0 && conf[i] == conf[i - 1]) continue;
    const double coverage = static_cast<double>(conf.size() - i) / n;
    const double gap = std::abs(coverage - target_coverage);
    if (gap < best_gap) {
      best_gap = gap;
      best_t = conf[i];
    }
  }
  const double above = std::min(1.0, std::nextafter(conf.back(), 2.0));
  if (above > conf.back() && std::abs(target_coverage) < best_gap) best_t = above;
  return best_t;
}

}  // namespace epistemic
