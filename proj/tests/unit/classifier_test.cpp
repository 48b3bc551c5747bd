#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "epistemic/classifier.hpp"
#include "epistemic/eval.hpp"

namespace epistemic {
namespace {

// Two unit-variance 2-D blobs two sigma apart, with a small trained relu net.
struct Blobs {
  DataSplit data;
  LayeredNet net;
};

const Blobs& blobs() {
  static const Blobs b = [] {
    const std::vector<std::vector<double>> centers{{0.0, 0.0}, {3.0, 0.0}};
    DataSplit s = split(make_blobs(centers, 1.0, 300, 1), {0.6, 0.2, 0.2}, 2);
    LayeredNet net = make_network(2, std::vector<std::size_t>{6}, ActivationKind::relu, 2, 3);
    net = train(std::move(net), s.train, {40, 0.05, 16, 4});
    return Blobs{std::move(s), std::move(net)};
  }();
  return b;
}

EpistemicClassifier input_ball(double eps) {
  const auto& b = blobs();
  return EpistemicClassifier(b.net, {NeighborhoodSpec::ball(kInputLayer, eps)},
                             {build_layer_index(b.net, b.data.train, kInputLayer, MetricKind::euclidean)});
}

TEST(Justify, EmptySupportEmptiesJustification) {
  const std::vector<SupportSet> s{{0, {0}, {}}, {1, {}, {}}};
  EXPECT_TRUE(justify(s).empty());
}

TEST(Justify, UnionOfSupports) {
  const std::vector<SupportSet> s{{0, {0}, {}}, {1, {0, 1}, {}}};
  EXPECT_EQ(justify(s), (ClassSet{0, 1}));
}

TEST(Justify, RejectsEmptyList) { EXPECT_THROW(justify({}), std::invalid_argument); }

TEST(AssertKnowledge, Cases) {
  EXPECT_EQ(assert_knowledge(1, {1}), Assertion::ik);
  EXPECT_EQ(assert_knowledge(1, {0, 1}), Assertion::imk);
  EXPECT_EQ(assert_knowledge(1, {0}), Assertion::idk);
  EXPECT_EQ(assert_knowledge(1, {}), Assertion::idk);
}

TEST(Infer, FarFromDataIsIdk) {
  const auto v = input_ball(0.5).infer(std::vector<double>{50.0, -50.0});
  EXPECT_EQ(v.assertion, Assertion::idk);
  EXPECT_TRUE(v.justification.empty());
}

TEST(Infer, DeepInsideClassIsIk) {
  const auto v = input_ball(0.5).infer(std::vector<double>{-1.5, 0.0});
  EXPECT_EQ(v.belief, 0u);
  EXPECT_EQ(v.assertion, Assertion::ik);
}

TEST(Infer, OverlapIsImk) {
  const auto v = input_ball(0.5).infer(std::vector<double>{1.5, 0.0});
  EXPECT_EQ(v.justification, (ClassSet{0, 1}));
  EXPECT_EQ(v.assertion, Assertion::imk);
}

TEST(Infer, BeliefMatchesNetwork) {
  const auto ec = input_ball(0.5);
  const auto& test = blobs().data.test;
  for (std::size_t i = 0; i < test.size(); ++i) EXPECT_EQ(ec.infer(test.sample(i)).belief, predict(ec.net(), test.sample(i)));
}

TEST(Infer, LimitRadii) {
  const auto tiny = input_ball(1e-12);
  const auto huge = input_ball(1e18);
  const auto& test = blobs().data.test;
  for (std::size_t i = 0; i < test.size(); ++i) {
    EXPECT_EQ(tiny.infer(test.sample(i)).assertion, Assertion::idk);
    EXPECT_EQ(huge.infer(test.sample(i)).assertion, Assertion::imk);
  }
}

TEST(Classifier, RejectsMismatchedIndexes) {
  const auto& b = blobs();
  auto idx = build_layer_index(b.net, b.data.train, kInputLayer, MetricKind::euclidean);
  EXPECT_THROW(EpistemicClassifier(b.net, {NeighborhoodSpec::ball(0, 1.0)}, {idx}), std::invalid_argument);
  EXPECT_THROW(EpistemicClassifier(b.net, {}, {}), std::invalid_argument);
}

TEST(Selection, InteriorRadiusWins) {
  const auto& b = blobs();
  const std::vector<SharedIndex> idx{build_layer_index(b.net, b.data.train, kInputLayer, MetricKind::euclidean)};
  const std::vector<LayerId> layers{kInputLayer};
  SelectionConfig cfg;
  cfg.eps_grid = {1e-3, 0.017, 0.237, 3.162};
  cfg.relative_grid = false;
  const auto r = select_parameters(b.net, idx, layers, b.data.validation, cfg);
  ASSERT_EQ(r.evaluated.size(), 4u);
  EXPECT_EQ(r.evaluated.front().coverage, 0.0);
  EXPECT_GT(r.coverage, r.evaluated.back().coverage);
  const double chosen = *r.specs[0].eps;
  EXPECT_TRUE(chosen == 0.017 || chosen == 0.237) << chosen;
}

TEST(Selection, SingleCandidate) {
  const auto& b = blobs();
  const std::vector<SharedIndex> idx{build_layer_index(b.net, b.data.train, kInputLayer, MetricKind::euclidean)};
  const std::vector<LayerId> layers{kInputLayer};
  SelectionConfig cfg;
  cfg.eps_grid = {0.4};
  cfg.relative_grid = false;
  const auto r = select_parameters(b.net, idx, layers, b.data.validation, cfg);
  ASSERT_EQ(r.evaluated.size(), 1u);
  EXPECT_EQ(*r.specs[0].eps, 0.4);
}

TEST(Selection, CoverageMatchesIndependentTally) {
  const auto& b = blobs();
  const std::vector<SharedIndex> idx{build_layer_index(b.net, b.data.train, kInputLayer, MetricKind::euclidean),
                                     build_layer_index(b.net, b.data.train, b.net.logit_layer(), MetricKind::euclidean)};
  const std::vector<LayerId> layers{kInputLayer, b.net.logit_layer()};
  SelectionConfig cfg;
  cfg.eps_grid = {0.05, 0.2, 0.6, 1.5};
  cfg.relative_grid = false;
  const auto r = select_parameters(b.net, idx, layers, b.data.validation, cfg);
  ASSERT_EQ(r.evaluated.size(), 16u);
  const EpistemicClassifier base(b.net, r.specs, idx);
  double best = -1.0;
  std::vector<NeighborhoodSpec> best_specs;
  for (const auto& c : r.evaluated) {
    const auto ec = base.with_specs(c.specs);
    std::size_t ik = 0;
    for (std::size_t i = 0; i < b.data.validation.size(); ++i) {
      if (ec.infer(b.data.validation.sample(i)).assertion == Assertion::ik) ++ik;
    }
    const double f = static_cast<double>(ik) / static_cast<double>(b.data.validation.size());
    EXPECT_EQ(f, c.coverage);
    if (f > best) {
      best = f;
      best_specs = c.specs;
    }
  }
  EXPECT_EQ(best, r.coverage);
  EXPECT_EQ(best_specs, r.specs);
}

TEST(Selection, RejectsEmptyValidation) {
  const auto& b = blobs();
  const std::vector<SharedIndex> idx{build_layer_index(b.net, b.data.train, kInputLayer, MetricKind::euclidean)};
  const std::vector<LayerId> layers{kInputLayer};
  Dataset empty{Matrix(0, 2), {}, 2, DataRole::validation};
  EXPECT_THROW(select_parameters(b.net, idx, layers, empty, SelectionConfig{}), std::invalid_argument);
}

TEST(Propagation, IdentityKeepsRadius) {
  const LayeredNet net(2, {DenseLayer{Matrix::identity(2), {0, 0}, ActivationKind::relu},
                           DenseLayer{Matrix::identity(2), {0, 0}, ActivationKind::softmax}});
  const std::vector<LayerId> l{0};
  EXPECT_EQ(propagate_epsilon(net, 0.5, l), std::vector<double>{0.5});
}

TEST(Propagation, DiagonalScalesBySpectralNorm) {
  const LayeredNet net(2, {DenseLayer{Matrix{{3, 0}, {0, 1}}, {0, 0}, ActivationKind::relu},
                           DenseLayer{Matrix::identity(2), {0, 0}, ActivationKind::softmax}});
  const std::vector<LayerId> l{0};
  EXPECT_NEAR(propagate_epsilon(net, 0.1, l)[0], 0.3, 1e-9);
}

TEST(Propagation, ChainedIdentities) {
  const LayeredNet net(2, {DenseLayer{Matrix::identity(2), {0, 0}, ActivationKind::relu},
                           DenseLayer{Matrix::identity(2), {0, 0}, ActivationKind::relu},
                           DenseLayer{Matrix::identity(2), {0, 0}, ActivationKind::softmax}});
  const std::vector<LayerId> l{0, 1, 2};
  const auto eps = propagate_epsilon(net, 0.7, l);
  for (double e : eps) EXPECT_EQ(e, 0.7);
}

TEST(Propagation, RejectsInvalidInput) {
  const LayeredNet net = make_network(2, std::vector<std::size_t>{3}, ActivationKind::relu, 2, 5);
  const std::vector<LayerId> l{0};
  EXPECT_THROW(propagate_epsilon(net, 0.0, l), std::invalid_argument);
  const std::vector<LayerId> bad{1, 0};
  EXPECT_THROW(propagate_epsilon(net, 0.1, bad), std::invalid_argument);
}

TEST(WeightedMetricForLayer, IdentityGivesIdentity) {
  const LayeredNet net(2, {DenseLayer{Matrix::identity(2), {0, 0}, ActivationKind::linear},
                           DenseLayer{Matrix::identity(2), {0, 0}, ActivationKind::softmax}});
  const Matrix d = weighted_metric_for_layer(net, 0).matrix();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(d(i, j), i == j ? 1.0 : 0.0, 1e-12);
}

TEST(WeightedMetricForLayer, DiagonalDividesBySingularValues) {
  const LayeredNet net(2, {DenseLayer{Matrix{{2, 0}, {0, 1}}, {0, 0}, ActivationKind::linear},
                           DenseLayer{Matrix::identity(2), {0, 0}, ActivationKind::softmax}});
  const Matrix d = weighted_metric_for_layer(net, 0).matrix();
  EXPECT_NEAR(d(0, 0), 0.25, 1e-12);
  EXPECT_NEAR(d(1, 1), 1.0, 1e-12);
  EXPECT_NEAR(d(0, 1), 0.0, 1e-12);
}

TEST(WeightedMetricForLayer, RejectsWideningLayer) {
  const LayeredNet net = make_network(3, std::vector<std::size_t>{5}, ActivationKind::linear, 2, 6);
  EXPECT_THROW(weighted_metric_for_layer(net, 0), std::invalid_argument);
}

TEST(Baseline, ThresholdExtremes) {
  const auto& b = blobs();
  const auto& test = b.data.test;
  for (std::size_t i = 0; i < test.size(); ++i) {
    EXPECT_FALSE(softmax_baseline(b.net, test.sample(i), 0.0).abstain);
    const auto d = softmax_baseline(b.net, test.sample(i), 1.0);
    EXPECT_EQ(d.abstain, d.confidence < 1.0);
    EXPECT_EQ(d.belief, predict(b.net, test.sample(i)));
  }
  EXPECT_THROW(softmax_baseline(b.net, test.sample(0), 1.5), std::invalid_argument);
}

TEST(Baseline, CalibrationHitsTargetCoverage) {
  const auto& b = blobs();
  const auto& val = b.data.validation;
  const double t = calibrate_softmax_threshold(b.net, val, 0.6);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    if (!softmax_baseline(b.net, val.sample(i), t).abstain) ++kept;
  }
  EXPECT_NEAR(static_cast<double>(kept) / static_cast<double>(val.size()), 0.6, 0.05);
}

TEST(Build, IrisIndexesHiddenAndLogitLayers) {
  const std::filesystem::path dir(EPISTEMIC_DATA_DIR);
  const LayeredNet net = load_weights(dir / "iris_weights.json");
  const DataSplit s = split(load_csv(dir / "iris.csv", true), {0.5, 0.2, 0.3}, 1);
  BuildOptions opts;
  opts.layers = {1, net.logit_layer()};
  const auto r = build(net, s.train, s.validation, opts);
  const auto& idx = r.classifier.indexes();
  ASSERT_EQ(idx.size(), 2u);
  EXPECT_EQ(idx[0]->dim(), 5u);
  EXPECT_EQ(idx[1]->dim(), 3u);
  EXPECT_EQ(idx[0]->labels(), s.train.labels);
  EXPECT_EQ(r.classifier.layer_set(), opts.layers);
  EXPECT_EQ(default_layer_set(net), opts.layers);
}

TEST(Build, RejectsUntrainedNetwork) {
  const auto& b = blobs();
  LayeredNet zero = b.net;
  for (std::size_t l = 0; l < zero.layer_count(); ++l) {
    for (auto& w : zero.mutable_layer(l).weights.data()) w = 0.0;
    std::fill(zero.mutable_layer(l).bias.begin(), zero.mutable_layer(l).bias.end(), 0.0);
  }
  EXPECT_THROW(build(zero, b.data.train, b.data.validation, BuildOptions{}), std::invalid_argument);
  LayeredNet single(2, {DenseLayer{Matrix::identity(2), {0, 0}, ActivationKind::softmax}});
  EXPECT_EQ(default_layer_set(single), std::vector<LayerId>{0});
}

TEST(Grid, LogSpacedEndpoints) {
  const auto g = log_grid(1e-3, 1e3, 25);
  ASSERT_EQ(g.size(), 25u);
  EXPECT_DOUBLE_EQ(g.front(), 1e-3);
  EXPECT_DOUBLE_EQ(g.back(), 1e3);
  EXPECT_TRUE(std::is_sorted(g.begin(), g.end()));
}

}  // namespace
}  // namespace epistemic
