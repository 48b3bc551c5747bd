#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "epistemic/eval.hpp"

namespace epistemic {
namespace {

Dataset iris() { return load_csv(std::filesystem::path(EPISTEMIC_DATA_DIR) / "iris.csv", true); }

TEST(Acm, AccumulatePlacesVerdictInItsBlock) {
  AugConfusionMatrix acm(3);
  EpistemicVerdict v;
  v.belief = 2;
  v.assertion = Assertion::imk;
  acm.accumulate(v, 1);
  EXPECT_EQ(acm.count(Assertion::imk, 2, 1), 1u);
  EXPECT_EQ(acm.total(), 1u);
  EXPECT_EQ(acm.block_total(Assertion::ik), 0u);
}

TEST(Acm, HandTally) {
  // (assertion, predicted, truth) for twenty verdicts over two classes.
  struct Row {
    Assertion a;
    std::size_t p, t;
  };
  const std::vector<Row> rows{{Assertion::ik, 0, 0},  {Assertion::ik, 0, 0},  {Assertion::ik, 1, 1},
                              {Assertion::ik, 1, 1},  {Assertion::ik, 1, 1},  {Assertion::ik, 0, 1},
                              {Assertion::ik, 1, 0},  {Assertion::ik, 0, 0},  {Assertion::imk, 0, 0},
                              {Assertion::imk, 0, 1}, {Assertion::imk, 1, 1}, {Assertion::imk, 1, 0},
                              {Assertion::imk, 1, 1}, {Assertion::idk, 0, 1}, {Assertion::idk, 1, 0},
                              {Assertion::idk, 1, 0}, {Assertion::idk, 0, 0}, {Assertion::idk, 1, 1},
                              {Assertion::idk, 0, 1}, {Assertion::idk, 1, 1}};
  AugConfusionMatrix acm(2);
  for (const auto& r : rows) acm.add(r.a, r.p, r.t);
  EXPECT_EQ(acm.total(), 20u);
  EXPECT_EQ(acm.block_total(Assertion::ik), 8u);
  EXPECT_EQ(acm.block_total(Assertion::imk), 5u);
  EXPECT_EQ(acm.block_total(Assertion::idk), 7u);
  EXPECT_EQ(acm.block_diagonal(Assertion::ik), 6u);
  EXPECT_EQ(acm.count(Assertion::ik, 0, 0), 3u);
  EXPECT_EQ(acm.count(Assertion::idk, 1, 0), 2u);
  EXPECT_EQ(acm.count(Assertion::idk, 0, 1), 2u);
  const auto m = metrics_from(acm);
  EXPECT_EQ(m.f_ik, 0.4);
  EXPECT_EQ(m.f_imk, 0.25);
  EXPECT_EQ(m.f_ik + m.f_imk + m.f_idk, 1.0);
  EXPECT_EQ(*m.a_ik, 0.75);
}

TEST(Metrics, TenVerdictExample) {
  AugConfusionMatrix acm(2);
  for (int i = 0; i < 4; ++i) acm.add(Assertion::ik, 0, 0);
  for (int i = 0; i < 2; ++i) acm.add(Assertion::ik, 1, 0);
  for (int i = 0; i < 2; ++i) acm.add(Assertion::imk, 1, 1);
  acm.add(Assertion::idk, 0, 0);
  acm.add(Assertion::idk, 0, 1);
  const auto m = metrics_from(acm);
  EXPECT_EQ(m.f_ik, 0.6);
  EXPECT_EQ(m.f_imk, 0.2);
  EXPECT_EQ(m.f_ik + m.f_imk + m.f_idk, 1.0);
  EXPECT_DOUBLE_EQ(*m.a_ik, 2.0 / 3.0);
  EXPECT_EQ(*m.a_not_ik, 0.75);
}

TEST(Metrics, EmptyRegionsAreNull) {
  AugConfusionMatrix acm(2);
  acm.add(Assertion::idk, 0, 0);
  auto m = metrics_from(acm);
  EXPECT_FALSE(m.a_ik.has_value());
  EXPECT_EQ(*m.a_not_ik, 1.0);
  EXPECT_EQ(m.f_idk, 1.0);

  AugConfusionMatrix ik_only(2);
  ik_only.add(Assertion::ik, 1, 0);
  m = metrics_from(ik_only);
  EXPECT_FALSE(m.a_not_ik.has_value());
  EXPECT_EQ(*m.a_ik, 0.0);
  EXPECT_EQ(m.f_idk, 0.0);

  EXPECT_THROW(metrics_from(AugConfusionMatrix(2)), std::invalid_argument);
}

TEST(Metrics, PartitionIsExactForAllSmallCounts) {
  for (std::size_t n = 1; n <= 60; ++n) {
    for (std::size_t ik = 0; ik <= n; ++ik) {
      for (std::size_t imk = 0; ik + imk <= n; ++imk) {
        AugConfusionMatrix acm(1);
        for (std::size_t i = 0; i < ik; ++i) acm.add(Assertion::ik, 0, 0);
        for (std::size_t i = 0; i < imk; ++i) acm.add(Assertion::imk, 0, 0);
        for (std::size_t i = ik + imk; i < n; ++i) acm.add(Assertion::idk, 0, 0);
        const auto m = metrics_from(acm);
        ASSERT_EQ(m.f_ik + m.f_imk + m.f_idk, 1.0) << n << " " << ik << " " << imk;
      }
    }
  }
}

TEST(Acm, MergeIsOrderIndependent) {
  AugConfusionMatrix a(2), b(2), c(2);
  a.add(Assertion::ik, 0, 0);
  b.add(Assertion::imk, 1, 0);
  b.add(Assertion::idk, 1, 1);
  c.add(Assertion::ik, 1, 1);
  AugConfusionMatrix abc = a, cba = c;
  abc.merge(b);
  abc.merge(c);
  cba.merge(b);
  cba.merge(a);
  for (Assertion s : {Assertion::ik, Assertion::imk, Assertion::idk})
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t t = 0; t < 2; ++t) EXPECT_EQ(abc.count(s, p, t), cba.count(s, p, t));
  EXPECT_THROW(a.merge(AugConfusionMatrix(3)), std::invalid_argument);
  EXPECT_THROW(a.add(Assertion::ik, 2, 0), std::out_of_range);
}

TEST(Perturb, ZeroMagnitudeIsIdentity) {
  const Dataset d = iris();
  const auto stats = feature_stats(d.features);
  for (auto kind : {PerturbationKind::gaussian, PerturbationKind::uniform, PerturbationKind::large_uniform}) {
    const Dataset p = perturb(d, {kind, 0.0, 3}, stats);
    EXPECT_EQ(p.features, d.features);
  }
}

TEST(Perturb, LargeUniformStaysWithinRangeFraction) {
  const Dataset d = iris();
  const auto stats = feature_stats(d.features);
  const Dataset p = perturb(d, {PerturbationKind::large_uniform, 0.5, 4}, stats);
  EXPECT_NE(p.features, d.features);
  EXPECT_EQ(p.labels, d.labels);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.dim(); ++j) {
      EXPECT_LE(std::abs(p.features(i, j) - d.features(i, j)), 0.5 * (stats.max[j] - stats.min[j]) + 1e-12);
    }
  }
}

TEST(Perturb, SameSeedIsBitIdentical) {
  const Dataset d = iris();
  const auto stats = feature_stats(d.features);
  const PerturbationSpec spec{PerturbationKind::gaussian, 0.3, 5};
  EXPECT_EQ(perturb(d, spec, stats).features, perturb(d, spec, stats).features);
  PerturbationSpec other = spec;
  other.seed = 6;
  EXPECT_NE(perturb(d, spec, stats).features, perturb(d, other, stats).features);
}

TEST(Perturb, BimNeedsNetwork) {
  const Dataset d = iris();
  EXPECT_THROW(perturb(d, {PerturbationKind::bim, 0.1, 0}, feature_stats(d.features)), std::invalid_argument);
}

TEST(Perturb, ParseSpec) {
  const auto s = parse_perturbation("large_uniform:0.5");
  EXPECT_EQ(s.kind, PerturbationKind::large_uniform);
  EXPECT_EQ(s.magnitude, 0.5);
  EXPECT_THROW(parse_perturbation("pink:0.1"), std::invalid_argument);
  EXPECT_THROW(parse_perturbation("gaussian"), std::invalid_argument);
  EXPECT_THROW(parse_perturbation("gaussian:-1"), std::invalid_argument);
}

TEST(Standardize, FoldedNetworkMatchesStandardizedInputs) {
  const Dataset d = iris();
  const auto stats = feature_stats(d.features);
  const Dataset z = standardize(d, stats);
  const LayeredNet net = make_network(4, std::vector<std::size_t>{5}, ActivationKind::relu, 3, 7);
  const LayeredNet folded = fold_standardization(net, stats);
  for (std::size_t i = 0; i < d.size(); i += 5) {
    const auto a = forward_capture(net, z.sample(i)).activations.back();
    const auto b = forward_capture(folded, d.sample(i)).activations.back();
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-10);
  }
}

TEST(Sweep, MonotoneAndExactPartition) {
  const std::vector<std::vector<double>> centers{{0.0, 0.0}, {2.0, 0.0}};
  const DataSplit s = split(make_blobs(centers, 1.0, 200, 8), {0.6, 0.2, 0.2}, 9);
  const LayeredNet net = train(make_network(2, std::vector<std::size_t>{4}, ActivationKind::relu, 2, 10), s.train,
                               {20, 0.05, 16, 11});
  const EpistemicClassifier ec(net, {NeighborhoodSpec::ball(kInputLayer, 1.0)},
                               {build_layer_index(net, s.train, kInputLayer, MetricKind::euclidean)});
  const auto grid = log_grid(1e-3, 1e2, 15);
  const auto rows = epsilon_sweep(ec, s.test, grid);
  ASSERT_EQ(rows.size(), grid.size());
  EXPECT_EQ(rows.front().metrics.f_idk, 1.0);
  EXPECT_EQ(rows.back().metrics.f_imk, 1.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& m = rows[i].metrics;
    EXPECT_EQ(m.f_ik + m.f_imk + m.f_idk, 1.0);
    if (i > 0) {
      EXPECT_GT(rows[i].eps, rows[i - 1].eps);
      EXPECT_GE(m.f_imk, rows[i - 1].metrics.f_imk);
    }
  }
  const std::string csv = sweep_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epsilon,f_ik,f_imk,f_idk,a_ik,a_not_ik");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(rows.size() + 1));
  EXPECT_NE(csv.find("null"), std::string::npos);
}

TEST(Blobs, ZeroSigmaSitsOnCenters) {
  const std::vector<std::vector<double>> centers{{1.0, 2.0}, {-3.0, 0.5}};
  const Dataset d = make_blobs(centers, 0.0, 10, 1);
  ASSERT_EQ(d.size(), 20u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(d.features(i, 0), centers[d.labels[i]][0]);
    EXPECT_EQ(d.features(i, 1), centers[d.labels[i]][1]);
  }
}

TEST(Blobs, SampleSpreadMatchesSigma) {
  const std::vector<std::vector<double>> centers{{0.0, 0.0}, {10.0, 0.0}};
  const Dataset d = make_blobs(centers, 0.5, 2000, 2);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t j = 0; j < 2; ++j) {
      double sum = 0.0, sq = 0.0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.labels[i] != c) continue;
        const double v = d.features(i, j) - centers[c][j];
        sum += v;
        sq += v * v;
        ++n;
      }
      const double mean = sum / static_cast<double>(n);
      EXPECT_NEAR(std::sqrt(sq / static_cast<double>(n) - mean * mean), 0.5, 0.05);
    }
  }
}

TEST(Blobs, FarCentersAreSeparable) {
  const std::vector<std::vector<double>> centers{{0.0, 0.0}, {10.0, 0.0}};
  const Dataset d = make_blobs(centers, 0.5, 200, 3);
  const LayeredNet net =
      train(make_network(2, std::vector<std::size_t>{4}, ActivationKind::relu, 2, 4), d, {30, 0.05, 16, 5});
  EXPECT_GE(accuracy(net, d), 0.99);
}

TEST(Csv, ParsesSmallFixture) {
  std::istringstream in("a,b,label\n1.5,2,0\n-1,0.25,1\n3,4,0\n");
  const Dataset d = parse_csv(in, true);
  EXPECT_EQ(d.features, (Matrix{{1.5, 2}, {-1, 0.25}, {3, 4}}));
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{0, 1, 0}));
  EXPECT_EQ(d.class_count, 2u);
}

TEST(Csv, ErrorsNameTheLine) {
  auto message = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_csv(in, false);
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("1,2,0\n1,0\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("1,2,0\n1,x,1\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("1,2,0\n1,2,2\n").find("label 1"), std::string::npos);
  EXPECT_FALSE(message("").empty());
}

TEST(Split, SizesAndDeterminism) {
  const Dataset d = iris();
  const DataSplit s = split(d, {0.6, 0.2, 0.2}, 1);
  EXPECT_EQ(s.train.size(), 90u);
  EXPECT_EQ(s.validation.size(), 30u);
  EXPECT_EQ(s.test.size(), 30u);
  EXPECT_EQ(s.test.role, DataRole::test);
  const DataSplit again = split(d, {0.6, 0.2, 0.2}, 1);
  EXPECT_EQ(s.train.features, again.train.features);
  EXPECT_THROW(split(d, {0.6, 0.2, 0.3}, 1), std::invalid_argument);
}

TEST(Split, IsStratified) {
  const DataSplit s = split(iris(), {0.6, 0.2, 0.2}, 2);
  for (const Dataset* part : {&s.train, &s.validation, &s.test}) {
    std::vector<std::size_t> counts(3, 0);
    for (auto l : part->labels) ++counts[l];
    EXPECT_EQ(counts[0], counts[1]);
    EXPECT_EQ(counts[1], counts[2]);
  }
}

TEST(Format, AcmJsonLayout) {
  AugConfusionMatrix acm(2);
  acm.add(Assertion::ik, 0, 0);
  acm.add(Assertion::idk, 1, 0);
  const auto doc = nlohmann::json::parse(acm_json(acm));
  EXPECT_EQ(doc["orientation"], "rows=predicted,cols=true");
  EXPECT_EQ(doc["blocks"]["IDK"][1][0u], 1);
  EXPECT_EQ(doc["metrics"]["f_ik"], 0.5);
  EXPECT_TRUE(doc["metrics"]["a_not_ik"].is_number());
  EXPECT_EQ(doc["metrics"]["samples"], 2);
  EXPECT_NE(acm_text(acm).find("F_IK=0.5"), std::string::npos);
}

TEST(Format, NumbersRoundTrip) {
  EXPECT_EQ(format_number(std::nullopt), "null");
  for (double v : {0.1, 1.0 / 3.0, 2.0 / 3.0, 1e-300, 0.0}) EXPECT_EQ(std::stod(format_number(v)), v);
}

}  // namespace
}  // namespace epistemic
