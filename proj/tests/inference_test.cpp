#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "pohar/inference.hpp"
#include "support/oracles.hpp"

using namespace pohar;
using namespace pohar::inference;

namespace {

Dataset separable() {
  Dataset d;
  for (int i = 0; i < 20; ++i) d.add({static_cast<double>(i), 5.0}, i < 10 ? "low" : "high");
  return d;
}

TrainSpec spec_of(ModelKind kind, std::size_t trees = 30) {
  TrainSpec s;
  s.kind = kind;
  s.n_trees = trees;
  return s;
}

}  // namespace

TEST(Train, SeparableDataGivesDepthOneTree) {
  auto m = train(separable(), spec_of(ModelKind::DecisionTree), 1);
  ASSERT_EQ(m.trees.size(), 1u);
  const auto& t = m.trees[0];
  EXPECT_EQ(t.depth(), 1u);
  EXPECT_EQ(t.nodes[0].feature, 0);
  EXPECT_DOUBLE_EQ(t.nodes[0].threshold, 9.5);
  EXPECT_EQ(accuracy(m, separable()), 1.0);
  std::vector<double> x{9.5, 5.0};
  EXPECT_EQ(predicted_label(m, x), "low");  // equality goes left
}

TEST(Train, ForestIsUnanimousOnSeparableData) {
  auto m = train(separable(), spec_of(ModelKind::RandomForest), 2);
  EXPECT_EQ(m.trees.size(), 30u);
  std::vector<double> lo{0.0, 5.0}, hi{19.0, 5.0};
  EXPECT_EQ(predicted_label(m, lo), "low");
  EXPECT_EQ(predicted_label(m, hi), "high");
}

TEST(Train, NaiveBayesMomentsAreCloseToTruth) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> a(2.0, 1.0), b(-3.0, 2.0);
  Dataset d;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    d.add({a(rng)}, "a");
    d.add({b(rng)}, "b");
  }
  auto m = train(d, spec_of(ModelKind::GaussianNB), 0);
  ASSERT_EQ(m.classes.size(), 2u);
  EXPECT_NEAR(m.classes[0].mean[0], 2.0, 3.0 * 1.0 / std::sqrt(n));
  EXPECT_NEAR(m.classes[1].mean[0], -3.0, 3.0 * 2.0 / std::sqrt(n));
  EXPECT_NEAR(m.classes[0].variance[0], 1.0, 0.15);
  EXPECT_NEAR(m.classes[1].variance[0], 4.0, 0.6);
  EXPECT_DOUBLE_EQ(m.classes[0].prior, 0.5);
}

TEST(Train, ConstantFeatureGetsVarianceFloor) {
  Dataset d;
  for (int i = 0; i < 4; ++i) d.add({1.0, static_cast<double>(i)}, i % 2 ? "x" : "y");
  auto m = train(d, spec_of(ModelKind::GaussianNB), 0);
  EXPECT_GE(m.classes[0].variance[0], 1e-9);
  EXPECT_TRUE(std::isfinite(predict(m, std::vector<double>{1.0, 0.0}).scores[0]));
}

TEST(Train, SingleTreeForestEqualsTree) {
  auto data = oracle::gaussian_benchmark(4, 40, 8, 3, 3.0, 9);
  auto dt = train(data, spec_of(ModelKind::DecisionTree), 3);
  auto rf = train(data, spec_of(ModelKind::RandomForest, 1), 3);
  EXPECT_EQ(dt.trees, rf.trees);
}

TEST(Train, DeterministicUnderSeed) {
  auto data = oracle::gaussian_benchmark(3, 50, 6, 2, 3.0, 4);
  EXPECT_EQ(train(data, spec_of(ModelKind::RandomForest), 8), train(data, spec_of(ModelKind::RandomForest), 8));
  EXPECT_NE(train(data, spec_of(ModelKind::RandomForest), 8).trees,
            train(data, spec_of(ModelKind::RandomForest), 9).trees);
}

TEST(Train, RejectsDegenerateInput) {
  Dataset one;
  one.add({1.0}, "only");
  one.add({2.0}, "only");
  EXPECT_THROW(train(one, spec_of(ModelKind::DecisionTree), 0), InferenceError);
  Dataset empty;
  EXPECT_THROW(train(empty, spec_of(ModelKind::DecisionTree), 0), InferenceError);
  Dataset ragged;
  ragged.add({1.0, 2.0}, "a");
  ragged.add({1.0}, "b");
  EXPECT_THROW(train(ragged, spec_of(ModelKind::DecisionTree), 0), InferenceError);
}

TEST(Predict, RejectsWrongDimension) {
  auto m = train(separable(), spec_of(ModelKind::DecisionTree), 1);
  EXPECT_THROW(predict(m, std::vector<double>{1.0}), InferenceError);
}

TEST(Predict, TreesMatchOracleWalk) {
  auto data = oracle::gaussian_benchmark(5, 60, 10, 4, 1.0, 21);
  std::mt19937_64 rng(22);
  std::normal_distribution<double> g(0.0, 3.0);
  for (auto kind : {ModelKind::DecisionTree, ModelKind::RandomForest}) {
    auto m = train(data, spec_of(kind), 23);
    for (int i = 0; i < 1000; ++i) {
      std::vector<double> x(10);
      for (auto& v : x) v = g(rng);
      ASSERT_EQ(predict(m, x).label, oracle::tree_predict(m, x));
    }
  }
}

TEST(Predict, NaiveBayesMatchesOracle) {
  auto data = oracle::gaussian_benchmark(4, 50, 6, 3, 1.5, 31);
  auto m = train(data, spec_of(ModelKind::GaussianNB), 0);
  std::mt19937_64 rng(32);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> x(6);
    for (auto& v : x) v = g(rng);
    ASSERT_EQ(predict(m, x).label, oracle::nb_predict(m, x));
  }
}

TEST(Predict, HistogramTieGoesToLowerIndex) {
  ModelBundle m;
  m.kind = ModelKind::DecisionTree;
  m.labels = {"a", "b"};
  m.feature_dim = 1;
  TreeNode leaf;
  leaf.histogram = {3, 3};
  m.trees.push_back(Tree{{leaf}});
  EXPECT_EQ(predict(m, std::vector<double>{0.0}).label, 0u);
}

TEST(Aggregate, MeanOfMembers) {
  std::vector<std::vector<double>> one{{1.0, 2.0}};
  EXPECT_EQ(aggregate(one), (std::vector<double>{1.0, 2.0}));
  std::vector<std::vector<double>> two{{1.0, 2.0}, {3.0, 6.0}};
  EXPECT_EQ(aggregate(two), (std::vector<double>{2.0, 4.0}));
  std::vector<std::vector<double>> none;
  EXPECT_THROW(aggregate(none), InferenceError);
}

TEST(Serialize, RoundTripsEveryKind) {
  auto data = oracle::gaussian_benchmark(3, 30, 5, 2, 2.0, 41);
  for (auto kind : {ModelKind::DecisionTree, ModelKind::RandomForest, ModelKind::GaussianNB}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto m = train(data, spec_of(kind, 7), seed);
      Bytes b = serialize(m);
      EXPECT_EQ(std::string(b.begin(), b.begin() + 8), "POHARMDL");
      EXPECT_EQ(deserialize(b), m);
    }
  }
}

TEST(Serialize, RejectsCorruptInput) {
  auto m = train(separable(), spec_of(ModelKind::DecisionTree), 1);
  Bytes b = serialize(m);
  EXPECT_THROW(deserialize(Bytes{}), DecodeError);
  Bytes bad_version = b;
  bad_version[9] = 2;
  EXPECT_THROW(deserialize(bad_version), DecodeError);
  Bytes bad_magic = b;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize(bad_magic), DecodeError);
  for (std::size_t cut = 0; cut < b.size(); ++cut) {
    EXPECT_THROW(deserialize(std::span(b).first(cut)), DecodeError) << cut;
  }
  Bytes trailing = b;
  trailing.push_back(0);
  EXPECT_THROW(deserialize(trailing), DecodeError);
}

TEST(Serialize, FileRoundTrip) {
  auto m = train(separable(), spec_of(ModelKind::RandomForest, 5), 1);
  auto path = std::filesystem::temp_directory_path() / "pohar_inference_test_model.bin";
  save_model(m, path);
  EXPECT_EQ(load_model(path), m);
  std::filesystem::remove(path);
}

TEST(Csv, RoundTrip) {
  auto data = oracle::gaussian_benchmark(3, 10, 4, 2, 2.0, 51);
  std::stringstream ss;
  write_csv(data, ss);
  std::string header;
  std::getline(std::istringstream(ss.str()), header);
  EXPECT_EQ(header, "f0,f1,f2,f3,label");
  auto back = read_csv(ss);
  EXPECT_EQ(back.features, data.features);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back.label_names[back.labels[i]], data.label_names[data.labels[i]]);
  }
}

TEST(Csv, RejectsCorruptRows) {
  std::istringstream short_row("f0,f1,label\n1.0,a\n");
  EXPECT_THROW(read_csv(short_row), DecodeError);
  std::istringstream junk("f0,label\nabc,a\n");
  EXPECT_THROW(read_csv(junk), DecodeError);
  std::istringstream no_header("");
  EXPECT_THROW(read_csv(no_header), DecodeError);
}

TEST(SplitHoldout, PartitionsRows) {
  auto data = oracle::gaussian_benchmark(2, 50, 3, 1, 2.0, 61);
  auto [tr, ho] = split_holdout(data, 0.2, 7);
  EXPECT_EQ(tr.size() + ho.size(), data.size());
  EXPECT_EQ(ho.size(), 20u);
  auto [tr2, ho2] = split_holdout(data, 0.2, 7);
  EXPECT_EQ(ho.features, ho2.features);
}

TEST(Benchmark, TreeAndForestAccuracy) {
  auto data = oracle::gaussian_benchmark(5, 200, 16, 6, 3.0, 71);
  auto [tr, ho] = split_holdout(data, 0.25, 72);
  auto dt = train(tr, spec_of(ModelKind::DecisionTree), 73);
  auto rf = train(tr, spec_of(ModelKind::RandomForest), 73);
  EXPECT_GE(accuracy(dt, ho), 0.90);
  EXPECT_GE(accuracy(rf, ho), accuracy(dt, ho) - 0.01);
}
