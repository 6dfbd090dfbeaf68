#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "pohar/sensing.hpp"
#include "support/oracles.hpp"

using namespace pohar::sensing;

namespace {

Scenario two_rooms() {
  Scenario s;
  s.rooms = {Room{"a", 0, 0, 6, 5}, Room{"b", 6, 0, 12, 5}};
  s.sensors = {{1, {1, 1}}, {2, {2, 4}}, {3, {4, 2}}, {4, {8, 1}}, {5, {10, 4}}};
  s.labels = default_labels();
  s.duration_s = 120;
  return s;
}

SensorWindow window_of(std::array<std::vector<double>, kChannels> ch) {
  SensorWindow w;
  w.sample_period_s = 1.0;
  w.channels = std::move(ch);
  return w;
}

}  // namespace

TEST(Scenario, JsonRoundTrip) {
  Scenario s = two_rooms();
  s.activities.push_back(Activity{"cooking", {2, 2}, 3, 50, activity_profile("cooking")});
  s.theta = 2.5;
  Scenario back = scenario_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
  EXPECT_EQ(back.theta, 2.5);
}

TEST(Scenario, InvalidGeometryRejected) {
  Scenario s = two_rooms();
  s.sensors.push_back({9, {20, 20}});
  EXPECT_THROW(s.validate(), ConfigError);
  Scenario d = two_rooms();
  d.diffusion.decay_length_m = 0;
  EXPECT_THROW(d.validate(), ConfigError);
  Scenario l = two_rooms();
  l.activities.push_back(Activity{"juggling", {1, 1}, 0, 10, {}});
  EXPECT_THROW(l.validate(), ConfigError);
  EXPECT_THROW(scenario_from_json(nlohmann::json{{"rooms", 3}}), ConfigError);
}

TEST(Scenario, WallsCrossed) {
  Scenario s = two_rooms();
  EXPECT_EQ(walls_crossed(s, {1, 1}, {4, 4}), 0);
  EXPECT_EQ(walls_crossed(s, {1, 1}, {10, 1}), 1);
  EXPECT_EQ(walls_crossed(s, {1, 1}, {1, 1}), 0);
}

TEST(Generate, NoActivitiesIsBaselinePlusNoise) {
  Scenario s = two_rooms();
  s.noise_sigma = {0, 0, 0, 0, 0};
  Measurements m = generate(s, 3, 30);
  for (const auto& stream : m.series) {
    for (const auto& v : stream) EXPECT_EQ(v, s.baseline);
  }
}

TEST(Generate, DecayLawGivesEFactorAtOneLambda) {
  Scenario s;
  s.rooms = {Room{"hall", 0, 0, 40, 4}};
  s.sensors = {{1, {2, 2}}, {2, {2 + s.diffusion.decay_length_m, 2}}};
  s.labels = default_labels();
  Activity a{"cooking", {2, 2}, 0, 1000, activity_profile("cooking")};
  s.activities = {a};
  s.validate();
  for (double t : {10.0, 100.0, 400.0}) {
    auto near = activity_increment(s, a, s.sensors[0].pos, t);
    auto far = activity_increment(s, a, s.sensors[1].pos, t);
    for (std::size_t c = 0; c < kChannels; ++c) EXPECT_NEAR(near[c] / far[c], std::exp(1.0), 1e-12);
  }
}

TEST(Generate, WallAttenuation) {
  Scenario s = two_rooms();
  Activity a{"cooking", {5, 2}, 0, 1000, activity_profile("cooking")};
  s.activities = {a};
  auto same = activity_increment(s, a, {5, 3}, 500);
  auto other = activity_increment(s, a, {7, 2}, 500);  // 2 m away, one wall
  double expected = s.diffusion.wall_factor * std::exp(-(2.0 - 1.0) / s.diffusion.decay_length_m);
  EXPECT_NEAR(other[CO2] / same[CO2], expected, 1e-12);
}

TEST(Generate, SameSeedSameStreams) {
  Scenario s = two_rooms();
  s.activities.push_back(Activity{"smoking", {3, 3}, 10, 40, activity_profile("smoking")});
  auto a = generate(s, 17, 90);
  auto b = generate(s, 17, 90);
  auto c = generate(s, 18, 90);
  EXPECT_EQ(a.series, b.series);
  EXPECT_NE(a.series, c.series);
  std::ostringstream oa, ob;
  a.write_csv(oa);
  b.write_csv(ob);
  EXPECT_EQ(oa.str(), ob.str());
  EXPECT_EQ(oa.str().substr(0, oa.str().find('\n')), "time_s,sensor_id,co2,voc,pm25,rh,temp");
}

TEST(Generate, PollutantsNeverNegative) {
  Scenario s = two_rooms();
  s.baseline = {0, 0, 0, 0, 0};
  auto m = generate(s, 1, 60);
  for (const auto& stream : m.series) {
    for (const auto& v : stream) {
      for (std::size_t c = 0; c < Temperature; ++c) EXPECT_GE(v[c], 0.0);
    }
  }
}

TEST(GroundTruth, StrongestActivityInOwnRoom) {
  Scenario s = two_rooms();
  s.activities = {Activity{"cooking", {1, 1}, 0, 100, activity_profile("cooking")},
                  Activity{"cleaning", {5, 4}, 0, 100, activity_profile("cleaning")},
                  Activity{"smoking", {9, 2}, 50, 100, activity_profile("smoking")}};
  EXPECT_EQ(ground_truth_label(s, 1, 10), "cooking");
  EXPECT_EQ(ground_truth_label(s, 3, 10), "cleaning");
  EXPECT_EQ(ground_truth_label(s, 4, 10), "idle");
  EXPECT_EQ(ground_truth_label(s, 4, 60), "smoking");
  EXPECT_EQ(ground_truth_label(s, 1, 100), "idle");
}

TEST(Embed, ConstantWindowHasZeroSpreadAndSlope) {
  std::array<std::vector<double>, kChannels> ch;
  for (std::size_t c = 0; c < kChannels; ++c) ch[c].assign(60, 400.0 + 13.7 * static_cast<double>(c));
  EmbeddingConfig cfg;
  cfg.dim = 20;
  Embedding e = embed(window_of(ch), cfg);
  ASSERT_EQ(e.vector.size(), 20u);
  for (std::size_t c = 0; c < kChannels; ++c) {
    EXPECT_DOUBLE_EQ(e.vector[4 * c], ch[c][0] / cfg.channel_scale[c]);
    EXPECT_EQ(e.vector[4 * c + 1], 0.0);
    EXPECT_EQ(e.vector[4 * c + 2], 0.0);
    EXPECT_EQ(e.vector[4 * c + 3], 0.0);
  }
}

TEST(Embed, IdenticalWindowsIdenticalVectors) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0, 1);
  std::array<std::vector<double>, kChannels> ch;
  for (auto& v : ch)
    for (int i = 0; i < 60; ++i) v.push_back(100 + g(rng));
  auto a = embed(window_of(ch));
  auto b = embed(window_of(ch));
  EXPECT_EQ(a.vector, b.vector);
  EXPECT_EQ(oracle::euclid(a.vector, b.vector), 0.0);
  EXPECT_EQ(a.vector.size(), 16u);
}

TEST(Embed, SlopeMatchesLeastSquares) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0, 3);
  EmbeddingConfig cfg;
  cfg.dim = 20;
  for (int trial = 0; trial < 20; ++trial) {
    std::array<std::vector<double>, kChannels> ch;
    std::vector<double> t;
    for (int i = 0; i < 60; ++i) t.push_back(i);
    const double coef = 0.37 * trial - 2.0;
    for (std::size_t c = 0; c < kChannels; ++c) {
      for (int i = 0; i < 60; ++i) ch[c].push_back(50 + coef * i + (trial % 2 ? g(rng) : 0.0));
    }
    Embedding e = embed(window_of(ch), cfg);
    for (std::size_t c = 0; c < kChannels; ++c) {
      std::vector<double> scaled;
      for (double v : ch[c]) scaled.push_back(v / cfg.channel_scale[c]);
      double expected = oracle::ls_slope(t, scaled);
      EXPECT_NEAR(e.vector[4 * c + 2], expected, 1e-9);
      if (trial % 2 == 0) EXPECT_NEAR(e.vector[4 * c + 2], coef / cfg.channel_scale[c], 1e-9);
    }
  }
}

TEST(Embed, ShortWindowIsInsufficient) {
  std::array<std::vector<double>, kChannels> ch;
  for (auto& v : ch) v.assign(10, 1.0);
  EXPECT_THROW(embed(window_of(ch)), InsufficientData);
}

TEST(Embed, InRoomSensorsCloserThanAcrossWall) {
  Scenario s = two_rooms();
  s.activities = {Activity{"cooking", {3, 2.5}, 0, 200, activity_profile("cooking")}};
  double same = 0, cross = 0;
  const int seeds = 30;
  for (int seed = 0; seed < seeds; ++seed) {
    auto m = generate(s, seed, 60);
    auto e1 = embed(m.window(0, 60, 60));
    auto e2 = embed(m.window(1, 60, 60));
    auto e4 = embed(m.window(3, 60, 60));
    same += oracle::euclid(e1.vector, e2.vector);
    cross += oracle::euclid(e1.vector, e4.vector);
  }
  EXPECT_LT(same / seeds, cross / seeds);
}

TEST(Corpus, LabeledWindowsCoverBothActivities) {
  Scenario s = two_rooms();
  s.activities = {Activity{"cooking", {3, 2.5}, 0, 200, activity_profile("cooking")},
                  Activity{"cleaning", {9, 2.5}, 0, 200, activity_profile("cleaning")}};
  auto m = generate(s, 2, 120);
  auto samples = labeled_windows(s, m, EmbeddingConfig{}, 30);
  std::set<std::string> labels;
  for (const auto& x : samples) labels.insert(x.label);
  EXPECT_TRUE(labels.contains("cooking"));
  EXPECT_TRUE(labels.contains("cleaning"));
  EXPECT_EQ(samples.size(), 3u * s.sensors.size());
}

TEST(Corpus, TrainingCorpusIsDeterministic) {
  Scenario s = two_rooms();
  auto a = training_corpus(s, 5, 9, EmbeddingConfig{});
  auto b = training_corpus(s, 5, 9, EmbeddingConfig{});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].features, b[i].features);
    EXPECT_EQ(a[i].label, b[i].label);
  }
}
