#include "pohar/sensing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <set>

#include <fmt/format.h>

namespace pohar::sensing {

namespace {

constexpr std::array<const char*, kChannels> kChannelKeys{"co2", "voc", "pm25", "rh", "temp"};

ChannelValues channels_from_json(const nlohmann::json& j, const char* what) {
  ChannelValues v{};
  if (j.is_array()) {
    if (j.size() != kChannels) throw ConfigError(fmt::format("{} needs {} values", what, kChannels));
    for (std::size_t c = 0; c < kChannels; ++c) v[c] = j[c].get<double>();
    return v;
  }
  if (!j.is_object()) throw ConfigError(fmt::format("{} must be an object or array", what));
  for (std::size_t c = 0; c < kChannels; ++c) {
    if (!j.contains(kChannelKeys[c])) {
      throw ConfigError(fmt::format("{} is missing channel '{}'", what, kChannelKeys[c]));
    }
    v[c] = j.at(kChannelKeys[c]).get<double>();
  }
  return v;
}

nlohmann::json channels_to_json(const ChannelValues& v) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t c = 0; c < kChannels; ++c) j[kChannelKeys[c]] = v[c];
  return j;
}

// Parameter interval of the segment a->b inside the rectangle; empty if the
// intersection has no length.
bool clip_segment(const Room& r, Point a, Point b, double& t0, double& t1) {
  t0 = 0.0;
  t1 = 1.0;
  const double d[2] = {b.x - a.x, b.y - a.y};
  const double p[2] = {a.x, a.y};
  const double lo[2] = {r.x0, r.y0};
  const double hi[2] = {r.x1, r.y1};
  for (int k = 0; k < 2; ++k) {
    if (d[k] == 0.0) {
      if (p[k] < lo[k] || p[k] > hi[k]) return false;
      continue;
    }
    double ta = (lo[k] - p[k]) / d[k];
    double tb = (hi[k] - p[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t1 - t0 > 1e-12;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::vector<std::string> default_labels() {
  return {"idle", "cooking", "cleaning", "smoking", "gathering", "showering"};
}

ChannelValues activity_profile(std::string_view label) {
  //                 co2    voc    pm25   rh    temp
  if (label == "cooking") return {400.0, 150.0, 120.0, 12.0, 2.5};
  if (label == "cleaning") return {50.0, 300.0, 40.0, 2.0, 0.2};
  if (label == "smoking") return {80.0, 100.0, 250.0, 0.5, 0.3};
  if (label == "gathering") return {900.0, 60.0, 10.0, 8.0, 1.5};
  if (label == "showering") return {20.0, 20.0, 2.0, 35.0, 3.0};
  throw ConfigError(fmt::format("no built-in emission profile for activity '{}'", label));
}

void Scenario::validate() const {
  if (rooms.empty()) throw ConfigError("scenario has no rooms");
  for (const Room& r : rooms) {
    if (!(r.x0 < r.x1 && r.y0 < r.y1)) {
      throw ConfigError(fmt::format("room '{}' has non-positive extent", r.name));
    }
  }
  if (labels.empty()) throw ConfigError("label alphabet is empty");
  std::set<std::string> alphabet(labels.begin(), labels.end());
  if (alphabet.size() != labels.size()) throw ConfigError("label alphabet has duplicates");
  if (!alphabet.contains(std::string(kIdleLabel))) {
    throw ConfigError("label alphabet must contain \"idle\"");
  }
  std::set<std::uint32_t> ids;
  for (const auto& s : sensors) {
    if (!ids.insert(s.id).second) throw ConfigError(fmt::format("duplicate sensor id {}", s.id));
    if (!room_of(s.pos)) {
      throw ConfigError(fmt::format("sensor {} at ({}, {}) is outside every room", s.id, s.pos.x,
                                    s.pos.y));
    }
  }
  for (const auto& a : activities) {
    if (!alphabet.contains(a.label) || a.label == kIdleLabel) {
      throw ConfigError(fmt::format("activity label '{}' is not a declared activity", a.label));
    }
    if (!room_of(a.pos)) {
      throw ConfigError(fmt::format("activity '{}' is outside every room", a.label));
    }
    if (a.duration_s < 0 || a.start_s < 0) {
      throw ConfigError(fmt::format("activity '{}' has negative timing", a.label));
    }
  }
  if (!(diffusion.decay_length_m > 0)) throw ConfigError("decay length must be positive");
  if (!(diffusion.mixing_time_s > 0)) throw ConfigError("mixing time must be positive");
  if (!(diffusion.wall_factor >= 0 && diffusion.wall_factor <= 1)) {
    throw ConfigError("wall factor must lie in [0,1]");
  }
  if (!(sample_period_s > 0)) throw ConfigError("sample period must be positive");
  for (double n : noise_sigma) {
    if (!(n >= 0)) throw ConfigError("noise sigma must be non-negative");
  }
  if (!(duration_s >= 0)) throw ConfigError("duration must be non-negative");
  if (theta && !(*theta >= 0)) throw ConfigError("theta must be non-negative");
  if (knn == 0) throw ConfigError("k must be at least 1");
}

std::optional<std::size_t> Scenario::room_of(Point p) const {
  for (std::size_t i = 0; i < rooms.size(); ++i) {
    if (rooms[i].contains(p)) return i;
  }
  return std::nullopt;
}

const SensorPlacement& Scenario::sensor(std::uint32_t sensor_id) const {
  for (const auto& s : sensors) {
    if (s.id == sensor_id) return s;
  }
  throw ConfigError(fmt::format("unknown sensor {}", sensor_id));
}

std::optional<std::size_t> Scenario::room_of_sensor(std::uint32_t sensor_id) const {
  return room_of(sensor(sensor_id).pos);
}

Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario s;
  try {
    for (const auto& r : j.at("rooms")) {
      s.rooms.push_back(Room{r.value("name", fmt::format("room{}", s.rooms.size())),
                             r.at("x0").get<double>(), r.at("y0").get<double>(),
                             r.at("x1").get<double>(), r.at("y1").get<double>()});
    }
    for (const auto& sj : j.at("sensors")) {
      s.sensors.push_back(SensorPlacement{sj.at("id").get<std::uint32_t>(),
                                          Point{sj.at("x").get<double>(), sj.at("y").get<double>()}});
    }
    s.labels = j.contains("labels") ? j.at("labels").get<std::vector<std::string>>()
                                    : default_labels();
    if (j.contains("activities")) {
      for (const auto& aj : j.at("activities")) {
        Activity a;
        a.label = aj.at("label").get<std::string>();
        a.pos = Point{aj.at("x").get<double>(), aj.at("y").get<double>()};
        a.start_s = aj.value("start_s", 0.0);
        a.duration_s = aj.at("duration_s").get<double>();
        a.rates = aj.contains("rates") ? channels_from_json(aj.at("rates"), "activity rates")
                                       : activity_profile(a.label);
        s.activities.push_back(std::move(a));
      }
    }
    if (j.contains("diffusion")) {
      const auto& d = j.at("diffusion");
      s.diffusion.decay_length_m = d.value("decay_length_m", s.diffusion.decay_length_m);
      s.diffusion.mixing_time_s = d.value("mixing_time_s", s.diffusion.mixing_time_s);
      s.diffusion.wall_factor = d.value("wall_factor", s.diffusion.wall_factor);
    }
    s.sample_period_s = j.value("sample_period_s", s.sample_period_s);
    if (j.contains("baseline")) s.baseline = channels_from_json(j.at("baseline"), "baseline");
    if (j.contains("noise_sigma")) {
      s.noise_sigma = channels_from_json(j.at("noise_sigma"), "noise_sigma");
    }
    s.seed = j.value("seed", std::uint64_t{0});
    s.duration_s = j.value("duration_s", s.duration_s);
    if (j.contains("clustering")) {
      const auto& c = j.at("clustering");
      if (c.contains("theta")) s.theta = c.at("theta").get<double>();
      s.knn = c.value("k", s.knn);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("malformed scenario: {}", e.what()));
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open scenario file {}", path.string()));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("scenario {} is not valid JSON: {}", path.string(), e.what()));
  }
  return scenario_from_json(j);
}

nlohmann::json to_json(const Scenario& s) {
  nlohmann::json j;
  j["rooms"] = nlohmann::json::array();
  for (const auto& r : s.rooms) {
    j["rooms"].push_back({{"name", r.name}, {"x0", r.x0}, {"y0", r.y0}, {"x1", r.x1}, {"y1", r.y1}});
  }
  j["sensors"] = nlohmann::json::array();
  for (const auto& sp : s.sensors) {
    j["sensors"].push_back({{"id", sp.id}, {"x", sp.pos.x}, {"y", sp.pos.y}});
  }
  j["activities"] = nlohmann::json::array();
  for (const auto& a : s.activities) {
    j["activities"].push_back({{"label", a.label},
                               {"x", a.pos.x},
                               {"y", a.pos.y},
                               {"start_s", a.start_s},
                               {"duration_s", a.duration_s},
                               {"rates", channels_to_json(a.rates)}});
  }
  j["labels"] = s.labels;
  j["diffusion"] = {{"decay_length_m", s.diffusion.decay_length_m},
                    {"mixing_time_s", s.diffusion.mixing_time_s},
                    {"wall_factor", s.diffusion.wall_factor}};
  j["sample_period_s"] = s.sample_period_s;
  j["baseline"] = channels_to_json(s.baseline);
  j["noise_sigma"] = channels_to_json(s.noise_sigma);
  j["seed"] = s.seed;
  j["duration_s"] = s.duration_s;
  nlohmann::json c{{"k", s.knn}};
  if (s.theta) c["theta"] = *s.theta;
  j["clustering"] = c;
  return j;
}

int walls_crossed(const Scenario& s, Point a, Point b) {
  if (distance(a, b) == 0.0) return 0;
  int rooms_on_path = 0;
  for (const Room& r : s.rooms) {
    double t0, t1;
    if (clip_segment(r, a, b, t0, t1)) ++rooms_on_path;
  }
  return std::max(0, rooms_on_path - 1);
}

ChannelValues activity_increment(const Scenario& s, const Activity& activity, Point sensor_pos,
                                 double t) {
  ChannelValues inc{};
  if (t < activity.start_s) return inc;
  const double tau = s.diffusion.mixing_time_s;
  double level;
  double end = activity.start_s + activity.duration_s;
  if (t < end) {
    level = 1.0 - std::exp(-(t - activity.start_s) / tau);
  } else {
    level = (1.0 - std::exp(-activity.duration_s / tau)) * std::exp(-(t - end) / tau);
  }
  double spatial = std::exp(-distance(activity.pos, sensor_pos) / s.diffusion.decay_length_m) *
                   std::pow(s.diffusion.wall_factor, walls_crossed(s, activity.pos, sensor_pos));
  for (std::size_t c = 0; c < kChannels; ++c) inc[c] = activity.rates[c] * spatial * level;
  return inc;
}

std::string ground_truth_label(const Scenario& s, std::uint32_t sensor_id, double t) {
  const SensorPlacement& sp = s.sensor(sensor_id);
  auto room = s.room_of(sp.pos);
  const Activity* best = nullptr;
  double best_strength = -1.0;
  for (const Activity& a : s.activities) {
    if (!a.active_at(t) || s.room_of(a.pos) != room) continue;
    double strength = std::exp(-distance(a.pos, sp.pos) / s.diffusion.decay_length_m);
    if (strength > best_strength) {
      best = &a;
      best_strength = strength;
    }
  }
  return best ? best->label : std::string(kIdleLabel);
}

std::optional<std::size_t> Measurements::index_of(std::uint32_t sensor_id) const {
  auto it = std::find(sensor_ids.begin(), sensor_ids.end(), sensor_id);
  if (it == sensor_ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - sensor_ids.begin());
}

SensorWindow Measurements::window(std::size_t sensor_index, std::size_t end_sample,
                                  std::size_t length) const {
  if (end_sample > samples() || length > end_sample) {
    throw InsufficientData(fmt::format("window of {} samples ending at {} exceeds {} recorded",
                                       length, end_sample, samples()));
  }
  SensorWindow w;
  w.sensor_id = sensor_ids.at(sensor_index);
  w.sample_period_s = sample_period_s;
  w.end_time_s = static_cast<double>(end_sample - 1) * sample_period_s;
  const auto& stream = series.at(sensor_index);
  for (std::size_t c = 0; c < kChannels; ++c) {
    w.channels[c].reserve(length);
    for (std::size_t i = end_sample - length; i < end_sample; ++i) {
      w.channels[c].push_back(stream[i][c]);
    }
  }
  return w;
}

void Measurements::write_csv(std::ostream& out) const {
  out << "time_s,sensor_id,co2,voc,pm25,rh,temp\n";
  for (std::size_t i = 0; i < samples(); ++i) {
    double t = static_cast<double>(i) * sample_period_s;
    for (std::size_t s = 0; s < sensor_ids.size(); ++s) {
      const auto& v = series[s][i];
      out << fmt::format("{:.3f},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", t, sensor_ids[s], v[0],
                         v[1], v[2], v[3], v[4]);
    }
  }
}

Measurements generate(const Scenario& s, std::uint64_t seed, double duration_s) {
  s.validate();
  Measurements m;
  m.sample_period_s = s.sample_period_s;
  auto n_samples = static_cast<std::size_t>(std::floor(duration_s / s.sample_period_s + 1e-9));
  for (const auto& sp : s.sensors) m.sensor_ids.push_back(sp.id);
  m.series.assign(s.sensors.size(), std::vector<ChannelValues>(n_samples));

  // Spatial factors do not depend on time.
  std::vector<std::vector<double>> spatial(s.sensors.size(),
                                           std::vector<double>(s.activities.size()));
  for (std::size_t si = 0; si < s.sensors.size(); ++si) {
    for (std::size_t ai = 0; ai < s.activities.size(); ++ai) {
      const Activity& a = s.activities[ai];
      spatial[si][ai] =
          std::exp(-distance(a.pos, s.sensors[si].pos) / s.diffusion.decay_length_m) *
          std::pow(s.diffusion.wall_factor, walls_crossed(s, a.pos, s.sensors[si].pos));
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double tau = s.diffusion.mixing_time_s;
  for (std::size_t i = 0; i < n_samples; ++i) {
    double t = static_cast<double>(i) * s.sample_period_s;
    std::vector<double> level(s.activities.size(), 0.0);
    for (std::size_t ai = 0; ai < s.activities.size(); ++ai) {
      const Activity& a = s.activities[ai];
      double end = a.start_s + a.duration_s;
      if (t < a.start_s) {
        level[ai] = 0.0;
      } else if (t < end) {
        level[ai] = 1.0 - std::exp(-(t - a.start_s) / tau);
      } else {
        level[ai] = (1.0 - std::exp(-a.duration_s / tau)) * std::exp(-(t - end) / tau);
      }
    }
    for (std::size_t si = 0; si < s.sensors.size(); ++si) {
      ChannelValues v = s.baseline;
      for (std::size_t ai = 0; ai < s.activities.size(); ++ai) {
        double f = spatial[si][ai] * level[ai];
        if (f == 0.0) continue;
        for (std::size_t c = 0; c < kChannels; ++c) v[c] += s.activities[ai].rates[c] * f;
      }
      for (std::size_t c = 0; c < kChannels; ++c) {
        double noise = gauss(rng);
        v[c] += s.noise_sigma[c] * noise;
        if (c != Temperature) v[c] = std::max(0.0, v[c]);
      }
      m.series[si][i] = v;
    }
  }
  return m;
}

Embedding embed(const SensorWindow& window, const EmbeddingConfig& config) {
  const std::size_t W = config.window_samples;
  if (W < 2) throw InsufficientData("embedding window must hold at least 2 samples");
  for (const auto& ch : window.channels) {
    if (ch.size() < W) {
      throw InsufficientData(
          fmt::format("window has {} samples, embedding needs {}", ch.size(), W));
    }
  }

  const double n = static_cast<double>(W);
  const std::size_t low_band = std::max<std::size_t>(1, W / 8);
  const std::size_t nyquist = W / 2;

  std::vector<double> features;
  features.reserve(kChannels * 4);
  std::vector<double> dev(W);
  for (std::size_t c = 0; c < kChannels; ++c) {
    const auto& full = window.channels[c];
    const double scale = config.channel_scale[c];
    auto first = full.end() - static_cast<std::ptrdiff_t>(W);

    // Offsetting by the first sample keeps constant windows exactly constant.
    const double origin = *first / scale;
    double shifted_sum = 0.0;
    for (std::size_t i = 0; i < W; ++i) {
      dev[i] = first[static_cast<std::ptrdiff_t>(i)] / scale - origin;
      shifted_sum += dev[i];
    }
    const double shifted_mean = shifted_sum / n;
    for (double& d : dev) d -= shifted_mean;
    const double mean = origin + shifted_mean;

    double ss = 0.0;
    for (double d : dev) ss += d * d;
    const double stddev = std::sqrt(ss / n);

    // Least-squares slope against time in seconds.
    const double t_mid = (n - 1.0) / 2.0;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < W; ++i) {
      double x = (static_cast<double>(i) - t_mid) * window.sample_period_s;
      sxy += x * dev[i];
      sxx += x * x;
    }
    const double slope = sxy / sxx;

    double low = 0.0, total = 0.0;
    for (std::size_t k = 1; k <= nyquist; ++k) {
      double re = 0.0, im = 0.0;
      for (std::size_t i = 0; i < W; ++i) {
        double angle = -2.0 * std::numbers::pi * static_cast<double>(k * i) / n;
        re += dev[i] * std::cos(angle);
        im += dev[i] * std::sin(angle);
      }
      double e = re * re + im * im;
      total += e;
      if (k <= low_band) low += e;
    }
    const double low_share = total > 0.0 ? low / total : 0.0;

    features.insert(features.end(), {mean, stddev, slope, low_share});
  }
  features.resize(config.dim, 0.0);
  return Embedding{std::move(features), window.sensor_id, window.end_time_s};
}

std::vector<LabeledSample> labeled_windows(const Scenario& s, const Measurements& m,
                                           const EmbeddingConfig& config, std::size_t stride) {
  if (stride == 0) throw ConfigError("window stride must be positive");
  std::vector<LabeledSample> out;
  for (std::size_t end = config.window_samples; end <= m.samples(); end += stride) {
    for (std::size_t si = 0; si < m.sensor_ids.size(); ++si) {
      Embedding e = embed(m.window(si, end, config.window_samples), config);
      out.push_back(
          LabeledSample{std::move(e.vector), ground_truth_label(s, m.sensor_ids[si],
                                                                e.window_end_time_s)});
    }
  }
  return out;
}

std::vector<LabeledSample> training_corpus(const Scenario& layout, std::size_t variants,
                                           std::uint64_t seed, const EmbeddingConfig& config) {
  layout.validate();
  std::vector<std::string> activity_labels;
  for (const auto& l : layout.labels) {
    if (l != kIdleLabel) activity_labels.push_back(l);
  }
  const double window_s = static_cast<double>(config.window_samples) * layout.sample_period_s;
  std::vector<LabeledSample> out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t v = 0; v < variants; ++v) {
    Scenario sc = layout;
    sc.activities.clear();
    sc.duration_s = 2.0 * window_s;
    std::vector<std::string> room_label(sc.rooms.size(), std::string(kIdleLabel));
    for (std::size_t r = 0; r < sc.rooms.size(); ++r) {
      std::size_t pick = static_cast<std::size_t>(unit(rng) * (activity_labels.size() + 1));
      pick = std::min(pick, activity_labels.size());
      if (pick == activity_labels.size()) continue;  // room stays idle
      const Room& room = sc.rooms[r];
      const double margin = std::min({0.3, (room.x1 - room.x0) / 4, (room.y1 - room.y0) / 4});
      Activity a;
      a.label = activity_labels[pick];
      a.pos = Point{room.x0 + margin + unit(rng) * (room.x1 - room.x0 - 2 * margin),
                    room.y0 + margin + unit(rng) * (room.y1 - room.y0 - 2 * margin)};
      a.start_s = unit(rng) * 0.3 * window_s;
      a.duration_s = sc.duration_s;
      a.rates = activity_profile(a.label);
      const double strength = 0.7 + 0.6 * unit(rng);
      for (double& rate : a.rates) rate *= strength * (0.9 + 0.2 * unit(rng));
      room_label[r] = a.label;
      sc.activities.push_back(std::move(a));
    }
    Measurements m = generate(sc, mix(seed ^ mix(v)), sc.duration_s);
    for (std::size_t end = config.window_samples; end <= m.samples();
         end += config.window_samples) {
      std::map<std::size_t, std::vector<std::vector<double>>> by_room;
      for (std::size_t si = 0; si < m.sensor_ids.size(); ++si) {
        Embedding e = embed(m.window(si, end, config.window_samples), config);
        std::size_t room = *sc.room_of(sc.sensors[si].pos);
        by_room[room].push_back(e.vector);
        out.push_back(LabeledSample{std::move(e.vector), room_label[room]});
      }
      for (const auto& [room, members] : by_room) {
        if (members.size() < 2) continue;
        std::vector<double> mean(config.dim, 0.0);
        for (const auto& f : members) {
          for (std::size_t k = 0; k < config.dim; ++k) mean[k] += f[k];
        }
        for (double& x : mean) x /= static_cast<double>(members.size());
        out.push_back(LabeledSample{std::move(mean), room_label[room]});
      }
    }
  }
  return out;
}

}  // namespace pohar::sensing
