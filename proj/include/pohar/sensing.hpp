#pragma once

// Synthetic indoor-pollution scenarios and the window embedding used as the
// similarity signal for clustering and as classifier input.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace pohar::sensing {

inline constexpr std::size_t kChannels = 5;

enum Channel : std::size_t { CO2 = 0, VOC = 1, PM25 = 2, Humidity = 3, Temperature = 4 };

using ChannelValues = std::array<double, kChannels>;

inline constexpr std::string_view kIdleLabel = "idle";

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InsufficientData : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Point {
  double x = 0;
  double y = 0;
};

double distance(Point a, Point b);

struct Room {
  std::string name;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool contains(Point p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

struct SensorPlacement {
  std::uint32_t id = 0;
  Point pos;
};

struct Activity {
  std::string label;
  Point pos;
  double start_s = 0;
  double duration_s = 0;
  ChannelValues rates{};  // steady-state increment at the source

  bool active_at(double t) const { return t >= start_s && t < start_s + duration_s; }
};

struct Diffusion {
  double decay_length_m = 12.0;  // lambda
  double mixing_time_s = 30.0;   // tau
  double wall_factor = 0.05;     // kappa, applied per room boundary crossed
};

struct Scenario {
  std::vector<Room> rooms;
  std::vector<SensorPlacement> sensors;
  std::vector<Activity> activities;
  std::vector<std::string> labels;  // declared label alphabet; "idle" first
  Diffusion diffusion;
  double sample_period_s = 1.0;
  ChannelValues baseline{420.0, 100.0, 8.0, 45.0, 26.0};
  ChannelValues noise_sigma{5.0, 2.0, 1.0, 0.3, 0.05};
  std::uint64_t seed = 0;
  double duration_s = 120.0;
  std::optional<double> theta;
  std::size_t knn = 3;

  /// Throws ConfigError on invalid geometry, parameters or labels.
  void validate() const;

  std::optional<std::size_t> room_of(Point p) const;
  std::optional<std::size_t> room_of_sensor(std::uint32_t sensor_id) const;
  const SensorPlacement& sensor(std::uint32_t sensor_id) const;
};

/// Default emission profile for a known activity label (throws ConfigError otherwise).
ChannelValues activity_profile(std::string_view label);
std::vector<std::string> default_labels();

Scenario scenario_from_json(const nlohmann::json& j);
Scenario load_scenario(const std::filesystem::path& path);
nlohmann::json to_json(const Scenario& s);

/// Room boundaries crossed by the straight segment a->b.
int walls_crossed(const Scenario& s, Point a, Point b);

/// Noise-free increment of every channel at `sensor_pos`, time `t`, due to `activity`.
ChannelValues activity_increment(const Scenario& s, const Activity& activity, Point sensor_pos,
                                 double t);

/// Ground-truth activity label seen by a sensor at time t: the strongest active
/// activity inside the sensor's room, else "idle".
std::string ground_truth_label(const Scenario& s, std::uint32_t sensor_id, double t);

struct SensorWindow {
  std::uint32_t sensor_id = 0;
  double sample_period_s = 1.0;
  double end_time_s = 0;
  std::array<std::vector<double>, kChannels> channels;

  std::size_t length() const { return channels[0].size(); }
};

/// Per-sensor streams; sample i of every stream is taken at time i * period.
struct Measurements {
  double sample_period_s = 1.0;
  std::vector<std::uint32_t> sensor_ids;
  std::vector<std::vector<ChannelValues>> series;  // [sensor index][sample]

  std::size_t samples() const { return series.empty() ? 0 : series.front().size(); }
  std::optional<std::size_t> index_of(std::uint32_t sensor_id) const;
  /// The `length` samples strictly before sample index `end_sample`.
  SensorWindow window(std::size_t sensor_index, std::size_t end_sample, std::size_t length) const;
  /// Columns: time_s, sensor_id, co2, voc, pm25, rh, temp.
  void write_csv(std::ostream& out) const;
};

Measurements generate(const Scenario& s, std::uint64_t seed, double duration_s);

struct Embedding {
  std::vector<double> vector;
  std::uint32_t sensor_id = 0;
  double window_end_time_s = 0;
};

struct EmbeddingConfig {
  std::size_t dim = 16;
  std::size_t window_samples = 60;
  // Channel values are divided by these before any statistic is taken.
  ChannelValues channel_scale{100.0, 50.0, 10.0, 5.0, 1.0};
};

/// Per channel: mean, standard deviation, least-squares slope (per second)
/// and the low-band share of spectral energy; channel-major, then cut or
/// zero-padded to `dim`. Uses the trailing `window_samples` samples.
Embedding embed(const SensorWindow& window, const EmbeddingConfig& config = {});

struct LabeledSample {
  std::vector<double> features;
  std::string label;
};

/// One sample per sensor per window, windows ending every `stride` samples.
std::vector<LabeledSample> labeled_windows(const Scenario& s, const Measurements& m,
                                           const EmbeddingConfig& config, std::size_t stride);

/// Randomized variants of `layout` (same rooms and sensors, one random activity
/// or none per room) and their labeled embeddings. Room means of the member
/// embeddings are added as extra samples.
std::vector<LabeledSample> training_corpus(const Scenario& layout, std::size_t variants,
                                           std::uint64_t seed, const EmbeddingConfig& config);

}  // namespace pohar::sensing
