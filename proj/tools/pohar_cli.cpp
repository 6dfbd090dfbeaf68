// pohar: generate synthetic data, train classifiers, run pipeline simulations.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "pohar/inference.hpp"
#include "pohar/node.hpp"
#include "pohar/sensing.hpp"

namespace fs = std::filesystem;
using namespace pohar;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;
constexpr int kIncomplete = 3;

struct ConfigProblem : std::runtime_error {
  using std::runtime_error::runtime_error;
};

sim::Micros ms(double v, const char* flag) {
  if (!(v >= 0) || !std::isfinite(v)) throw ConfigProblem(fmt::format("{} must be >= 0", flag));
  return static_cast<sim::Micros>(std::llround(v * 1000.0));
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  return out;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
}

inference::Dataset to_dataset(const std::vector<sensing::LabeledSample>& samples,
                              const std::vector<std::string>& labels) {
  inference::Dataset d;
  d.label_names = labels;  // keep the declared order stable
  for (const auto& s : samples) d.add(s.features, s.label);
  return d;
}

struct GenerateArgs {
  std::string scenario;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::optional<double> duration;
  std::size_t stride = 10;
  std::size_t variants = 0;
};

int cmd_generate(const GenerateArgs& a) {
  sensing::Scenario s = sensing::load_scenario(a.scenario);
  if (a.duration) s.duration_s = *a.duration;
  s.validate();
  sensing::EmbeddingConfig cfg;
  make_dir(a.out_dir);

  sensing::Measurements m = sensing::generate(s, a.seed, s.duration_s);
  {
    auto out = open_out(fs::path(a.out_dir) / "measurements.csv");
    m.write_csv(out);
  }
  std::vector<sensing::LabeledSample> samples;
  if (m.samples() >= cfg.window_samples) samples = sensing::labeled_windows(s, m, cfg, a.stride);
  if (a.variants > 0) {
    auto extra = sensing::training_corpus(s, a.variants, a.seed, cfg);
    samples.insert(samples.end(), extra.begin(), extra.end());
  }
  inference::Dataset d = to_dataset(samples, s.labels);
  {
    auto out = open_out(fs::path(a.out_dir) / "dataset.csv");
    inference::write_csv(d, out);
  }
  std::cout << fmt::format("wrote {} samples x {} sensors, {} labeled windows to {}\n", m.samples(),
                           m.sensor_ids.size(), d.size(), a.out_dir);
  return kOk;
}

struct TrainArgs {
  std::string dataset;
  std::string kind = "forest";
  std::size_t trees = 30;
  std::uint64_t seed = 1;
  double holdout = 0.25;
  std::string out = "model.bin";
};

int cmd_train(const TrainArgs& a) {
  std::ifstream in(a.dataset);
  if (!in) throw ConfigProblem(fmt::format("cannot open dataset {}", a.dataset));
  inference::Dataset data = inference::read_csv(in);
  inference::TrainSpec spec;
  spec.kind = inference::model_kind_from_string(a.kind);
  spec.n_trees = a.trees;
  auto [train, hold] = inference::split_holdout(data, a.holdout, a.seed);
  inference::ModelBundle model = inference::train(train, spec, a.seed);
  std::cout << fmt::format("kind={} train_rows={} holdout_rows={} train_accuracy={:.4f}",
                           inference::to_string(spec.kind), train.size(), hold.size(),
                           inference::accuracy(model, train));
  if (hold.size() > 0) std::cout << fmt::format(" holdout_accuracy={:.4f}", inference::accuracy(model, hold));
  std::cout << '\n';
  inference::save_model(model, a.out);
  return kOk;
}

struct SimulateArgs {
  std::string scenario;
  std::optional<std::string> model;
  std::uint64_t seed = 1;
  std::optional<double> theta;
  std::optional<std::size_t> knn;
  double drop = 0.0;
  double delay_min = 1.0;
  double delay_max = 10.0;
  double duplicate = 0.0;
  double heartbeat = 50.0;
  double timeout_min = 150.0;
  double timeout_max = 300.0;
  std::optional<double> duration;
  std::vector<std::string> faults;
  std::string out_dir = "out";
  bool per_member_vote = false;
};

int cmd_simulate(const SimulateArgs& a) {
  sensing::Scenario s = sensing::load_scenario(a.scenario);
  if (a.duration) s.duration_s = *a.duration;

  node::PipelineConfig cfg;
  cfg.seed = a.seed;
  cfg.channel.drop_probability = a.drop;
  cfg.channel.delay_min = ms(a.delay_min, "--delay-min");
  cfg.channel.delay_max = ms(a.delay_max, "--delay-max");
  cfg.channel.duplicate_probability = a.duplicate;
  cfg.timing.heartbeat_interval = ms(a.heartbeat, "--heartbeat");
  cfg.timing.timeout_min = ms(a.timeout_min, "--timeout-min");
  cfg.timing.timeout_max = ms(a.timeout_max, "--timeout-max");
  if (auto theta = a.theta ? a.theta : s.theta) cfg.clustering.theta = *theta;
  cfg.clustering.k = a.knn.value_or(s.knn);
  cfg.per_member_vote = a.per_member_vote;

  std::vector<node::Fault> faults;
  const auto end = static_cast<sim::Micros>(std::llround(s.duration_s * 1e6));
  for (const auto& text : a.faults) {
    node::Fault f = node::parse_fault(text);
    if (f.at > end) throw ConfigProblem(fmt::format("fault '{}' is after the end of the run", text));
    faults.push_back(f);
  }

  inference::ModelBundle model;
  if (a.model) {
    if (!fs::exists(*a.model)) throw ConfigProblem(fmt::format("model file {} not found", *a.model));
    model = inference::load_model(*a.model);
  } else {
    // No model given: train a forest on randomized variants of this layout.
    auto corpus = sensing::training_corpus(s, 200, a.seed ^ 0x5eedull, cfg.embedding);
    inference::TrainSpec spec;
    spec.kind = inference::ModelKind::RandomForest;
    model = inference::train(to_dataset(corpus, s.labels), spec, a.seed);
  }

  node::Pipeline p(s, std::move(model), cfg);
  for (const auto& f : faults) p.schedule(f);
  p.run(end);

  make_dir(a.out_dir);
  const fs::path dir(a.out_dir);
  {
    auto out = open_out(dir / "trace.csv");
    p.trace().write_csv(out);
  }
  {
    auto out = open_out(dir / "rounds.jsonl");
    node::write_rounds_jsonl(p.reports(), out);
  }
  {
    auto out = open_out(dir / "summary.csv");
    node::write_summary_csv(p.reports(), out);
  }
  {
    auto out = open_out(dir / "recoveries.csv");
    node::write_recoveries_csv(p.recoveries(), out);
  }

  bool all_complete = !p.reports().empty();
  for (const auto& r : p.reports()) {
    std::string groups;
    for (const auto& g : r.groups) {
      groups += fmt::format(" [{}: {} -> {} (truth {})]", g.label, fmt::join(g.members, ","),
                            g.predicted.value_or("-"), g.truth);
    }
    std::cout << fmt::format("round {} leader {} groups {}{}{}\n", r.round,
                             r.leader ? std::to_string(*r.leader) : "-", r.groups.size(), groups,
                             r.complete ? "" : " INCOMPLETE");
    all_complete = all_complete && r.complete;
  }
  for (const auto& e : p.recoveries()) {
    std::cout << fmt::format("recovery {} node {} failed at {} us: {}\n", e.scope, e.failed, e.failed_at,
                             e.recovery_time() ? fmt::format("{} us", *e.recovery_time()) : "not recovered");
  }
  if (p.reports().empty()) std::cerr << "no round fits in the simulated duration\n";
  return all_complete ? kOk : kIncomplete;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pohar: pollution-aware hyperlocal activity recognition simulator"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write measurements.csv and dataset.csv for a scenario");
  g->add_option("--scenario", gen.scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
  g->add_option("--seed", gen.seed, "noise seed");
  g->add_option("--out-dir", gen.out_dir, "output directory");
  g->add_option("--duration", gen.duration, "seconds to generate (default: scenario)");
  g->add_option("--stride", gen.stride, "samples between labeled windows")->check(CLI::PositiveNumber);
  g->add_option("--variants", gen.variants, "extra randomized layout variants for training");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a classifier from dataset.csv");
  t->add_option("--dataset", tr.dataset, "dataset CSV")->required();
  t->add_option("--kind", tr.kind, "tree, forest or nb");
  t->add_option("--trees", tr.trees, "forest size");
  t->add_option("--seed", tr.seed, "training and split seed");
  t->add_option("--holdout", tr.holdout, "holdout fraction");
  t->add_option("--out", tr.out, "model file");

  SimulateArgs sa;
  auto* s = app.add_subcommand("simulate", "run the full pipeline over a simulated network");
  s->add_option("--scenario", sa.scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
  s->add_option("--model", sa.model, "model file (default: train a forest on the layout)");
  s->add_option("--seed", sa.seed, "run seed");
  s->add_option("--theta", sa.theta, "clustering threshold");
  s->add_option("--knn", sa.knn, "k nearest neighbours kept per sensor");
  s->add_option("--drop", sa.drop, "drop probability");
  s->add_option("--delay-min", sa.delay_min, "min one-way delay, ms");
  s->add_option("--delay-max", sa.delay_max, "max one-way delay, ms");
  s->add_option("--duplicate", sa.duplicate, "duplication probability");
  s->add_option("--heartbeat", sa.heartbeat, "heartbeat interval, ms");
  s->add_option("--timeout-min", sa.timeout_min, "election timeout lower bound, ms");
  s->add_option("--timeout-max", sa.timeout_max, "election timeout upper bound, ms");
  s->add_option("--duration", sa.duration, "simulated seconds (default: scenario)");
  s->add_option("--fault", sa.faults, "seconds:node:kill|revive, repeatable");
  s->add_option("--out-dir", sa.out_dir, "output directory");
  s->add_flag("--per-member-vote", sa.per_member_vote, "classify members and vote");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    return cmd_simulate(sa);
  } catch (const ConfigProblem& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const sensing::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DecodeError& e) {
    std::cerr << "decode error: " << e.what() << '\n';
    return kRuntimeError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}
