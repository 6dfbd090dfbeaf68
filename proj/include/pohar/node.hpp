#pragma once

// The per-sensor pipeline: network election, embedding share over the
// replicated set, leader clustering, group election and group inference.
// Pipeline runs every node of a scenario on one simulated network.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pohar/clustering.hpp"
#include "pohar/election.hpp"
#include "pohar/inference.hpp"
#include "pohar/netsim.hpp"
#include "pohar/replicated_set.hpp"
#include "pohar/sensing.hpp"

namespace pohar::node {

using sim::Micros;
using sim::NodeId;

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Phase { Electing, Sharing, Clustering, GroupElecting, Inferring };

const char* to_string(Phase phase);

struct PipelineConfig {
  sim::ChannelConfig channel;
  election::ElectionTiming timing;
  clustering::ClusterParams clustering{4.0, 3};
  sensing::EmbeddingConfig embedding;
  Micros round_period = 60 * sim::kSeconds;
  Micros gossip_period = 250 * sim::kMillis;
  Micros gossip_jitter = 50 * sim::kMillis;
  Micros share_window = 3 * sim::kSeconds;   // round start -> leader clusters
  Micros active_span = 20 * sim::kSeconds;   // round start -> round end cleanup
  Micros inference_delay = 20 * sim::kMillis;
  Micros inference_patience = 2 * sim::kSeconds;  // then classify with what is there
  bool per_member_vote = false;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument.
  void validate() const;
};

struct Fault {
  enum class Action { Kill, Revive };
  Micros at = 0;
  NodeId node = 0;
  Action action = Action::Kill;

  friend bool operator==(const Fault&, const Fault&) = default;
};

/// "seconds:node:kill" or "seconds:node:revive".
Fault parse_fault(std::string_view text);

// Replicated element payloads; the first byte names the type.
inline constexpr std::uint8_t kEmbeddingElement = 0x01;
inline constexpr std::uint8_t kAssignmentElement = 0x02;
inline constexpr std::uint8_t kResultElement = 0x03;

struct EmbeddingElement {
  std::uint32_t round = 0;
  NodeId sensor = 0;
  double window_end_s = 0;
  std::vector<double> vector;

  friend bool operator==(const EmbeddingElement&, const EmbeddingElement&) = default;
};

struct AssignmentElement {
  NodeId leader = 0;
  std::uint32_t term = 0;
  clustering::ClusterRecord record;

  friend bool operator==(const AssignmentElement&, const AssignmentElement&) = default;
};

struct ResultElement {
  std::uint32_t round = 0;
  clustering::ClusterLabel group = 0;
  NodeId assignment_leader = 0;  // identifies the assignment this answers
  std::uint32_t assignment_term = 0;
  NodeId group_leader = 0;
  std::string label;

  friend bool operator==(const ResultElement&, const ResultElement&) = default;
};

Bytes encode(const EmbeddingElement& e);
Bytes encode(const AssignmentElement& e);
Bytes encode(const ResultElement& e);
std::optional<EmbeddingElement> decode_embedding(std::span<const std::uint8_t> data);
std::optional<AssignmentElement> decode_assignment(std::span<const std::uint8_t> data);
std::optional<ResultElement> decode_result(std::span<const std::uint8_t> data);

struct GroupOutcome {
  clustering::ClusterLabel label = 0;
  std::vector<NodeId> members;
  std::optional<NodeId> leader;
  std::optional<std::string> predicted;
  std::string truth;
  std::optional<Micros> result_time;
};

struct RecoveryEvent {
  std::uint32_t round = 0;  // round active at the failure, else the next one
  std::string scope;  // "network" or "group:<label>"
  NodeId failed = 0;
  Micros failed_at = 0;
  std::optional<NodeId> successor;
  std::optional<Micros> recovered_at;

  std::optional<Micros> recovery_time() const {
    if (!recovered_at) return std::nullopt;
    return *recovered_at - failed_at;
  }
};

struct RoundReport {
  std::uint32_t round = 0;
  Micros start = 0;
  std::optional<NodeId> leader;
  std::uint32_t leader_term = 0;
  std::vector<GroupOutcome> groups;
  std::optional<Micros> consensus_latency;   // every live replica holds every live embedding
  std::optional<Micros> assignment_latency;  // round start -> assignment created
  std::optional<Micros> completion_latency;  // round start -> last group result
  std::size_t clustering_iterations = 0;
  std::size_t clustering_merges = 0;
  std::size_t clustering_refinements = 0;
  std::size_t embeddings_clustered = 0;
  std::vector<RecoveryEvent> recoveries;
  bool complete = false;

  std::size_t correct_predictions() const;
  nlohmann::json to_json() const;
};

class Pipeline {
 public:
  Pipeline(sensing::Scenario scenario, inference::ModelBundle model, PipelineConfig config);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  void schedule(const Fault& fault);

  /// Simulates [now, until]. Rounds whose active span does not fit are not started.
  void run(Micros until);

  const std::vector<RoundReport>& reports() const { return reports_; }
  const std::vector<RecoveryEvent>& recoveries() const { return recoveries_; }
  const sim::Trace& trace() const;
  const sensing::Measurements& measurements() const { return measurements_; }
  const sensing::Scenario& scenario() const { return scenario_; }
  const PipelineConfig& config() const { return config_; }
  Micros now() const;
  Micros round_start(std::uint32_t round) const;

  bool alive(NodeId node) const;
  Phase phase(NodeId node) const;
  const crdt::ReplicaState& replica(NodeId node) const;
  const election::ElectionState& network_election(NodeId node) const;
  /// The live node in the Leader role with the highest term.
  std::optional<NodeId> network_leader() const;

 private:
  struct Node;
  class Context;
  struct RoundLog;

  void dispatch(const sim::SimEvent& ev);
  void on_world_timer(const sim::TimerFired& t);
  void on_node_timer(Node& n, const sim::TimerFired& t);
  void on_delivery(Node& n, const sim::SimMessage& msg);

  void start_round(std::uint32_t round);
  void end_round(std::uint32_t round);
  void apply_fault(const Fault& f);

  void share_embedding(Node& n, std::uint32_t round);
  void gossip(Node& n);
  void arm_gossip(Node& n);
  void merged(Node& n);
  void leader_cluster(Node& n, std::uint32_t round);
  void adopt_assignment(Node& n);
  void try_infer(Node& n);
  void observe_network(Node& n, const election::Effects& fx);
  void observe_group(Node& n, const election::Effects& fx);
  void broadcast_element(Node& n, sim::MessageKind kind, const crdt::TaggedElement& e);
  void check_consensus();
  void check_result(Node& n);
  void close_group_recovery(std::uint32_t round, clustering::ClusterLabel group, NodeId leader);
  void finish_report(std::uint32_t round);

  election::ElectionDriver make_network_driver(const Node& n) const;
  Node& node(NodeId id);
  const Node& node(NodeId id) const;

  sensing::Scenario scenario_;
  inference::ModelBundle model_;
  PipelineConfig config_;
  sensing::Measurements measurements_;
  std::vector<NodeId> ids_;
  std::unique_ptr<sim::Simulator> sim_;
  std::map<NodeId, std::unique_ptr<Node>> nodes_;
  std::vector<Fault> faults_;
  std::map<std::uint32_t, std::unique_ptr<RoundLog>> rounds_;
  std::vector<RoundReport> reports_;
  std::optional<std::uint32_t> current_round_;
  std::uint32_t next_round_ = 0;
  std::vector<RecoveryEvent> recoveries_;
  std::optional<std::size_t> open_network_recovery_;
  Micros scheduled_until_ = 0;
};

/// Summary CSV header and one row per report.
void write_summary_csv(const std::vector<RoundReport>& reports, std::ostream& out);
void write_rounds_jsonl(const std::vector<RoundReport>& reports, std::ostream& out);
void write_recoveries_csv(const std::vector<RecoveryEvent>& events, std::ostream& out);

}  // namespace pohar::node
