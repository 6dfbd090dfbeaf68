#pragma once

// A network of nodes running only the network-scope election over a lossy
// simulated channel. Used for safety/liveness trials and recovery timing.

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "pohar/election.hpp"
#include "pohar/netsim.hpp"

namespace pohar::election {

struct LeaderEvent {
  Micros time = 0;
  NodeId node = 0;
  std::uint32_t term = 0;
  std::uint32_t incarnation = 0;
};

struct TermSample {
  Micros time = 0;
  NodeId node = 0;
  std::uint32_t incarnation = 0;
  std::uint32_t term = 0;
};

class ElectionCluster {
 public:
  ElectionCluster(std::vector<NodeId> nodes, sim::ChannelConfig channel, ElectionTiming timing,
                  std::uint64_t seed);

  /// Advances the simulation to `limit` or until `until` holds.
  sim::RunOutcome run_until(Micros limit, const sim::Simulator::Condition& until = {});

  void kill(NodeId node);
  /// Reboots a node with fresh election state (term 0, no vote).
  void revive(NodeId node);
  bool alive(NodeId node) const;

  /// The live node currently in the Leader role with the highest term, if any.
  std::optional<NodeId> current_leader() const;
  std::optional<std::uint32_t> leader_term() const;

  const ElectionState& state(NodeId node) const;
  const std::vector<LeaderEvent>& leader_events() const { return leader_events_; }
  const std::vector<TermSample>& term_samples() const { return term_samples_; }
  Micros now() const { return sim_.now(); }
  const sim::Simulator& simulator() const { return sim_; }

 private:
  struct Member;
  class Context;

  void dispatch(const sim::SimEvent& ev);
  void observe(Member& m, const Effects& fx);
  ElectionDriver make_driver(NodeId node);

  struct Member {
    NodeId id = 0;
    bool alive = true;
    std::uint32_t incarnation = 0;
    std::uint64_t generation = 0;
    std::optional<ElectionDriver> driver;
    std::uint32_t last_term = 0;
  };

  std::vector<NodeId> ids_;
  ElectionTiming timing_;
  std::uint64_t seed_;
  sim::Simulator sim_;
  std::map<NodeId, Member> members_;
  std::vector<LeaderEvent> leader_events_;
  std::vector<TermSample> term_samples_;
};

struct SafetyAudit {
  bool ok = true;
  std::uint32_t violating_term = 0;
};

/// At most one node incarnation may have become Leader in any term.
SafetyAudit audit_election_safety(const std::vector<LeaderEvent>& events);

/// Every node incarnation's term sequence must be non-decreasing.
bool audit_term_monotonicity(const std::vector<TermSample>& samples);

}  // namespace pohar::election
