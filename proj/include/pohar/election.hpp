#pragma once

// Leader election in the style of RAFT, without log replication. The state
// machine is pure: inputs in, (new state, effects) out. ElectionDriver binds
// one instance to simulator timers and messages.

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "pohar/bytes.hpp"
#include "pohar/netsim.hpp"

namespace pohar::election {

using sim::Micros;
using sim::NodeId;

enum class Role { Follower, Candidate, Leader };

const char* to_string(Role role);

struct ElectionTiming {
  Micros heartbeat_interval = 50 * sim::kMillis;
  Micros timeout_min = 150 * sim::kMillis;
  Micros timeout_max = 300 * sim::kMillis;

  /// Requires timeout_min <= timeout_max and timeout_min > 2 * heartbeat_interval.
  void validate() const;
};

/// Which election an election message belongs to: the network-wide one, or
/// the one inside a single group of a given round.
struct Scope {
  enum Kind : std::uint8_t { Network = 0, Group = 1 };
  Kind kind = Network;
  std::uint32_t round = 0;
  std::uint32_t group = 0;

  friend bool operator==(const Scope&, const Scope&) = default;
};

struct ElectionMessage {
  sim::MessageKind kind = sim::MessageKind::Heartbeat;
  std::uint32_t term = 0;
  NodeId sender = 0;
  Scope scope;

  friend bool operator==(const ElectionMessage&, const ElectionMessage&) = default;
};

// RequestVote / VoteGrant / Heartbeat share one layout, big-endian:
//   u32 term, u32 sender, u8 scope_kind, u32 round, u32 group
Bytes encode(const ElectionMessage& msg);
ElectionMessage decode(sim::MessageKind kind, std::span<const std::uint8_t> data);

struct Outbound {
  NodeId dst = 0;
  sim::MessageKind kind = sim::MessageKind::Heartbeat;
  std::uint32_t term = 0;
};

struct Effects {
  std::vector<Outbound> messages;
  bool reset_timer = false;
  bool became_leader = false;
  bool stepped_down = false;
};

class ElectionState {
 public:
  /// `peers` is the full voting membership and must contain `self`.
  ElectionState(NodeId self, std::set<NodeId> peers, ElectionTiming timing, std::uint64_t seed);

  /// Follower/Candidate: start a new term and request votes. Ignored on a Leader.
  Effects on_timeout();
  Effects on_request_vote(NodeId candidate, std::uint32_t candidate_term);
  Effects on_vote_grant(NodeId voter, std::uint32_t term);
  Effects on_heartbeat(NodeId leader, std::uint32_t term);
  /// Leader only: the periodic heartbeat broadcast.
  Effects heartbeat_tick() const;

  NodeId self() const { return self_; }
  Role role() const { return role_; }
  std::uint32_t current_term() const { return term_; }
  std::optional<NodeId> voted_for() const { return voted_for_; }
  const std::set<NodeId>& votes_received() const { return votes_; }
  const std::set<NodeId>& peer_set() const { return peers_; }
  std::optional<NodeId> known_leader() const { return leader_; }
  Micros election_timeout() const { return timeout_; }
  const ElectionTiming& timing() const { return timing_; }

  bool has_majority() const { return votes_.size() * 2 > peers_.size(); }

 private:
  void adopt_term(std::uint32_t term, Effects& fx);
  void redraw_timeout();
  std::vector<Outbound> to_peers(sim::MessageKind kind) const;

  NodeId self_;
  std::set<NodeId> peers_;
  ElectionTiming timing_;
  std::mt19937_64 rng_;

  Role role_ = Role::Follower;
  std::uint32_t term_ = 0;
  std::optional<NodeId> voted_for_;
  std::set<NodeId> votes_;
  std::optional<NodeId> leader_;
  Micros timeout_ = 0;
};

/// Runs one ElectionState on top of a NodeContext: arms the randomized
/// election timer, repeats heartbeats while leading, and serializes outputs.
class ElectionDriver {
 public:
  ElectionDriver(ElectionState state, Scope scope, std::uint32_t timeout_timer,
                 std::uint32_t heartbeat_timer);

  void start(sim::NodeContext& ctx);
  /// Invalidates outstanding timers; subsequent events are ignored.
  void stop();
  bool running() const { return running_; }

  /// Returns nullopt when the timer is stale or belongs to someone else.
  std::optional<Effects> on_timer(sim::NodeContext& ctx, std::uint32_t timer,
                                  std::uint64_t generation);
  Effects on_message(sim::NodeContext& ctx, const ElectionMessage& msg);

  const ElectionState& state() const { return state_; }
  const Scope& scope() const { return scope_; }

 private:
  void apply(sim::NodeContext& ctx, const Effects& fx);
  void arm_timeout(sim::NodeContext& ctx);
  void arm_heartbeat(sim::NodeContext& ctx);

  ElectionState state_;
  Scope scope_;
  std::uint32_t timeout_timer_;
  std::uint32_t heartbeat_timer_;
  std::uint64_t timeout_generation_ = 0;
  std::uint64_t heartbeat_generation_ = 0;
  bool running_ = false;
};

}  // namespace pohar::election
