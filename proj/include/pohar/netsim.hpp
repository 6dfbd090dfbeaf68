#pragma once

// Deterministic discrete-event simulation of an unreliable datagram network.
// Events are ordered by (time, insertion sequence); all randomness comes from
// the channel's seeded generator, so a run is a pure function of its inputs.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <queue>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <variant>
#include <vector>

#include "pohar/bytes.hpp"

namespace pohar::sim {

using Micros = std::uint64_t;
using NodeId = std::uint32_t;
using EventId = std::uint64_t;

inline constexpr NodeId kBroadcast = 0xFFFFFFFFu;

inline constexpr Micros kMillis = 1000;
inline constexpr Micros kSeconds = 1000 * kMillis;

enum class MessageKind : std::uint8_t {
  Gossip,
  RequestVote,
  VoteGrant,
  Heartbeat,
  EmbeddingShare,
  GroupAssign,
  InferenceResult,
};

std::string_view to_string(MessageKind kind);

struct SimMessage {
  NodeId src = 0;
  NodeId dst = kBroadcast;
  MessageKind kind = MessageKind::Gossip;
  Bytes payload;
  Micros send_time = 0;
};

struct ChannelConfig {
  double drop_probability = 0.0;
  Micros delay_min = 0;
  Micros delay_max = 0;
  double duplicate_probability = 0.0;
  std::uint64_t rng_seed = 0;

  /// Throws std::invalid_argument on out-of-range settings.
  void validate() const;
};

/// A message arriving at one concrete recipient.
struct Delivery {
  NodeId recipient = 0;
  SimMessage msg;
};

/// Timer expiry. `timer` and `generation` are opaque to the simulator; owners
/// use the generation to discard timers they have since re-armed.
struct TimerFired {
  NodeId node = 0;
  std::uint32_t timer = 0;
  std::uint64_t generation = 0;
};

using EventBody = std::variant<Delivery, TimerFired>;

struct SimEvent {
  EventId id = 0;
  Micros at = 0;
  EventBody body;
};

class SchedulingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class EventQueue {
 public:
  Micros now() const { return now_; }

  /// Throws SchedulingError when `at` precedes the current time.
  EventId schedule(Micros at, EventBody body);

  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }
  std::optional<Micros> next_time() const;

  /// Removes the earliest event and advances the clock to its time.
  SimEvent pop();

 private:
  struct Later {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      return a.at != b.at ? a.at > b.at : a.id > b.id;
    }
  };

  Micros now_ = 0;
  EventId next_id_ = 0;
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> heap_;
};

struct TraceRecord {
  Micros time_us = 0;
  NodeId src = 0;
  NodeId dst = 0;
  MessageKind kind = MessageKind::Gossip;
  std::size_t size_bytes = 0;
  bool dropped = false;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

/// Append-only log of message dispatches (and drops, flagged). Timer events
/// are not recorded.
struct Trace {
  std::vector<TraceRecord> records;
  std::size_t dispatched = 0;
  std::size_t dropped = 0;
  bool timed_out = false;

  void write_csv(std::ostream& out) const;
};

class Channel {
 public:
  explicit Channel(ChannelConfig config);

  /// Draws loss, delay and duplication independently for every recipient.
  /// A broadcast goes to every entry of `peers` except the sender. Returns the
  /// number of deliveries scheduled.
  std::size_t send(EventQueue& queue, const SimMessage& msg, std::span<const NodeId> peers,
                   Trace* trace);

  const ChannelConfig& config() const { return config_; }
  std::size_t scheduled() const { return scheduled_; }

 private:
  std::size_t send_one(EventQueue& queue, const SimMessage& msg, NodeId recipient, Trace* trace);
  Micros draw_delay();

  ChannelConfig config_;
  std::mt19937_64 rng_;
  std::size_t scheduled_ = 0;
};

struct RunOutcome {
  bool condition_met = false;
  bool timed_out = false;
  std::size_t events = 0;
};

/// Owns the clock, channel and trace of one simulated network.
class Simulator {
 public:
  using Handler = std::function<void(const SimEvent&)>;
  using Condition = std::function<bool()>;

  Simulator(ChannelConfig config, std::vector<NodeId> nodes);

  Micros now() const { return queue_.now(); }
  const std::vector<NodeId>& nodes() const { return nodes_; }

  /// Stamps send_time with the current time and hands the message to the channel.
  std::size_t send(SimMessage msg);

  EventId set_timer(Micros at, NodeId node, std::uint32_t timer, std::uint64_t generation);

  /// Dispatches events with time <= limit in (time, sequence) order. Stops early
  /// once `until` holds (checked after each dispatch). If a condition was given
  /// and never held, the trace is flagged as timed out.
  RunOutcome run_until(Micros limit, const Handler& handler, const Condition& until = {});

  EventQueue& queue() { return queue_; }
  const Channel& channel() const { return channel_; }
  const Trace& trace() const { return trace_; }
  Trace& trace() { return trace_; }

 private:
  std::vector<NodeId> nodes_;
  EventQueue queue_;
  Channel channel_;
  Trace trace_;
};

}  // namespace pohar::sim

namespace pohar::sim {

/// What a node's protocol logic may do to the world while handling an event.
class NodeContext {
 public:
  virtual ~NodeContext() = default;
  virtual Micros now() const = 0;
  virtual void send(NodeId dst, MessageKind kind, Bytes payload) = 0;
  /// Schedules a timer and returns its generation, unique per node.
  virtual std::uint64_t arm_timer(std::uint32_t timer, Micros at) = 0;
};

}  // namespace pohar::sim
