#include "pohar/netsim.hpp"

#include <algorithm>
#include <ostream>

#include <fmt/format.h>

namespace pohar::sim {

std::string_view to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::Gossip: return "Gossip";
    case MessageKind::RequestVote: return "RequestVote";
    case MessageKind::VoteGrant: return "VoteGrant";
    case MessageKind::Heartbeat: return "Heartbeat";
    case MessageKind::EmbeddingShare: return "EmbeddingShare";
    case MessageKind::GroupAssign: return "GroupAssign";
    case MessageKind::InferenceResult: return "InferenceResult";
  }
  return "Unknown";
}

void ChannelConfig::validate() const {
  auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(drop_probability)) {
    throw std::invalid_argument(fmt::format("drop probability {} outside [0,1]", drop_probability));
  }
  if (!in_unit(duplicate_probability)) {
    throw std::invalid_argument(
        fmt::format("duplicate probability {} outside [0,1]", duplicate_probability));
  }
  if (delay_min > delay_max) {
    throw std::invalid_argument(
        fmt::format("delay_min {} exceeds delay_max {}", delay_min, delay_max));
  }
}

EventId EventQueue::schedule(Micros at, EventBody body) {
  if (at < now_) {
    throw SchedulingError(fmt::format("cannot schedule at {} us, clock is at {} us", at, now_));
  }
  EventId id = next_id_++;
  heap_.push(SimEvent{id, at, std::move(body)});
  return id;
}

std::optional<Micros> EventQueue::next_time() const {
  if (heap_.empty()) return std::nullopt;
  return heap_.top().at;
}

SimEvent EventQueue::pop() {
  if (heap_.empty()) throw SchedulingError("pop from empty event queue");
  SimEvent ev = heap_.top();
  heap_.pop();
  now_ = ev.at;
  return ev;
}

void Trace::write_csv(std::ostream& out) const {
  out << "time_us,src,dst,kind,size_bytes,dropped_flag\n";
  for (const auto& r : records) {
    out << fmt::format("{},{},{},{},{},{}\n", r.time_us, r.src, r.dst, to_string(r.kind),
                       r.size_bytes, r.dropped ? 1 : 0);
  }
}

Channel::Channel(ChannelConfig config) : config_(config), rng_(config.rng_seed) {
  config_.validate();
}

Micros Channel::draw_delay() {
  if (config_.delay_min == config_.delay_max) return config_.delay_min;
  std::uniform_int_distribution<Micros> delay(config_.delay_min, config_.delay_max);
  return delay(rng_);
}

std::size_t Channel::send_one(EventQueue& queue, const SimMessage& msg, NodeId recipient,
                              Trace* trace) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Draw order is fixed (loss, delay, duplicate, duplicate delay) so that a
  // seed pins the whole schedule.
  bool lost = unit(rng_) < config_.drop_probability;
  Micros delay = draw_delay();
  bool duplicated = unit(rng_) < config_.duplicate_probability;
  Micros dup_delay = draw_delay();

  std::size_t n = 0;
  if (lost) {
    if (trace) {
      trace->records.push_back(
          TraceRecord{msg.send_time, msg.src, recipient, msg.kind, msg.payload.size(), true});
      ++trace->dropped;
    }
  } else {
    queue.schedule(msg.send_time + delay, Delivery{recipient, msg});
    ++n;
  }
  if (duplicated) {
    queue.schedule(msg.send_time + dup_delay, Delivery{recipient, msg});
    ++n;
  }
  scheduled_ += n;
  return n;
}

std::size_t Channel::send(EventQueue& queue, const SimMessage& msg, std::span<const NodeId> peers,
                          Trace* trace) {
  if (msg.dst != kBroadcast) return send_one(queue, msg, msg.dst, trace);
  std::size_t n = 0;
  for (NodeId peer : peers) {
    if (peer != msg.src) n += send_one(queue, msg, peer, trace);
  }
  return n;
}

Simulator::Simulator(ChannelConfig config, std::vector<NodeId> nodes)
    : nodes_(std::move(nodes)), channel_(config) {
  std::sort(nodes_.begin(), nodes_.end());
  nodes_.erase(std::unique(nodes_.begin(), nodes_.end()), nodes_.end());
}

std::size_t Simulator::send(SimMessage msg) {
  msg.send_time = queue_.now();
  return channel_.send(queue_, msg, nodes_, &trace_);
}

EventId Simulator::set_timer(Micros at, NodeId node, std::uint32_t timer,
                             std::uint64_t generation) {
  return queue_.schedule(at, TimerFired{node, timer, generation});
}

RunOutcome Simulator::run_until(Micros limit, const Handler& handler, const Condition& until) {
  RunOutcome outcome;
  if (until && until()) {
    outcome.condition_met = true;
    return outcome;
  }
  while (!queue_.empty() && *queue_.next_time() <= limit) {
    SimEvent ev = queue_.pop();
    if (const auto* d = std::get_if<Delivery>(&ev.body)) {
      trace_.records.push_back(TraceRecord{ev.at, d->msg.src, d->recipient, d->msg.kind,
                                           d->msg.payload.size(), false});
      ++trace_.dispatched;
    }
    ++outcome.events;
    handler(ev);
    if (until && until()) {
      outcome.condition_met = true;
      return outcome;
    }
  }
  if (until) {
    outcome.timed_out = true;
    trace_.timed_out = true;
  }
  return outcome;
}

}  // namespace pohar::sim
