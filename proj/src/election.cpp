#include "pohar/election.hpp"

#include <fmt/format.h>

namespace pohar::election {

const char* to_string(Role role) {
  switch (role) {
    case Role::Follower: return "Follower";
    case Role::Candidate: return "Candidate";
    case Role::Leader: return "Leader";
  }
  return "?";
}

void ElectionTiming::validate() const {
  if (timeout_min > timeout_max) {
    throw std::invalid_argument(
        fmt::format("timeout_min {} exceeds timeout_max {}", timeout_min, timeout_max));
  }
  if (timeout_min <= 2 * heartbeat_interval) {
    throw std::invalid_argument(fmt::format(
        "timeout_min {} must exceed twice the heartbeat interval {}", timeout_min,
        heartbeat_interval));
  }
  if (heartbeat_interval == 0) throw std::invalid_argument("heartbeat interval must be positive");
}

Bytes encode(const ElectionMessage& msg) {
  ByteWriter out;
  out.u32(msg.term);
  out.u32(msg.sender);
  out.u8(msg.scope.kind);
  out.u32(msg.scope.round);
  out.u32(msg.scope.group);
  return std::move(out).bytes();
}

ElectionMessage decode(sim::MessageKind kind, std::span<const std::uint8_t> data) {
  using sim::MessageKind;
  if (kind != MessageKind::RequestVote && kind != MessageKind::VoteGrant &&
      kind != MessageKind::Heartbeat) {
    throw DecodeError(fmt::format("{} is not an election message", sim::to_string(kind)));
  }
  ByteReader in(data);
  ElectionMessage msg;
  msg.kind = kind;
  msg.term = in.u32();
  msg.sender = in.u32();
  auto scope_kind = in.u8();
  if (scope_kind > Scope::Group) throw DecodeError("unknown election scope");
  msg.scope.kind = static_cast<Scope::Kind>(scope_kind);
  msg.scope.round = in.u32();
  msg.scope.group = in.u32();
  in.expect_done("election message");
  return msg;
}

ElectionState::ElectionState(NodeId self, std::set<NodeId> peers, ElectionTiming timing,
                             std::uint64_t seed)
    : self_(self), peers_(std::move(peers)), timing_(timing), rng_(seed) {
  timing_.validate();
  if (!peers_.contains(self_)) {
    throw std::invalid_argument(fmt::format("peer set must contain self ({})", self_));
  }
  redraw_timeout();
}

void ElectionState::redraw_timeout() {
  std::uniform_int_distribution<Micros> dist(timing_.timeout_min, timing_.timeout_max);
  timeout_ = dist(rng_);
}

std::vector<Outbound> ElectionState::to_peers(sim::MessageKind kind) const {
  std::vector<Outbound> out;
  for (NodeId p : peers_) {
    if (p != self_) out.push_back(Outbound{p, kind, term_});
  }
  return out;
}

void ElectionState::adopt_term(std::uint32_t term, Effects& fx) {
  if (role_ != Role::Follower) fx.stepped_down = true;
  term_ = term;
  role_ = Role::Follower;
  voted_for_.reset();
  votes_.clear();
  leader_.reset();
  redraw_timeout();
}

Effects ElectionState::on_timeout() {
  Effects fx;
  if (role_ == Role::Leader) return fx;
  ++term_;
  role_ = Role::Candidate;
  voted_for_ = self_;
  votes_ = {self_};
  leader_.reset();
  redraw_timeout();
  fx.reset_timer = true;
  if (has_majority()) {
    role_ = Role::Leader;
    leader_ = self_;
    fx.became_leader = true;
    return fx;
  }
  fx.messages = to_peers(sim::MessageKind::RequestVote);
  return fx;
}

Effects ElectionState::on_request_vote(NodeId candidate, std::uint32_t candidate_term) {
  Effects fx;
  if (candidate_term > term_) adopt_term(candidate_term, fx);
  if (candidate_term < term_) return fx;
  if (!voted_for_ || *voted_for_ == candidate) {
    voted_for_ = candidate;
    fx.reset_timer = true;
    fx.messages.push_back(Outbound{candidate, sim::MessageKind::VoteGrant, term_});
  }
  return fx;
}

Effects ElectionState::on_vote_grant(NodeId voter, std::uint32_t term) {
  Effects fx;
  if (term > term_) {
    adopt_term(term, fx);
    return fx;
  }
  if (role_ != Role::Candidate || term != term_ || !peers_.contains(voter)) return fx;
  votes_.insert(voter);
  if (has_majority()) {
    role_ = Role::Leader;
    leader_ = self_;
    fx.became_leader = true;
    fx.messages = to_peers(sim::MessageKind::Heartbeat);
  }
  return fx;
}

Effects ElectionState::on_heartbeat(NodeId leader, std::uint32_t term) {
  Effects fx;
  if (term < term_) return fx;
  if (term > term_) {
    adopt_term(term, fx);
  } else if (role_ != Role::Follower) {
    // Same term, someone else won: step down without touching the vote.
    fx.stepped_down = true;
    role_ = Role::Follower;
    votes_.clear();
  }
  leader_ = leader;
  fx.reset_timer = true;
  return fx;
}

Effects ElectionState::heartbeat_tick() const {
  Effects fx;
  if (role_ == Role::Leader) fx.messages = to_peers(sim::MessageKind::Heartbeat);
  return fx;
}

ElectionDriver::ElectionDriver(ElectionState state, Scope scope, std::uint32_t timeout_timer,
                               std::uint32_t heartbeat_timer)
    : state_(std::move(state)),
      scope_(scope),
      timeout_timer_(timeout_timer),
      heartbeat_timer_(heartbeat_timer) {}

void ElectionDriver::start(sim::NodeContext& ctx) {
  running_ = true;
  arm_timeout(ctx);
}

void ElectionDriver::stop() {
  running_ = false;
  timeout_generation_ = 0;
  heartbeat_generation_ = 0;
}

void ElectionDriver::arm_timeout(sim::NodeContext& ctx) {
  timeout_generation_ = ctx.arm_timer(timeout_timer_, ctx.now() + state_.election_timeout());
}

void ElectionDriver::arm_heartbeat(sim::NodeContext& ctx) {
  heartbeat_generation_ =
      ctx.arm_timer(heartbeat_timer_, ctx.now() + state_.timing().heartbeat_interval);
}

void ElectionDriver::apply(sim::NodeContext& ctx, const Effects& fx) {
  for (const Outbound& o : fx.messages) {
    ctx.send(o.dst, o.kind, encode(ElectionMessage{o.kind, o.term, state_.self(), scope_}));
  }
  if (fx.became_leader) {
    timeout_generation_ = 0;
    arm_heartbeat(ctx);
  } else if (fx.reset_timer || fx.stepped_down) {
    heartbeat_generation_ = 0;
    arm_timeout(ctx);
  }
}

std::optional<Effects> ElectionDriver::on_timer(sim::NodeContext& ctx, std::uint32_t timer,
                                                std::uint64_t generation) {
  if (!running_ || generation == 0) return std::nullopt;
  if (timer == timeout_timer_ && generation == timeout_generation_) {
    Effects fx = state_.on_timeout();
    apply(ctx, fx);
    return fx;
  }
  if (timer == heartbeat_timer_ && generation == heartbeat_generation_) {
    Effects fx = state_.heartbeat_tick();
    apply(ctx, fx);
    if (state_.role() == Role::Leader) arm_heartbeat(ctx);
    return fx;
  }
  return std::nullopt;
}

Effects ElectionDriver::on_message(sim::NodeContext& ctx, const ElectionMessage& msg) {
  Effects fx;
  if (!running_ || !(msg.scope == scope_)) return fx;
  switch (msg.kind) {
    case sim::MessageKind::RequestVote: fx = state_.on_request_vote(msg.sender, msg.term); break;
    case sim::MessageKind::VoteGrant: fx = state_.on_vote_grant(msg.sender, msg.term); break;
    case sim::MessageKind::Heartbeat: fx = state_.on_heartbeat(msg.sender, msg.term); break;
    default: return fx;
  }
  apply(ctx, fx);
  return fx;
}

}  // namespace pohar::election
