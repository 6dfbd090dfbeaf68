#include "pohar/election_sim.hpp"

#include <set>
#include <stdexcept>

#include <fmt/format.h>

namespace pohar::election {

namespace {

constexpr std::uint32_t kTimeoutTimer = 0;
constexpr std::uint32_t kHeartbeatTimer = 1;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

class ElectionCluster::Context final : public sim::NodeContext {
 public:
  Context(sim::Simulator& s, Member& m) : sim_(s), m_(m) {}

  Micros now() const override { return sim_.now(); }

  void send(NodeId dst, sim::MessageKind kind, Bytes payload) override {
    sim_.send(sim::SimMessage{m_.id, dst, kind, std::move(payload), 0});
  }

  std::uint64_t arm_timer(std::uint32_t timer, Micros at) override {
    std::uint64_t gen = ++m_.generation;
    sim_.set_timer(at, m_.id, timer, gen);
    return gen;
  }

 private:
  sim::Simulator& sim_;
  Member& m_;
};

ElectionCluster::ElectionCluster(std::vector<NodeId> nodes, sim::ChannelConfig channel,
                                 ElectionTiming timing, std::uint64_t seed)
    : ids_(std::move(nodes)), timing_(timing), seed_(seed), sim_(channel, ids_) {
  timing_.validate();
  for (NodeId id : ids_) {
    Member m;
    m.id = id;
    members_.emplace(id, std::move(m));
  }
  for (auto& [id, m] : members_) {
    m.driver.emplace(make_driver(id));
    Context ctx(sim_, m);
    m.driver->start(ctx);
    term_samples_.push_back(TermSample{sim_.now(), id, m.incarnation, 0});
  }
}

ElectionDriver ElectionCluster::make_driver(NodeId node) {
  const Member& m = members_.at(node);
  std::set<NodeId> peers(ids_.begin(), ids_.end());
  std::uint64_t node_seed = mix(seed_ ^ mix(node) ^ (std::uint64_t{m.incarnation} << 40));
  return ElectionDriver(ElectionState(node, std::move(peers), timing_, node_seed), Scope{},
                        kTimeoutTimer, kHeartbeatTimer);
}

void ElectionCluster::observe(Member& m, const Effects& fx) {
  const ElectionState& st = m.driver->state();
  if (st.current_term() != m.last_term) {
    m.last_term = st.current_term();
    term_samples_.push_back(TermSample{sim_.now(), m.id, m.incarnation, m.last_term});
  }
  if (fx.became_leader) {
    leader_events_.push_back(LeaderEvent{sim_.now(), m.id, st.current_term(), m.incarnation});
  }
}

void ElectionCluster::dispatch(const sim::SimEvent& ev) {
  if (const auto* t = std::get_if<sim::TimerFired>(&ev.body)) {
    Member& m = members_.at(t->node);
    if (!m.alive) return;
    Context ctx(sim_, m);
    if (auto fx = m.driver->on_timer(ctx, t->timer, t->generation)) observe(m, *fx);
    return;
  }
  const auto& d = std::get<sim::Delivery>(ev.body);
  auto it = members_.find(d.recipient);
  if (it == members_.end() || !it->second.alive) return;
  Member& m = it->second;
  ElectionMessage msg;
  try {
    msg = decode(d.msg.kind, d.msg.payload);
  } catch (const DecodeError&) {
    return;
  }
  Context ctx(sim_, m);
  observe(m, m.driver->on_message(ctx, msg));
}

sim::RunOutcome ElectionCluster::run_until(Micros limit, const sim::Simulator::Condition& until) {
  return sim_.run_until(limit, [this](const sim::SimEvent& ev) { dispatch(ev); }, until);
}

void ElectionCluster::kill(NodeId node) {
  Member& m = members_.at(node);
  m.alive = false;
  m.driver->stop();
}

void ElectionCluster::revive(NodeId node) {
  Member& m = members_.at(node);
  if (m.alive) return;
  m.alive = true;
  ++m.incarnation;
  m.last_term = 0;
  m.driver.emplace(make_driver(node));
  Context ctx(sim_, m);
  m.driver->start(ctx);
  term_samples_.push_back(TermSample{sim_.now(), node, m.incarnation, 0});
}

bool ElectionCluster::alive(NodeId node) const { return members_.at(node).alive; }

const ElectionState& ElectionCluster::state(NodeId node) const {
  return members_.at(node).driver->state();
}

std::optional<NodeId> ElectionCluster::current_leader() const {
  std::optional<NodeId> best;
  std::uint32_t best_term = 0;
  for (const auto& [id, m] : members_) {
    if (!m.alive) continue;
    const auto& st = m.driver->state();
    if (st.role() == Role::Leader && (!best || st.current_term() > best_term)) {
      best = id;
      best_term = st.current_term();
    }
  }
  return best;
}

std::optional<std::uint32_t> ElectionCluster::leader_term() const {
  auto l = current_leader();
  if (!l) return std::nullopt;
  return members_.at(*l).driver->state().current_term();
}

SafetyAudit audit_election_safety(const std::vector<LeaderEvent>& events) {
  std::map<std::uint32_t, std::pair<NodeId, std::uint32_t>> winner;
  for (const auto& e : events) {
    auto who = std::make_pair(e.node, e.incarnation);
    auto [it, fresh] = winner.emplace(e.term, who);
    if (!fresh && it->second != who) return SafetyAudit{false, e.term};
  }
  return {};
}

bool audit_term_monotonicity(const std::vector<TermSample>& samples) {
  std::map<std::pair<NodeId, std::uint32_t>, std::uint32_t> last;
  for (const auto& s : samples) {
    auto key = std::make_pair(s.node, s.incarnation);
    auto it = last.find(key);
    if (it != last.end() && s.term < it->second) return false;
    last[key] = s.term;
  }
  return true;
}

}  // namespace pohar::election
