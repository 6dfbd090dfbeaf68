#include "pohar/node.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <random>
#include <set>

#include <fmt/format.h>

namespace pohar::node {

namespace {

// Per-node timers.
constexpr std::uint32_t kNetTimeout = 0;
constexpr std::uint32_t kNetHeartbeat = 1;
constexpr std::uint32_t kGroupTimeout = 2;
constexpr std::uint32_t kGroupHeartbeat = 3;
constexpr std::uint32_t kGossipTimer = 4;
constexpr std::uint32_t kClusterTimer = 5;
constexpr std::uint32_t kInferTimer = 6;

// World timers live on the broadcast pseudo-node.
constexpr std::uint32_t kRoundStart = 0;
constexpr std::uint32_t kRoundEnd = 1;
constexpr std::uint32_t kFaultTimer = 2;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Micros to_micros(double seconds) { return static_cast<Micros>(std::llround(seconds * 1e6)); }

std::string opt_str(const std::optional<Micros>& v) {
  return v ? std::to_string(*v) : std::string();
}

std::string opt_str(const std::optional<NodeId>& v, int) {
  return v ? std::to_string(*v) : std::string();
}

bool is_election(sim::MessageKind k) {
  return k == sim::MessageKind::RequestVote || k == sim::MessageKind::VoteGrant ||
         k == sim::MessageKind::Heartbeat;
}

std::map<NodeId, std::vector<double>> embeddings_for(const crdt::ReplicaState& r,
                                                     std::uint32_t round) {
  std::map<NodeId, std::vector<double>> out;
  for (const auto& [tag, bytes] : r.main_set()) {
    try {
      auto e = decode_embedding(bytes);
      if (e && e->round == round) out[e->sensor] = std::move(e->vector);
    } catch (const DecodeError&) {
    }
  }
  return out;
}

std::optional<AssignmentElement> best_assignment(const crdt::ReplicaState& r, std::uint32_t round) {
  std::optional<AssignmentElement> best;
  for (const auto& [tag, bytes] : r.main_set()) {
    try {
      auto a = decode_assignment(bytes);
      if (!a || a->record.round != round) continue;
      if (!best || std::pair(a->term, a->leader) > std::pair(best->term, best->leader)) best = a;
    } catch (const DecodeError&) {
    }
  }
  return best;
}

std::optional<ResultElement> find_result(const crdt::ReplicaState& r, const AssignmentElement& a,
                                         clustering::ClusterLabel group) {
  for (const auto& [tag, bytes] : r.main_set()) {
    try {
      auto res = decode_result(bytes);
      if (res && res->round == a.record.round && res->group == group &&
          res->assignment_leader == a.leader && res->assignment_term == a.term) {
        return res;
      }
    } catch (const DecodeError&) {
    }
  }
  return std::nullopt;
}

const clustering::GroupRecord* group_of(const AssignmentElement& a, NodeId id) {
  for (const auto& g : a.record.groups) {
    if (std::binary_search(g.member_ids.begin(), g.member_ids.end(), id)) return &g;
  }
  return nullptr;
}

}  // namespace

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::Electing: return "electing";
    case Phase::Sharing: return "sharing";
    case Phase::Clustering: return "clustering";
    case Phase::GroupElecting: return "group-electing";
    case Phase::Inferring: return "inferring";
  }
  return "?";
}

void PipelineConfig::validate() const {
  channel.validate();
  timing.validate();
  if (!(clustering.theta > 0) || !std::isfinite(clustering.theta)) {
    throw std::invalid_argument("clustering theta must be positive and finite");
  }
  if (clustering.k == 0) throw std::invalid_argument("clustering k must be at least 1");
  if (gossip_period == 0) throw std::invalid_argument("gossip period must be positive");
  if (gossip_jitter >= gossip_period) throw std::invalid_argument("gossip jitter must be below the period");
  if (share_window >= active_span) throw std::invalid_argument("share window must end before the round does");
  if (active_span > round_period) throw std::invalid_argument("active span exceeds the round period");
}

Fault parse_fault(std::string_view text) {
  auto first = text.find(':');
  auto second = first == std::string_view::npos ? first : text.find(':', first + 1);
  if (second == std::string_view::npos) {
    throw std::invalid_argument(fmt::format("fault '{}' is not time:node:kill|revive", text));
  }
  std::string time_part(text.substr(0, first));
  std::string_view node_part = text.substr(first + 1, second - first - 1);
  std::string_view action = text.substr(second + 1);

  char* end = nullptr;
  double seconds = std::strtod(time_part.c_str(), &end);
  if (time_part.empty() || *end != '\0' || !(seconds >= 0) || !std::isfinite(seconds)) {
    throw std::invalid_argument(fmt::format("fault time '{}' is not a non-negative number", time_part));
  }
  NodeId node = 0;
  auto [ptr, ec] = std::from_chars(node_part.data(), node_part.data() + node_part.size(), node);
  if (ec != std::errc() || ptr != node_part.data() + node_part.size() || node_part.empty()) {
    throw std::invalid_argument(fmt::format("fault node '{}' is not an id", node_part));
  }
  Fault f;
  f.at = to_micros(seconds);
  f.node = node;
  if (action == "kill") {
    f.action = Fault::Action::Kill;
  } else if (action == "revive") {
    f.action = Fault::Action::Revive;
  } else {
    throw std::invalid_argument(fmt::format("fault action '{}' is not kill or revive", action));
  }
  return f;
}

Bytes encode(const EmbeddingElement& e) {
  ByteWriter w;
  w.u8(kEmbeddingElement);
  w.u32(e.round);
  w.u32(e.sensor);
  w.f64(e.window_end_s);
  w.u16(static_cast<std::uint16_t>(e.vector.size()));
  for (double x : e.vector) w.f64(x);
  return std::move(w).bytes();
}

Bytes encode(const AssignmentElement& e) {
  ByteWriter w;
  w.u8(kAssignmentElement);
  w.u32(e.leader);
  w.u32(e.term);
  w.raw(clustering::encode(e.record));
  return std::move(w).bytes();
}

Bytes encode(const ResultElement& e) {
  ByteWriter w;
  w.u8(kResultElement);
  w.u32(e.round);
  w.u32(e.group);
  w.u32(e.assignment_leader);
  w.u32(e.assignment_term);
  w.u32(e.group_leader);
  w.str16(e.label);
  return std::move(w).bytes();
}

std::optional<EmbeddingElement> decode_embedding(std::span<const std::uint8_t> data) {
  if (data.empty() || data[0] != kEmbeddingElement) return std::nullopt;
  ByteReader r(data.subspan(1));
  EmbeddingElement e;
  e.round = r.u32();
  e.sensor = r.u32();
  e.window_end_s = r.f64();
  e.vector.resize(r.u16());
  for (double& x : e.vector) x = r.f64();
  r.expect_done("embedding element");
  return e;
}

std::optional<AssignmentElement> decode_assignment(std::span<const std::uint8_t> data) {
  if (data.empty() || data[0] != kAssignmentElement) return std::nullopt;
  ByteReader r(data.subspan(1));
  AssignmentElement e;
  e.leader = r.u32();
  e.term = r.u32();
  e.record = clustering::decode_cluster_record(data.subspan(9));
  return e;
}

std::optional<ResultElement> decode_result(std::span<const std::uint8_t> data) {
  if (data.empty() || data[0] != kResultElement) return std::nullopt;
  ByteReader r(data.subspan(1));
  ResultElement e;
  e.round = r.u32();
  e.group = r.u32();
  e.assignment_leader = r.u32();
  e.assignment_term = r.u32();
  e.group_leader = r.u32();
  e.label = r.str16();
  r.expect_done("result element");
  return e;
}

std::size_t RoundReport::correct_predictions() const {
  return static_cast<std::size_t>(std::count_if(groups.begin(), groups.end(), [](const auto& g) {
    return g.predicted && *g.predicted == g.truth;
  }));
}

nlohmann::json RoundReport::to_json() const {
  using nlohmann::json;
  auto opt = [](const auto& v) -> json { return v ? json(*v) : json(nullptr); };
  json j;
  j["round"] = round;
  j["start_us"] = start;
  j["leader"] = opt(leader);
  j["leader_term"] = leader_term;
  j["groups"] = json::array();
  for (const auto& g : groups) {
    j["groups"].push_back({{"label", g.label},
                           {"members", g.members},
                           {"leader", opt(g.leader)},
                           {"predicted", opt(g.predicted)},
                           {"truth", g.truth},
                           {"result_us", opt(g.result_time)}});
  }
  j["consensus_latency_us"] = opt(consensus_latency);
  j["assignment_latency_us"] = opt(assignment_latency);
  j["completion_latency_us"] = opt(completion_latency);
  j["clustering"] = {{"iterations", clustering_iterations},
                     {"merges", clustering_merges},
                     {"refinements", clustering_refinements},
                     {"embeddings", embeddings_clustered}};
  j["recoveries"] = json::array();
  for (const auto& r : recoveries) {
    j["recoveries"].push_back({{"scope", r.scope},
                               {"failed", r.failed},
                               {"failed_at_us", r.failed_at},
                               {"successor", opt(r.successor)},
                               {"recovered_at_us", opt(r.recovered_at)}});
  }
  j["complete"] = complete;
  return j;
}

struct Pipeline::Node {
  NodeId id = 0;
  bool alive = true;
  std::uint32_t incarnation = 0;
  std::uint64_t generation = 0;
  crdt::ReplicaState replica;
  std::optional<election::ElectionDriver> network;
  std::optional<election::ElectionDriver> group;
  std::optional<AssignmentElement> assignment;
  std::vector<crdt::Tag> own_elements;  // this round's additions, removed at round end
  std::uint64_t gossip_gen = 0;
  std::uint64_t cluster_gen = 0;
  std::uint64_t infer_gen = 0;
  Micros group_leader_since = 0;
  std::mt19937_64 rng;
  Phase phase = Phase::Electing;

  explicit Node(NodeId node_id, std::uint64_t seed) : id(node_id), replica(node_id), rng(seed) {}
};

struct Pipeline::RoundLog {
  struct Assignment {
    Micros at = 0;
    AssignmentElement element;
    clustering::ClusterResult result;
    std::size_t embeddings = 0;
  };
  struct Result {
    Micros at = 0;
    NodeId group_leader = 0;
    std::string label;
  };
  // (assignment leader, assignment term, group)
  using GroupKey = std::tuple<NodeId, std::uint32_t, clustering::ClusterLabel>;

  Micros start = 0;
  std::map<NodeId, crdt::Tag> shared;
  std::vector<Assignment> assignments;
  std::map<GroupKey, Result> results;
  std::map<GroupKey, NodeId> group_leaders;
  std::optional<Micros> consensus;
  bool ended = false;
};

class Pipeline::Context final : public sim::NodeContext {
 public:
  Context(sim::Simulator& s, Node& n) : sim_(s), n_(n) {}

  Micros now() const override { return sim_.now(); }

  void send(NodeId dst, sim::MessageKind kind, Bytes payload) override {
    sim_.send(sim::SimMessage{n_.id, dst, kind, std::move(payload), 0});
  }

  std::uint64_t arm_timer(std::uint32_t timer, Micros at) override {
    std::uint64_t gen = ++n_.generation;
    sim_.set_timer(at, n_.id, timer, gen);
    return gen;
  }

 private:
  sim::Simulator& sim_;
  Node& n_;
};

Pipeline::Pipeline(sensing::Scenario scenario, inference::ModelBundle model, PipelineConfig config)
    : scenario_(std::move(scenario)), model_(std::move(model)), config_(config) {
  scenario_.validate();
  config_.validate();
  if (model_.feature_dim != config_.embedding.dim) {
    throw std::invalid_argument(fmt::format("model expects {} features but embeddings have {}",
                                            model_.feature_dim, config_.embedding.dim));
  }
  measurements_ = sensing::generate(scenario_, config_.seed, scenario_.duration_s);
  for (const auto& s : scenario_.sensors) ids_.push_back(s.id);
  std::sort(ids_.begin(), ids_.end());

  sim::ChannelConfig channel = config_.channel;
  channel.rng_seed = mix(config_.seed ^ 0x6368616e6e656cull);
  sim_ = std::make_unique<sim::Simulator>(channel, ids_);

  for (NodeId id : ids_) {
    nodes_.emplace(id, std::make_unique<Node>(id, mix(config_.seed ^ mix(0x676f7373ull + id))));
  }
  for (auto& [id, n] : nodes_) {
    n->network.emplace(make_network_driver(*n));
    Context ctx(*sim_, *n);
    n->network->start(ctx);
  }
}

Pipeline::~Pipeline() = default;

const sim::Trace& Pipeline::trace() const { return sim_->trace(); }
Micros Pipeline::now() const { return sim_->now(); }

Micros Pipeline::round_start(std::uint32_t round) const {
  double first = static_cast<double>(config_.embedding.window_samples) * scenario_.sample_period_s;
  return to_micros(first) + static_cast<Micros>(round) * config_.round_period;
}

Pipeline::Node& Pipeline::node(NodeId id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw std::out_of_range(fmt::format("unknown node {}", id));
  return *it->second;
}

const Pipeline::Node& Pipeline::node(NodeId id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw std::out_of_range(fmt::format("unknown node {}", id));
  return *it->second;
}

bool Pipeline::alive(NodeId id) const { return node(id).alive; }
Phase Pipeline::phase(NodeId id) const { return node(id).phase; }
const crdt::ReplicaState& Pipeline::replica(NodeId id) const { return node(id).replica; }
const election::ElectionState& Pipeline::network_election(NodeId id) const {
  return node(id).network->state();
}

std::optional<NodeId> Pipeline::network_leader() const {
  std::optional<NodeId> best;
  std::uint32_t best_term = 0;
  for (const auto& [id, n] : nodes_) {
    if (!n->alive) continue;
    const auto& st = n->network->state();
    if (st.role() == election::Role::Leader && (!best || st.current_term() > best_term)) {
      best = id;
      best_term = st.current_term();
    }
  }
  return best;
}

election::ElectionDriver Pipeline::make_network_driver(const Node& n) const {
  std::set<NodeId> peers(ids_.begin(), ids_.end());
  std::uint64_t seed = mix(config_.seed ^ mix(n.id) ^ (std::uint64_t{n.incarnation} << 40));
  return election::ElectionDriver(election::ElectionState(n.id, std::move(peers), config_.timing, seed),
                                  election::Scope{}, kNetTimeout, kNetHeartbeat);
}

void Pipeline::schedule(const Fault& fault) {
  node(fault.node);  // existence check
  if (fault.at < sim_->now()) throw std::invalid_argument("fault scheduled in the past");
  faults_.push_back(fault);
  sim_->set_timer(fault.at, sim::kBroadcast, kFaultTimer, faults_.size() - 1);
}

void Pipeline::run(Micros until) {
  for (;;) {
    Micros start = round_start(next_round_);
    if (start < sim_->now() || start + config_.active_span > until) break;
    sim_->set_timer(start, sim::kBroadcast, kRoundStart, next_round_);
    sim_->set_timer(start + config_.active_span, sim::kBroadcast, kRoundEnd, next_round_);
    ++next_round_;
  }
  sim_->run_until(until, [this](const sim::SimEvent& ev) { dispatch(ev); });
  // Recoveries may close after their round's report was written.
  for (auto& report : reports_) {
    report.recoveries.clear();
    for (const auto& r : recoveries_) {
      if (r.round == report.round) report.recoveries.push_back(r);
    }
  }
}

void Pipeline::dispatch(const sim::SimEvent& ev) {
  if (const auto* t = std::get_if<sim::TimerFired>(&ev.body)) {
    if (t->node == sim::kBroadcast) {
      on_world_timer(*t);
      return;
    }
    Node& n = node(t->node);
    if (n.alive) on_node_timer(n, *t);
    return;
  }
  const auto& d = std::get<sim::Delivery>(ev.body);
  auto it = nodes_.find(d.recipient);
  if (it == nodes_.end() || !it->second->alive) return;
  on_delivery(*it->second, d.msg);
}

void Pipeline::on_world_timer(const sim::TimerFired& t) {
  switch (t.timer) {
    case kRoundStart: start_round(static_cast<std::uint32_t>(t.generation)); break;
    case kRoundEnd: end_round(static_cast<std::uint32_t>(t.generation)); break;
    case kFaultTimer: apply_fault(faults_.at(t.generation)); break;
    default: break;
  }
}

void Pipeline::on_node_timer(Node& n, const sim::TimerFired& t) {
  Context ctx(*sim_, n);
  switch (t.timer) {
    case kNetTimeout:
    case kNetHeartbeat:
      if (auto fx = n.network->on_timer(ctx, t.timer, t.generation)) observe_network(n, *fx);
      break;
    case kGroupTimeout:
    case kGroupHeartbeat:
      if (n.group) {
        if (auto fx = n.group->on_timer(ctx, t.timer, t.generation)) observe_group(n, *fx);
      }
      break;
    case kGossipTimer:
      if (t.generation == n.gossip_gen) {
        gossip(n);
        arm_gossip(n);
      }
      break;
    case kClusterTimer:
      if (t.generation == n.cluster_gen && current_round_) {
        n.cluster_gen = 0;
        if (n.network->state().role() == election::Role::Leader) leader_cluster(n, *current_round_);
      }
      break;
    case kInferTimer:
      if (t.generation == n.infer_gen) {
        n.infer_gen = 0;
        try_infer(n);
      }
      break;
    default: break;
  }
}

void Pipeline::on_delivery(Node& n, const sim::SimMessage& msg) {
  if (is_election(msg.kind)) {
    election::ElectionMessage em;
    try {
      em = election::decode(msg.kind, msg.payload);
    } catch (const DecodeError&) {
      return;
    }
    Context ctx(*sim_, n);
    if (em.scope.kind == election::Scope::Network) {
      observe_network(n, n.network->on_message(ctx, em));
    } else if (n.group && em.scope == n.group->scope()) {
      observe_group(n, n.group->on_message(ctx, em));
    }
    return;
  }
  crdt::GossipMessage g;
  try {
    g = crdt::decode_gossip(msg.payload);
  } catch (const DecodeError&) {
    return;
  }
  auto stats = n.replica.merge(g.snapshot);
  if (stats.new_adds + stats.new_removes > 0) merged(n);
}

void Pipeline::start_round(std::uint32_t round) {
  current_round_ = round;
  auto log = std::make_unique<RoundLog>();
  log->start = sim_->now();
  rounds_[round] = std::move(log);
  // Network failures between rounds are reported with the round that follows.
  if (open_network_recovery_) recoveries_[*open_network_recovery_].round = round;

  for (auto& [id, n] : nodes_) {
    if (!n->alive) continue;
    n->phase = n->network->state().known_leader() ? Phase::Sharing : Phase::Electing;
    share_embedding(*n, round);
    arm_gossip(*n);
    Context ctx(*sim_, *n);
    n->cluster_gen = ctx.arm_timer(kClusterTimer, sim_->now() + config_.share_window);
  }
  check_consensus();
}

void Pipeline::end_round(std::uint32_t round) {
  for (auto& [id, n] : nodes_) {
    if (!n->alive) continue;
    if (!n->own_elements.empty()) {
      crdt::Snapshot removes;
      for (const auto& tag : n->own_elements) {
        n->replica.local_remove(tag);
        removes.removes.insert(tag);
      }
      n->own_elements.clear();
      Context ctx(*sim_, *n);
      ctx.send(sim::kBroadcast, sim::MessageKind::Gossip, crdt::encode_gossip(n->id, removes));
    }
    if (n->group) n->group->stop();
    n->group.reset();
    n->assignment.reset();
    n->gossip_gen = n->cluster_gen = n->infer_gen = 0;
    n->phase = n->network->state().known_leader() ? Phase::Sharing : Phase::Electing;
  }
  rounds_.at(round)->ended = true;
  finish_report(round);
  current_round_.reset();
}

void Pipeline::apply_fault(const Fault& f) {
  Node& n = node(f.node);
  if (f.action == Fault::Action::Kill) {
    if (!n.alive) return;
    bool was_leader = network_leader() == n.id;
    n.alive = false;
    n.network->stop();
    bool led_group = n.group && n.group->state().role() == election::Role::Leader;
    if (n.group) n.group->stop();
    n.gossip_gen = n.cluster_gen = n.infer_gen = 0;

    std::uint32_t attributed = 0;
    if (current_round_) {
      attributed = *current_round_;
    } else {
      while (round_start(attributed) <= sim_->now()) ++attributed;
    }
    if (was_leader && !open_network_recovery_) {
      recoveries_.push_back(RecoveryEvent{attributed, "network", n.id, sim_->now(), {}, {}});
      open_network_recovery_ = recoveries_.size() - 1;
    }
    if (led_group && n.assignment && current_round_) {
      const auto* g = group_of(*n.assignment, n.id);
      const auto& log = *rounds_.at(*current_round_);
      if (g && !log.results.contains({n.assignment->leader, n.assignment->term, g->group_label})) {
        recoveries_.push_back(RecoveryEvent{attributed, fmt::format("group:{}", g->group_label),
                                            n.id, sim_->now(), {}, {}});
      }
    }
    return;
  }

  if (n.alive) return;
  // Reboot: volatile state is lost, the tag counter is not.
  std::uint32_t counter = n.replica.next_counter();
  n.alive = true;
  ++n.incarnation;
  n.replica = crdt::ReplicaState(n.id, counter);
  n.group.reset();
  n.assignment.reset();
  n.own_elements.clear();
  n.phase = Phase::Electing;
  n.network.emplace(make_network_driver(n));
  Context ctx(*sim_, n);
  n.network->start(ctx);
  if (current_round_) {
    share_embedding(n, *current_round_);
    arm_gossip(n);
  }
}

void Pipeline::share_embedding(Node& n, std::uint32_t round) {
  const std::size_t length = config_.embedding.window_samples;
  auto end_sample = static_cast<std::size_t>(
      std::llround(static_cast<double>(sim_->now()) / 1e6 / measurements_.sample_period_s));
  auto idx = measurements_.index_of(n.id);
  if (!idx || end_sample > measurements_.samples() || end_sample < length) return;  // degraded
  sensing::Embedding e = sensing::embed(measurements_.window(*idx, end_sample, length), config_.embedding);
  EmbeddingElement element{round, n.id, e.window_end_time_s, std::move(e.vector)};
  crdt::TaggedElement te = n.replica.local_add(encode(element));
  n.own_elements.push_back(te.tag);
  rounds_.at(round)->shared[n.id] = te.tag;
  broadcast_element(n, sim::MessageKind::EmbeddingShare, te);
  check_consensus();
}

void Pipeline::broadcast_element(Node& n, sim::MessageKind kind, const crdt::TaggedElement& e) {
  Context ctx(*sim_, n);
  ctx.send(sim::kBroadcast, kind, crdt::encode_gossip(n.id, crdt::delta_of(e)));
}

void Pipeline::arm_gossip(Node& n) {
  const Micros p = config_.gossip_period;
  const Micros j = config_.gossip_jitter;
  std::uniform_int_distribution<Micros> jitter(p - j, p + j);
  Context ctx(*sim_, n);
  n.gossip_gen = ctx.arm_timer(kGossipTimer, sim_->now() + jitter(n.rng));
}

void Pipeline::gossip(Node& n) {
  // Live elements plus tombstones; a removed addition is never needed again.
  crdt::Snapshot s;
  s.adds = n.replica.main_set();
  s.removes = n.replica.rem_set();
  Context ctx(*sim_, n);
  ctx.send(sim::kBroadcast, sim::MessageKind::Gossip, crdt::encode_gossip(n.id, s));
}

void Pipeline::merged(Node& n) {
  check_consensus();
  if (!current_round_) return;
  adopt_assignment(n);
  check_result(n);
}

void Pipeline::leader_cluster(Node& n, std::uint32_t round) {
  if (!n.alive || n.network->state().role() != election::Role::Leader) {
    throw ContractError(fmt::format("node {} is not the network leader", n.id));
  }
  if (best_assignment(n.replica, round)) return;
  auto embeddings = embeddings_for(n.replica, round);
  if (embeddings.empty()) {
    Context ctx(*sim_, n);
    n.cluster_gen = ctx.arm_timer(kClusterTimer, sim_->now() + config_.gossip_period);
    return;
  }
  n.phase = Phase::Clustering;
  std::vector<clustering::Point> points;
  for (auto& [id, v] : embeddings) points.push_back(clustering::Point{id, v});
  clustering::ClusterResult result = clustering::cluster(points, config_.clustering);

  AssignmentElement a;
  a.leader = n.id;
  a.term = n.network->state().current_term();
  a.record.round = round;
  for (const auto& c : result.clusters) a.record.groups.push_back({c.label, c.members});
  for (NodeId id : ids_) {
    if (!embeddings.contains(id)) a.record.groups.push_back({id, {id}});
  }
  std::sort(a.record.groups.begin(), a.record.groups.end(),
            [](const auto& x, const auto& y) { return x.group_label < y.group_label; });

  crdt::TaggedElement te = n.replica.local_add(encode(a));
  n.own_elements.push_back(te.tag);
  rounds_.at(round)->assignments.push_back({sim_->now(), a, std::move(result), embeddings.size()});
  broadcast_element(n, sim::MessageKind::GroupAssign, te);
  n.phase = Phase::Sharing;
  adopt_assignment(n);
}

void Pipeline::adopt_assignment(Node& n) {
  if (!current_round_) return;
  auto best = best_assignment(n.replica, *current_round_);
  if (!best) return;
  if (n.assignment && n.assignment->leader == best->leader && n.assignment->term == best->term) return;
  if (n.group) n.group->stop();
  n.group.reset();
  n.infer_gen = 0;
  n.assignment = std::move(best);
  const auto* g = group_of(*n.assignment, n.id);
  if (!g) return;  // left out of this assignment

  std::set<NodeId> peers(g->member_ids.begin(), g->member_ids.end());
  std::uint64_t seed = mix(config_.seed ^ mix(n.id) ^ mix(0x67726f7570ull + *current_round_) ^
                           (std::uint64_t{n.incarnation} << 40) ^ n.assignment->term);
  election::Scope scope{election::Scope::Group, *current_round_, g->group_label};
  n.group.emplace(election::ElectionState(n.id, std::move(peers), config_.timing, seed), scope,
                  kGroupTimeout, kGroupHeartbeat);
  Context ctx(*sim_, n);
  n.group->start(ctx);
  n.phase = Phase::GroupElecting;
  check_result(n);
}

void Pipeline::check_result(Node& n) {
  if (!n.group || !n.assignment || !n.group->running()) return;
  if (n.group->state().role() == election::Role::Leader) return;  // keeps leading until round end
  if (find_result(n.replica, *n.assignment, n.group->scope().group)) {
    n.group->stop();
    n.phase = Phase::Sharing;
  }
}

void Pipeline::observe_network(Node& n, const election::Effects& fx) {
  if (!fx.became_leader) return;
  if (open_network_recovery_) {
    auto& r = recoveries_[*open_network_recovery_];
    r.successor = n.id;
    r.recovered_at = sim_->now();
    open_network_recovery_.reset();
  }
  if (!current_round_) return;
  const Micros share_end = rounds_.at(*current_round_)->start + config_.share_window;
  if (sim_->now() >= share_end && !best_assignment(n.replica, *current_round_)) {
    // Took over mid-round: let gossip refill the replica, then cluster.
    Context ctx(*sim_, n);
    n.cluster_gen = ctx.arm_timer(kClusterTimer, sim_->now() + 4 * config_.gossip_period);
  }
}

void Pipeline::close_group_recovery(std::uint32_t round, clustering::ClusterLabel group, NodeId leader) {
  std::string scope = fmt::format("group:{}", group);
  for (auto& r : recoveries_) {
    if (r.round == round && r.scope == scope && !r.recovered_at && r.failed != leader) {
      r.successor = leader;
      r.recovered_at = sim_->now();
    }
  }
}

void Pipeline::observe_group(Node& n, const election::Effects& fx) {
  if (!fx.became_leader || !n.assignment || !current_round_) return;
  auto label = n.group->scope().group;
  auto& log = *rounds_.at(*current_round_);
  log.group_leaders[{n.assignment->leader, n.assignment->term, label}] = n.id;
  close_group_recovery(*current_round_, label, n.id);
  n.group_leader_since = sim_->now();
  n.phase = Phase::Inferring;
  Context ctx(*sim_, n);
  n.infer_gen = ctx.arm_timer(kInferTimer, sim_->now() + config_.inference_delay);
}

void Pipeline::try_infer(Node& n) {
  if (!n.group || !n.assignment || !current_round_ ||
      n.group->state().role() != election::Role::Leader) {
    return;
  }
  const auto* g = group_of(*n.assignment, n.id);
  if (!g || find_result(n.replica, *n.assignment, g->group_label)) {
    n.phase = Phase::Sharing;
    return;
  }
  auto all = embeddings_for(n.replica, *current_round_);
  std::vector<std::vector<double>> members;
  for (NodeId m : g->member_ids) {
    auto it = all.find(m);
    if (it != all.end()) members.push_back(it->second);
  }
  bool patient = sim_->now() - n.group_leader_since < config_.inference_patience;
  if (members.size() < g->member_ids.size() && (patient || members.empty())) {
    Context ctx(*sim_, n);
    n.infer_gen = ctx.arm_timer(kInferTimer, sim_->now() + config_.gossip_period);
    return;
  }

  std::size_t label_index = 0;
  if (config_.per_member_vote) {
    std::vector<std::size_t> votes(model_.labels.size(), 0);
    for (const auto& m : members) ++votes[inference::predict(model_, m).label];
    label_index = static_cast<std::size_t>(
        std::max_element(votes.begin(), votes.end()) - votes.begin());
  } else {
    label_index = inference::predict(model_, inference::aggregate(members)).label;
  }

  ResultElement res{*current_round_, g->group_label, n.assignment->leader, n.assignment->term,
                    n.id, model_.labels[label_index]};
  crdt::TaggedElement te = n.replica.local_add(encode(res));
  n.own_elements.push_back(te.tag);
  auto& log = *rounds_.at(*current_round_);
  log.results.emplace(RoundLog::GroupKey{res.assignment_leader, res.assignment_term, res.group},
                      RoundLog::Result{sim_->now(), n.id, res.label});
  broadcast_element(n, sim::MessageKind::InferenceResult, te);
  n.phase = Phase::Sharing;
}

void Pipeline::check_consensus() {
  if (!current_round_) return;
  auto& log = *rounds_.at(*current_round_);
  if (log.consensus) return;
  for (const auto& [id, n] : nodes_) {
    if (!n->alive) continue;
    for (const auto& [sensor, tag] : log.shared) {
      if (!node(sensor).alive) continue;
      if (!n->replica.contains(tag)) return;
    }
  }
  log.consensus = sim_->now() - log.start;
}

void Pipeline::finish_report(std::uint32_t round) {
  const RoundLog& log = *rounds_.at(round);
  RoundReport rep;
  rep.round = round;
  rep.start = log.start;
  rep.consensus_latency = log.consensus;

  const RoundLog::Assignment* final_assignment = nullptr;
  for (const auto& a : log.assignments) {
    if (!final_assignment || std::pair(a.element.term, a.element.leader) >
                                 std::pair(final_assignment->element.term, final_assignment->element.leader)) {
      final_assignment = &a;
    }
  }
  if (!final_assignment) {
    rep.leader = network_leader();
    if (rep.leader) rep.leader_term = node(*rep.leader).network->state().current_term();
    reports_.push_back(std::move(rep));
    return;
  }

  const AssignmentElement& a = final_assignment->element;
  rep.leader = a.leader;
  rep.leader_term = a.term;
  rep.assignment_latency = final_assignment->at - log.start;
  rep.clustering_iterations = final_assignment->result.iterations;
  rep.clustering_merges = final_assignment->result.merges.size();
  rep.clustering_refinements = final_assignment->result.refinements;
  rep.embeddings_clustered = final_assignment->embeddings;

  auto end_sample = static_cast<std::size_t>(
      std::llround(static_cast<double>(log.start) / 1e6 / measurements_.sample_period_s));
  double truth_time = static_cast<double>(end_sample - std::min(end_sample, std::size_t{1})) *
                      measurements_.sample_period_s;

  bool complete = true;
  std::set<NodeId> seen;
  for (const auto& g : a.record.groups) {
    GroupOutcome out;
    out.label = g.group_label;
    out.members = g.member_ids;
    for (NodeId m : g.member_ids) {
      if (!seen.insert(m).second) complete = false;  // sensor in two groups
    }
    RoundLog::GroupKey key{a.leader, a.term, g.group_label};
    if (auto it = log.group_leaders.find(key); it != log.group_leaders.end()) out.leader = it->second;
    if (auto it = log.results.find(key); it != log.results.end()) {
      out.predicted = it->second.label;
      out.result_time = it->second.at - log.start;
      rep.completion_latency = std::max(rep.completion_latency.value_or(0), *out.result_time);
    }
    // Majority ground truth over members; ties go to the earlier declared label.
    std::map<std::string, std::size_t> votes;
    for (NodeId m : g.member_ids) ++votes[sensing::ground_truth_label(scenario_, m, truth_time)];
    std::size_t best = 0;
    for (const auto& label : scenario_.labels) {
      auto it = votes.find(label);
      if (it != votes.end() && it->second > best) {
        best = it->second;
        out.truth = label;
      }
    }
    bool needs_result = std::any_of(g.member_ids.begin(), g.member_ids.end(), [&](NodeId m) {
      return log.shared.contains(m) && node(m).alive;
    });
    if (needs_result && !out.predicted) complete = false;
    rep.groups.push_back(std::move(out));
  }
  for (NodeId id : ids_) {
    if (node(id).alive && !seen.contains(id)) complete = false;
  }
  rep.complete = complete;
  reports_.push_back(std::move(rep));
}

void write_summary_csv(const std::vector<RoundReport>& reports, std::ostream& out) {
  out << "round,start_us,leader,leader_term,groups,predicted_groups,correct_groups,"
         "consensus_latency_us,assignment_latency_us,completion_latency_us,"
         "clustering_iterations,clustering_merges,clustering_refinements,embeddings,"
         "recoveries,max_recovery_us,complete\n";
  for (const auto& r : reports) {
    auto predicted = std::count_if(r.groups.begin(), r.groups.end(),
                                   [](const auto& g) { return g.predicted.has_value(); });
    std::optional<Micros> worst;
    for (const auto& ev : r.recoveries) {
      if (auto t = ev.recovery_time()) worst = std::max(worst.value_or(0), *t);
    }
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.round, r.start,
                       opt_str(r.leader, 0), r.leader_term, r.groups.size(), predicted,
                       r.correct_predictions(), opt_str(r.consensus_latency),
                       opt_str(r.assignment_latency), opt_str(r.completion_latency),
                       r.clustering_iterations, r.clustering_merges, r.clustering_refinements,
                       r.embeddings_clustered, r.recoveries.size(), opt_str(worst),
                       r.complete ? 1 : 0);
  }
}

void write_rounds_jsonl(const std::vector<RoundReport>& reports, std::ostream& out) {
  for (const auto& r : reports) out << r.to_json().dump() << '\n';
}

void write_recoveries_csv(const std::vector<RecoveryEvent>& events, std::ostream& out) {
  out << "round,scope,failed,failed_at_us,successor,recovered_at_us,recovery_us\n";
  for (const auto& e : events) {
    out << fmt::format("{},{},{},{},{},{},{}\n", e.round, e.scope, e.failed, e.failed_at,
                       opt_str(e.successor, 0), opt_str(e.recovered_at), opt_str(e.recovery_time()));
  }
}

}  // namespace pohar::node
