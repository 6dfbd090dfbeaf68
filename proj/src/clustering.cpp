#include "pohar/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

namespace pohar::clustering {

namespace {

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

BoundedEdge exact_edge(double d) { return BoundedEdge{d, d, d, true}; }

// Eqs. 1-3: size-weighted average of two component edges.
BoundedEdge weighted(const BoundedEdge& ea, double wa, const BoundedEdge& eb, double wb) {
  const double total = wa + wb;
  BoundedEdge out;
  out.explicit_edge = ea.explicit_edge || eb.explicit_edge;
  if (ea.exact() && eb.exact()) {
    double d = (*ea.dist * wa + *eb.dist * wb) / total;
    out.dist = d;
    out.lower = d;
    out.upper = d;
    return out;
  }
  out.lower = (ea.lower * wa + eb.lower * wb) / total;
  out.upper = (ea.upper * wa + eb.upper * wb) / total;
  return out;
}

void validate_params(const ClusterParams& p) {
  if (std::isnan(p.theta) || p.theta < 0) {
    throw ClusteringError(fmt::format("theta must be non-negative, got {}", p.theta));
  }
  if (p.k == 0) throw ClusteringError("k must be at least 1");
}

}  // namespace

std::pair<ClusterLabel, ClusterLabel> ClusterGraph::key(ClusterLabel a, ClusterLabel b) {
  return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
}

ClusterGraph ClusterGraph::build(std::span<const Point> points, ClusterParams params) {
  validate_params(params);
  std::vector<const Point*> sorted;
  for (const Point& p : points) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(),
            [](const Point* a, const Point* b) { return a->id < b->id; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i]->id == sorted[i - 1]->id) {
      throw ClusteringError(fmt::format("duplicate sensor id {}", sorted[i]->id));
    }
  }
  for (const Point* p : sorted) {
    if (p->coords.size() != sorted.front()->coords.size()) {
      throw ClusteringError(fmt::format("sensor {} has dimension {}, expected {}", p->id,
                                        p->coords.size(), sorted.front()->coords.size()));
    }
    for (double x : p->coords) {
      if (!std::isfinite(x)) throw ClusteringError(fmt::format("sensor {} has non-finite embedding", p->id));
    }
  }

  ClusterGraph g;
  g.params_ = params;
  const std::size_t n = sorted.size();
  for (const Point* p : sorted) {
    g.clusters_.emplace(p->id, Cluster{{p->id}, p->id});
    g.embeddings_.emplace(p->id, p->coords);
  }
  if (n < 2) return g;

  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dist[i][j] = dist[j][i] = euclidean(sorted[i]->coords, sorted[j]->coords);
    }
  }

  // k nearest within theta, and a floor below which no excluded pair can lie.
  std::vector<std::set<std::size_t>> knn(n);
  std::vector<double> floor(n, params.theta);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> within;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && dist[i][j] <= params.theta) within.push_back(j);
    }
    std::stable_sort(within.begin(), within.end(),
                     [&](std::size_t a, std::size_t b) { return dist[i][a] < dist[i][b]; });
    if (within.size() > params.k) {
      floor[i] = dist[i][within[params.k - 1]];
      within.resize(params.k);
    }
    knn[i].insert(within.begin(), within.end());
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      BoundedEdge e;
      if (knn[i].contains(j) || knn[j].contains(i)) {
        e = exact_edge(dist[i][j]);
      } else {
        e.lower = std::max(floor[i], floor[j]);
        e.upper = kInfinity;
      }
      g.edges_.emplace(key(sorted[i]->id, sorted[j]->id), e);
    }
  }
  return g;
}

ClusterGraph ClusterGraph::from_clusters(std::vector<Cluster> clusters, ClusterParams params) {
  validate_params(params);
  ClusterGraph g;
  g.params_ = params;
  std::set<SensorId> seen;
  for (Cluster& c : clusters) {
    if (c.members.empty()) throw ClusteringError("cluster without members");
    std::sort(c.members.begin(), c.members.end());
    for (SensorId m : c.members) {
      if (!seen.insert(m).second) throw ClusteringError(fmt::format("sensor {} in two clusters", m));
    }
    c.label = c.members.back();
    ClusterLabel label = c.label;
    g.clusters_.emplace(label, std::move(c));
  }
  for (auto a = g.clusters_.begin(); a != g.clusters_.end(); ++a) {
    for (auto b = std::next(a); b != g.clusters_.end(); ++b) {
      g.edges_.emplace(key(a->first, b->first), BoundedEdge{std::nullopt, params.theta, kInfinity, false});
    }
  }
  return g;
}

const Cluster& ClusterGraph::cluster(ClusterLabel label) const {
  auto it = clusters_.find(label);
  if (it == clusters_.end()) throw ClusteringError(fmt::format("no cluster labelled {}", label));
  return it->second;
}

const BoundedEdge& ClusterGraph::edge(ClusterLabel a, ClusterLabel b) const {
  auto it = edges_.find(key(a, b));
  if (a == b || it == edges_.end()) {
    throw ClusteringError(fmt::format("no edge between clusters {} and {}", a, b));
  }
  return it->second;
}

BoundedEdge& ClusterGraph::edge_mut(ClusterLabel a, ClusterLabel b) {
  return const_cast<BoundedEdge&>(std::as_const(*this).edge(a, b));
}

void ClusterGraph::set_bounds(ClusterLabel a, ClusterLabel b, BoundedEdge e) {
  if (e.lower > e.upper) {
    throw ClusteringError(fmt::format("lower bound {} exceeds upper bound {}", e.lower, e.upper));
  }
  edge_mut(a, b) = e;
}

std::vector<ClusterLabel> ClusterGraph::nn_list(ClusterLabel label) const {
  struct Entry {
    double upper, lower;
    ClusterLabel other;
  };
  std::vector<Entry> entries;
  for (const auto& [other, c] : clusters_) {
    if (other == label) continue;
    const BoundedEdge& e = edge(label, other);
    if (e.explicit_edge && e.lower <= params_.theta) entries.push_back({e.upper, e.lower, other});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.upper != b.upper) return a.upper < b.upper;
    if (a.lower != b.lower) return a.lower < b.lower;
    return a.other < b.other;
  });
  std::vector<ClusterLabel> out;
  for (std::size_t i = 0; i < entries.size() && i < params_.k; ++i) out.push_back(entries[i].other);
  return out;
}

double ClusterGraph::true_distance(ClusterLabel a, ClusterLabel b) const {
  const Cluster& ca = cluster(a);
  const Cluster& cb = cluster(b);
  double sum = 0.0;
  for (SensorId x : ca.members) {
    auto ex = embeddings_.find(x);
    if (ex == embeddings_.end()) throw ClusteringError(fmt::format("no embedding for sensor {}", x));
    for (SensorId y : cb.members) {
      auto ey = embeddings_.find(y);
      if (ey == embeddings_.end()) {
        throw ClusteringError(fmt::format("no embedding for sensor {}", y));
      }
      sum += euclidean(ex->second, ey->second);
    }
  }
  return sum / static_cast<double>(ca.size() * cb.size());
}

bool ClusterGraph::any_pair_possibly_within_theta() const {
  return std::any_of(edges_.begin(), edges_.end(),
                     [&](const auto& kv) { return kv.second.lower <= params_.theta; });
}

std::vector<Partition> partition(const ClusterGraph& graph) {
  std::vector<ClusterLabel> labels;
  for (const auto& [label, c] : graph.clusters()) labels.push_back(label);
  std::map<ClusterLabel, ClusterLabel> parent;
  for (ClusterLabel l : labels) parent[l] = l;
  auto find = [&](ClusterLabel x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labels.size(); ++j) {
      if (graph.edge(labels[i], labels[j]).upper <= graph.theta()) {
        ClusterLabel ri = find(labels[i]);
        ClusterLabel rj = find(labels[j]);
        if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
      }
    }
  }
  std::map<ClusterLabel, Partition> by_root;
  for (ClusterLabel l : labels) {
    Partition& p = by_root[find(l)];
    p.members.push_back(l);
    p.nn_lists.emplace(l, graph.nn_list(l));
  }
  std::vector<Partition> out;
  for (auto& [root, p] : by_root) out.push_back(std::move(p));
  std::sort(out.begin(), out.end(),
            [](const Partition& a, const Partition& b) { return a.members.front() < b.members.front(); });
  return out;
}

std::optional<ClusterLabel> compute_nn(const ClusterGraph& graph, ClusterLabel label) {
  graph.cluster(label);
  std::optional<ClusterLabel> best;
  double best_upper = kInfinity;
  for (const auto& [other, c] : graph.clusters()) {
    if (other == label) continue;
    double u = graph.edge(label, other).upper;
    if (!best || u < best_upper) {
      best = other;
      best_upper = u;
    }
  }
  if (!best || best_upper == kInfinity) return std::nullopt;
  const BoundedEdge& chosen = graph.edge(label, *best);
  for (const auto& [other, c] : graph.clusters()) {
    if (other == label || other == *best) continue;
    const BoundedEdge& e = graph.edge(label, other);
    if (best_upper < e.lower) continue;
    bool exact_tie = best_upper == e.lower && chosen.exact() && e.exact() && *best < other;
    if (!exact_tie) return std::nullopt;
  }
  return best;
}

ClusterLabel merge_pair(ClusterGraph& graph, ClusterLabel a, ClusterLabel b) {
  if (a == b) throw ContractError(fmt::format("cannot merge cluster {} with itself", a));
  const BoundedEdge& ab = graph.edge(a, b);
  if (!(ab.upper <= graph.theta())) {
    throw ContractError(fmt::format("clusters {} and {}: upper bound {} exceeds theta {}", a, b,
                                    ab.upper, graph.theta()));
  }
  if (compute_nn(graph, a) != b || compute_nn(graph, b) != a) {
    throw ContractError(fmt::format("clusters {} and {} are not mutual nearest neighbours", a, b));
  }

  Cluster ca = graph.clusters_.at(a);
  Cluster cb = graph.clusters_.at(b);
  const double wa = static_cast<double>(ca.size());
  const double wb = static_cast<double>(cb.size());

  std::map<ClusterLabel, BoundedEdge> updated;
  for (const auto& [x, c] : graph.clusters_) {
    if (x == a || x == b) continue;
    updated.emplace(x, weighted(graph.edge(a, x), wa, graph.edge(b, x), wb));
  }
  for (const auto& [x, c] : graph.clusters_) {
    if (x != a) graph.edges_.erase(ClusterGraph::key(a, x));
    if (x != b) graph.edges_.erase(ClusterGraph::key(b, x));
  }
  graph.clusters_.erase(a);
  graph.clusters_.erase(b);

  Cluster merged;
  std::merge(ca.members.begin(), ca.members.end(), cb.members.begin(), cb.members.end(),
             std::back_inserter(merged.members));
  merged.label = std::max(ca.label, cb.label);
  const ClusterLabel label = merged.label;
  graph.clusters_.emplace(label, std::move(merged));
  for (const auto& [x, e] : updated) graph.edges_.emplace(ClusterGraph::key(label, x), e);
  return label;
}

std::size_t refine_bounds(ClusterGraph& graph, ClusterLabel label) {
  graph.cluster(label);
  if (!graph.has_embeddings()) throw ClusteringError("refine_bounds needs member embeddings");
  std::size_t changed = 0;
  for (const auto& [other, c] : graph.clusters_) {
    if (other == label) continue;
    BoundedEdge& e = graph.edge_mut(label, other);
    if (e.exact() || e.lower > graph.theta()) continue;
    e = exact_edge(graph.true_distance(label, other));
    ++changed;
  }
  return changed;
}

// Rebuilds the global graph after every partition has merged on its own copy.
struct Integrator {
  struct LocalResult {
    ClusterGraph graph;
    std::vector<ClusterLabel> clusters;
  };

  static ClusterGraph integrate(const ClusterGraph& start, const std::vector<LocalResult>& parts,
                                const std::map<ClusterLabel, std::vector<ClusterLabel>>& constituents) {
    ClusterGraph g;
    g.params_ = start.params_;
    g.embeddings_ = start.embeddings_;
    std::map<ClusterLabel, std::size_t> owner;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      for (ClusterLabel l : parts[p].clusters) {
        g.clusters_.emplace(l, parts[p].graph.cluster(l));
        owner[l] = p;
      }
    }
    for (auto ia = g.clusters_.begin(); ia != g.clusters_.end(); ++ia) {
      for (auto ib = std::next(ia); ib != g.clusters_.end(); ++ib) {
        ClusterLabel a = ia->first;
        ClusterLabel b = ib->first;
        const ClusterGraph& local = parts[owner[a]].graph;
        BoundedEdge e;
        if (owner[a] == owner[b]) {
          e = local.edge(a, b);
        } else {
          // b's round-start pieces are still present, unmerged, in a's copy.
          const auto& pieces = constituents.at(b);
          BoundedEdge acc = local.edge(a, pieces.front());
          double weight = static_cast<double>(start.cluster(pieces.front()).size());
          for (std::size_t i = 1; i < pieces.size(); ++i) {
            double w = static_cast<double>(start.cluster(pieces[i]).size());
            acc = weighted(acc, weight, local.edge(a, pieces[i]), w);
            weight += w;
          }
          e = acc;
        }
        g.edges_.emplace(ClusterGraph::key(a, b), e);
      }
    }
    return g;
  }
};

ClusterResult cluster(std::span<const Point> points, ClusterParams params, const Observer& observer) {
  ClusterGraph graph = ClusterGraph::build(points, params);
  if (observer) observer(Step::Built, graph);
  ClusterResult result;

  while (graph.any_pair_possibly_within_theta()) {
    ++result.iterations;
    std::vector<Partition> parts = partition(graph);
    std::vector<Integrator::LocalResult> local_results;
    std::map<ClusterLabel, std::vector<ClusterLabel>> constituents;
    std::size_t merges_this_round = 0;

    for (const Partition& part : parts) {
      ClusterGraph local = graph;
      std::set<ClusterLabel> members(part.members.begin(), part.members.end());
      for (ClusterLabel l : members) constituents[l] = {l};

      while (true) {
        std::map<ClusterLabel, std::optional<ClusterLabel>> nn;
        for (ClusterLabel l : members) nn[l] = compute_nn(local, l);
        std::optional<std::pair<ClusterLabel, ClusterLabel>> pair;
        for (ClusterLabel l : members) {
          auto j = nn[l];
          if (!j || !members.contains(*j) || nn[*j] != l) continue;
          if (local.edge(l, *j).upper <= params.theta) {
            pair = std::make_pair(l, *j);
            break;
          }
        }
        if (!pair) break;
        auto [a, b] = *pair;
        double upper = local.edge(a, b).upper;
        ClusterLabel merged = merge_pair(local, a, b);
        result.merges.push_back(MergeRecord{result.iterations, a, b, upper});
        ++merges_this_round;

        std::vector<ClusterLabel> pieces = constituents[a];
        pieces.insert(pieces.end(), constituents[b].begin(), constituents[b].end());
        constituents.erase(a);
        constituents.erase(b);
        constituents[merged] = std::move(pieces);
        members.erase(a);
        members.erase(b);
        members.insert(merged);
        if (observer) observer(Step::Merged, local);
      }
      local_results.push_back({std::move(local), {members.begin(), members.end()}});
    }

    graph = Integrator::integrate(graph, local_results, constituents);
    if (observer) observer(Step::Integrated, graph);

    if (merges_this_round == 0) {
      std::size_t refined = 0;
      std::vector<ClusterLabel> labels;
      for (const auto& [l, c] : graph.clusters()) labels.push_back(l);
      for (ClusterLabel l : labels) refined += refine_bounds(graph, l);
      result.refinements += refined;
      if (observer) observer(Step::Refined, graph);
      // Every bound at or below theta is exact and no mutual pair exists: nothing
      // can be within theta any more.
      if (refined == 0) break;
    }
  }

  for (const auto& [label, c] : graph.clusters()) result.clusters.push_back(c);
  return result;
}

Bytes encode(const ClusterRecord& record) {
  if (record.groups.size() > 0xFFFF) throw std::length_error("too many groups for u16 count");
  ByteWriter out;
  out.u32(record.round);
  out.u16(static_cast<std::uint16_t>(record.groups.size()));
  for (const GroupRecord& g : record.groups) {
    if (g.member_ids.size() > 0xFFFF) throw std::length_error("too many members for u16 count");
    out.u32(g.group_label);
    out.u16(static_cast<std::uint16_t>(g.member_ids.size()));
    for (SensorId m : g.member_ids) out.u32(m);
  }
  return std::move(out).bytes();
}

ClusterRecord decode_cluster_record(std::span<const std::uint8_t> data) {
  ByteReader in(data);
  ClusterRecord r;
  r.round = in.u32();
  auto groups = in.u16();
  for (std::uint16_t i = 0; i < groups; ++i) {
    GroupRecord g;
    g.group_label = in.u32();
    auto members = in.u16();
    for (std::uint16_t m = 0; m < members; ++m) g.member_ids.push_back(in.u32());
    r.groups.push_back(std::move(g));
  }
  in.expect_done("cluster record");
  return r;
}

}  // namespace pohar::clustering
