#pragma once

// Partition-based agglomerative clustering with interval bounds on
// inter-cluster distances. Linkage is size-weighted average (UPGMA); clusters
// are merged only as mutual nearest neighbours whose upper bound is within the
// threshold, which makes the result equal to sequential UPGMA cut at theta.

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pohar/bytes.hpp"

namespace pohar::clustering {

using SensorId = std::uint32_t;
using ClusterLabel = std::uint32_t;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

class ClusteringError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when merge_pair is asked to merge a pair that is not a legal merge.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Cluster {
  std::vector<SensorId> members;  // sorted
  ClusterLabel label = 0;         // max(members)

  std::size_t size() const { return members.size(); }
};

struct BoundedEdge {
  std::optional<double> dist;  // exact average-linkage distance when known
  double lower = 0;
  double upper = kInfinity;
  bool explicit_edge = false;  // kept as a k-NN edge, refined, or derived from one

  bool exact() const { return dist.has_value(); }
};

struct ClusterParams {
  double theta = 0;
  std::size_t k = 3;
};

struct Point {
  SensorId id = 0;
  std::vector<double> coords;
};

class ClusterGraph {
 public:
  /// One singleton per point; exact edges to each point's k nearest neighbours
  /// within theta, every other pair ignored.
  static ClusterGraph build(std::span<const Point> points, ClusterParams params);

  /// Arbitrary clusters with every edge ignored (b_L = theta, b_U = inf) and no
  /// embeddings. Bounds are then set with set_bounds.
  static ClusterGraph from_clusters(std::vector<Cluster> clusters, ClusterParams params);

  const ClusterParams& params() const { return params_; }
  double theta() const { return params_.theta; }

  const std::map<ClusterLabel, Cluster>& clusters() const { return clusters_; }
  const Cluster& cluster(ClusterLabel label) const;
  bool has_cluster(ClusterLabel label) const { return clusters_.contains(label); }

  const BoundedEdge& edge(ClusterLabel a, ClusterLabel b) const;
  void set_bounds(ClusterLabel a, ClusterLabel b, BoundedEdge e);

  /// L(C): up to k explicit neighbours with b_L <= theta, by (b_U, b_L, label).
  std::vector<ClusterLabel> nn_list(ClusterLabel label) const;

  bool has_embeddings() const { return !embeddings_.empty(); }
  const std::map<SensorId, std::vector<double>>& embeddings() const { return embeddings_; }
  /// Mean pairwise Euclidean distance between the members of two clusters.
  double true_distance(ClusterLabel a, ClusterLabel b) const;

  /// Whether any pair may still be within theta (b_L <= theta).
  bool any_pair_possibly_within_theta() const;

 private:
  friend ClusterLabel merge_pair(ClusterGraph&, ClusterLabel, ClusterLabel);
  friend std::size_t refine_bounds(ClusterGraph&, ClusterLabel);
  friend struct Integrator;

  static std::pair<ClusterLabel, ClusterLabel> key(ClusterLabel a, ClusterLabel b);
  BoundedEdge& edge_mut(ClusterLabel a, ClusterLabel b);

  ClusterParams params_;
  std::map<ClusterLabel, Cluster> clusters_;
  std::map<std::pair<ClusterLabel, ClusterLabel>, BoundedEdge> edges_;
  std::map<SensorId, std::vector<double>> embeddings_;
};

inline ClusterGraph build_graph(std::span<const Point> points, ClusterParams params) {
  return ClusterGraph::build(points, params);
}

struct Partition {
  std::vector<ClusterLabel> members;
  std::map<ClusterLabel, std::vector<ClusterLabel>> nn_lists;
};

/// Connected components of the edges with b_U <= theta, ordered by smallest label.
std::vector<Partition> partition(const ClusterGraph& graph);

/// The neighbour whose upper bound is below every other neighbour's lower
/// bound, or nullopt. Exact ties go to the smaller label.
std::optional<ClusterLabel> compute_nn(const ClusterGraph& graph, ClusterLabel label);

/// Merges a mutual-nearest-neighbour pair with b_U <= theta and updates every
/// other edge by size-weighted averaging. Throws ContractError otherwise.
ClusterLabel merge_pair(ClusterGraph& graph, ClusterLabel a, ClusterLabel b);

/// Replaces inexact edges of `label` with b_L <= theta by exact distances.
/// Returns how many edges changed. Requires embeddings.
std::size_t refine_bounds(ClusterGraph& graph, ClusterLabel label);

enum class Step { Built, Merged, Integrated, Refined };

struct MergeRecord {
  std::size_t iteration = 0;
  ClusterLabel a = 0;
  ClusterLabel b = 0;
  double upper = 0;
};

struct ClusterResult {
  std::vector<Cluster> clusters;  // ordered by label
  std::size_t iterations = 0;
  std::size_t refinements = 0;
  std::vector<MergeRecord> merges;
};

using Observer = std::function<void(Step, const ClusterGraph&)>;

ClusterResult cluster(std::span<const Point> points, ClusterParams params,
                      const Observer& observer = {});

struct GroupRecord {
  ClusterLabel group_label = 0;
  std::vector<SensorId> member_ids;

  friend bool operator==(const GroupRecord&, const GroupRecord&) = default;
};

/// What the leader broadcasts after clustering a round.
struct ClusterRecord {
  std::uint32_t round = 0;
  std::vector<GroupRecord> groups;

  friend bool operator==(const ClusterRecord&, const ClusterRecord&) = default;
};

// u32 round, u16 group_count, group_count x { u32 group_label, u16 member_count,
// member_count x u32 member_id }; big-endian.
Bytes encode(const ClusterRecord& record);
ClusterRecord decode_cluster_record(std::span<const std::uint8_t> data);

}  // namespace pohar::clustering
