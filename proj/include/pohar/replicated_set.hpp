#pragma once

// State-based replicated set with add/remove/reinsert support. Elements are
// identified by a unique tag so equal payloads may coexist and a removed
// payload can be inserted again under a fresh tag.

#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>

#include "pohar/bytes.hpp"

namespace pohar::crdt {

using ReplicaId = std::uint32_t;

/// (origin, counter) pair; fixed-width 16-hex-digit rendering sorts like the pair.
struct Tag {
  ReplicaId origin = 0;
  std::uint32_t counter = 0;

  auto operator<=>(const Tag&) const = default;

  std::string hex() const;
  static Tag from_hex(std::string_view text);  // throws DecodeError

  void encode(ByteWriter& out) const;
  static Tag decode(ByteReader& in);
};

struct TaggedElement {
  Bytes value;
  Tag tag;

  // Identity is the tag; the payload is carried along.
  friend bool operator==(const TaggedElement& a, const TaggedElement& b) { return a.tag == b.tag; }
};

/// A (possibly partial) copy of a replica's add-set and rem-set.
struct Snapshot {
  std::map<Tag, Bytes> adds;
  std::set<Tag> removes;

  bool empty() const { return adds.empty() && removes.empty(); }
  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

struct RemoveAck {
  Tag tag;
  bool was_live = false;  // element was in the main set before removal
};

struct MergeStats {
  std::size_t new_adds = 0;
  std::size_t new_removes = 0;
};

class ReplicaState {
 public:
  explicit ReplicaState(ReplicaId id, std::uint32_t first_counter = 0)
      : id_(id), next_counter_(first_counter) {}

  TaggedElement local_add(Bytes value);
  RemoveAck local_remove(Tag tag);

  /// A <- A u adds, R <- R u removes, M <- A \ R. Removals are recorded even
  /// when the matching addition has not arrived yet.
  MergeStats merge(const Snapshot& received);

  Snapshot snapshot() const;

  ReplicaId id() const { return id_; }
  std::uint32_t next_counter() const { return next_counter_; }

  const std::map<Tag, Bytes>& add_set() const { return adds_; }
  const std::set<Tag>& rem_set() const { return removes_; }
  const std::map<Tag, Bytes>& main_set() const { return live_; }

  bool contains(Tag tag) const { return live_.contains(tag); }

  /// Replica identity is excluded: two replicas are equal when their sets are.
  bool same_state(const ReplicaState& other) const {
    return adds_ == other.adds_ && removes_ == other.removes_ && live_ == other.live_;
  }

 private:
  ReplicaId id_;
  std::uint32_t next_counter_;
  std::map<Tag, Bytes> adds_;
  std::set<Tag> removes_;
  std::map<Tag, Bytes> live_;
};

/// Single-element delta, the payload of an add broadcast.
Snapshot delta_of(const TaggedElement& element);
/// Single-tombstone delta, the payload of a remove broadcast.
Snapshot delta_of(Tag removed);

struct GossipMessage {
  ReplicaId replica_id = 0;
  Snapshot snapshot;
};

// Wire format, all integers big-endian:
//   u32 replica_id, u16 add_count, u16 rem_count,
//   add_count x { tag[8], u16 payload_len, payload },
//   rem_count x { tag[8] }
Bytes encode_gossip(ReplicaId sender, const Snapshot& snapshot);
GossipMessage decode_gossip(std::span<const std::uint8_t> data);

}  // namespace pohar::crdt
