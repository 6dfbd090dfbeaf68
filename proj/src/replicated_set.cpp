#include "pohar/replicated_set.hpp"

#include <limits>

#include <fmt/format.h>

namespace pohar::crdt {

std::string Tag::hex() const { return fmt::format("{:08X}{:08X}", origin, counter); }

Tag Tag::from_hex(std::string_view text) {
  if (text.size() != 16) {
    throw DecodeError(fmt::format("tag must be 16 hex digits, got {} chars", text.size()));
  }
  std::uint64_t v = 0;
  for (char c : text) {
    int digit;
    if (c >= '0' && c <= '9') {
      digit = c - '0';
    } else if (c >= 'A' && c <= 'F') {
      digit = c - 'A' + 10;
    } else if (c >= 'a' && c <= 'f') {
      digit = c - 'a' + 10;
    } else {
      throw DecodeError(fmt::format("invalid hex digit '{}' in tag", c));
    }
    v = (v << 4) | static_cast<std::uint64_t>(digit);
  }
  return Tag{static_cast<ReplicaId>(v >> 32), static_cast<std::uint32_t>(v)};
}

void Tag::encode(ByteWriter& out) const {
  out.u32(origin);
  out.u32(counter);
}

Tag Tag::decode(ByteReader& in) {
  Tag t;
  t.origin = in.u32();
  t.counter = in.u32();
  return t;
}

TaggedElement ReplicaState::local_add(Bytes value) {
  if (next_counter_ == std::numeric_limits<std::uint32_t>::max()) {
    throw std::overflow_error("tag counter exhausted");
  }
  Tag tag{id_, next_counter_++};
  adds_.emplace(tag, value);
  // A fresh tag can only be in R if some peer tombstoned it ahead of time;
  // the derived view stays A \ R either way.
  if (!removes_.contains(tag)) live_.emplace(tag, value);
  return TaggedElement{std::move(value), tag};
}

RemoveAck ReplicaState::local_remove(Tag tag) {
  removes_.insert(tag);
  bool was_live = live_.erase(tag) > 0;
  return RemoveAck{tag, was_live};
}

MergeStats ReplicaState::merge(const Snapshot& received) {
  MergeStats stats;
  for (const auto& [tag, value] : received.adds) {
    auto [it, inserted] = adds_.emplace(tag, value);
    if (!inserted) continue;
    ++stats.new_adds;
    if (!removes_.contains(tag) && !received.removes.contains(tag)) {
      live_.emplace(tag, value);
    }
  }
  for (const Tag& tag : received.removes) {
    if (removes_.insert(tag).second) {
      ++stats.new_removes;
      live_.erase(tag);
    }
  }
  return stats;
}

Snapshot ReplicaState::snapshot() const { return Snapshot{adds_, removes_}; }

Snapshot delta_of(const TaggedElement& element) {
  Snapshot s;
  s.adds.emplace(element.tag, element.value);
  return s;
}

Snapshot delta_of(Tag removed) {
  Snapshot s;
  s.removes.insert(removed);
  return s;
}

Bytes encode_gossip(ReplicaId sender, const Snapshot& snapshot) {
  if (snapshot.adds.size() > 0xFFFF || snapshot.removes.size() > 0xFFFF) {
    throw std::length_error("gossip snapshot exceeds u16 entry counts");
  }
  ByteWriter out;
  out.u32(sender);
  out.u16(static_cast<std::uint16_t>(snapshot.adds.size()));
  out.u16(static_cast<std::uint16_t>(snapshot.removes.size()));
  for (const auto& [tag, value] : snapshot.adds) {
    if (value.size() > 0xFFFF) throw std::length_error("gossip payload exceeds u16 length");
    tag.encode(out);
    out.u16(static_cast<std::uint16_t>(value.size()));
    out.raw(value);
  }
  for (const Tag& tag : snapshot.removes) tag.encode(out);
  return std::move(out).bytes();
}

GossipMessage decode_gossip(std::span<const std::uint8_t> data) {
  ByteReader in(data);
  GossipMessage msg;
  msg.replica_id = in.u32();
  auto add_count = in.u16();
  auto rem_count = in.u16();
  for (std::uint16_t i = 0; i < add_count; ++i) {
    Tag tag = Tag::decode(in);
    auto len = in.u16();
    auto payload = in.raw(len);
    if (!msg.snapshot.adds.emplace(tag, Bytes(payload.begin(), payload.end())).second) {
      throw DecodeError(fmt::format("duplicate add tag {} in gossip", tag.hex()));
    }
  }
  for (std::uint16_t i = 0; i < rem_count; ++i) {
    if (!msg.snapshot.removes.insert(Tag::decode(in)).second) {
      throw DecodeError("duplicate rem tag in gossip");
    }
  }
  in.expect_done("gossip message");
  return msg;
}

}  // namespace pohar::crdt
