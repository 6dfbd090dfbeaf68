#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "pohar/replicated_set.hpp"

using namespace pohar;
using namespace pohar::crdt;

namespace {

Bytes payload(const std::string& s) { return Bytes(s.begin(), s.end()); }

bool m_is_a_minus_r(const ReplicaState& r) {
  std::map<Tag, Bytes> expected;
  for (const auto& [t, v] : r.add_set()) {
    if (!r.rem_set().contains(t)) expected.emplace(t, v);
  }
  return expected == r.main_set();
}

}  // namespace

TEST(ReplicatedSet, AddIsLiveWithOwnOrigin) {
  ReplicaState c1(1);
  auto e1 = c1.local_add(payload("E1"));
  EXPECT_EQ(e1.tag.origin, 1u);
  EXPECT_TRUE(c1.contains(e1.tag));
  EXPECT_EQ(c1.main_set().at(e1.tag), payload("E1"));
}

TEST(ReplicatedSet, EqualPayloadsAreDistinctElements) {
  ReplicaState r(4);
  auto a = r.local_add(payload("x"));
  auto b = r.local_add(payload("x"));
  EXPECT_NE(a.tag, b.tag);
  EXPECT_FALSE(a == b);
  EXPECT_EQ(r.main_set().size(), 2u);
}

TEST(ReplicatedSet, ReinsertAfterRemove) {
  ReplicaState r(1);
  auto a = r.local_add(payload("E"));
  r.local_remove(a.tag);
  auto b = r.local_add(payload("E"));
  EXPECT_EQ(r.main_set().size(), 1u);
  EXPECT_TRUE(r.contains(b.tag));
  EXPECT_FALSE(r.contains(a.tag));
  EXPECT_GT(b.tag.counter, a.tag.counter);
}

TEST(ReplicatedSet, RemoveMovesTagToRemSet) {
  ReplicaState r(1);
  auto e1 = r.local_add(payload("E1"));
  auto ack = r.local_remove(e1.tag);
  EXPECT_TRUE(ack.was_live);
  EXPECT_TRUE(r.main_set().empty());
  EXPECT_TRUE(r.rem_set().contains(e1.tag));
  EXPECT_TRUE(r.add_set().contains(e1.tag));  // A is grow-only
}

TEST(ReplicatedSet, RemoveUnknownTagIsRecorded) {
  ReplicaState r(1);
  r.local_add(payload("a"));
  auto before = r.main_set();
  auto ack = r.local_remove(Tag{9, 9});
  EXPECT_FALSE(ack.was_live);
  EXPECT_TRUE(r.rem_set().contains(Tag{9, 9}));
  EXPECT_EQ(r.main_set(), before);
}

TEST(ReplicatedSet, RemoveTwiceIsIdempotent) {
  ReplicaState once(1), twice(1);
  auto a = once.local_add(payload("a"));
  auto b = twice.local_add(payload("a"));
  ASSERT_EQ(a.tag, b.tag);
  once.local_remove(a.tag);
  twice.local_remove(b.tag);
  twice.local_remove(b.tag);
  EXPECT_TRUE(once.same_state(twice));
}

TEST(ReplicatedSet, MergeEmptyIsIdentity) {
  ReplicaState r(1);
  r.local_add(payload("a"));
  ReplicaState copy = r;
  auto stats = r.merge(Snapshot{});
  EXPECT_EQ(stats.new_adds + stats.new_removes, 0u);
  EXPECT_TRUE(r.same_state(copy));
}

TEST(ReplicatedSet, TwoReplicaExchange) {
  ReplicaState c1(1), c2(2);
  auto e1 = c1.local_add(payload("E1"));
  auto e2 = c2.local_add(payload("E2"));
  Snapshot s1 = c1.snapshot(), s2 = c2.snapshot();
  c2.merge(s1);
  c1.merge(s2);
  EXPECT_TRUE(c1.same_state(c2));
  EXPECT_TRUE(c1.contains(e1.tag) && c1.contains(e2.tag));
}

TEST(ReplicatedSet, RemovalBeforeAdditionStillWins) {
  ReplicaState origin(1), far(2);
  auto e = origin.local_add(payload("E"));
  origin.local_remove(e.tag);
  far.merge(delta_of(e.tag));  // tombstone first
  far.merge(delta_of(e));      // then the add
  EXPECT_FALSE(far.contains(e.tag));
  EXPECT_TRUE(m_is_a_minus_r(far));
}

TEST(ReplicatedSet, SnapshotOfFreshAndAfterAdd) {
  ReplicaState r(3);
  EXPECT_TRUE(r.snapshot().empty());
  auto e = r.local_add(payload("E1"));
  Snapshot s = r.snapshot();
  EXPECT_EQ(s.adds.size(), 1u);
  EXPECT_EQ(s.adds.at(e.tag), payload("E1"));
  EXPECT_TRUE(s.removes.empty());
}

TEST(ReplicatedSet, FreshReplicaCatchesUpFromOneSnapshot) {
  ReplicaState a(1), b(2);
  for (int i = 0; i < 5; ++i) a.local_add(payload(std::to_string(i)));
  a.local_remove(a.main_set().begin()->first);
  b.merge(a.snapshot());
  ReplicaState fresh(3);
  fresh.merge(b.snapshot());
  EXPECT_TRUE(fresh.same_state(a));
}

TEST(ReplicatedSet, RandomOpsIdempotentCommutativeAssociative) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ReplicaState> reps;
    for (ReplicaId id = 0; id < 3; ++id) reps.emplace_back(id);
    std::vector<Tag> known;
    for (int op = 0; op < 12; ++op) {
      auto& r = reps[rng() % 3];
      if (known.empty() || rng() % 3 != 0) {
        known.push_back(r.local_add(payload(std::to_string(rng() % 4))).tag);
      } else {
        r.local_remove(known[rng() % known.size()]);
      }
      ASSERT_TRUE(m_is_a_minus_r(r));
    }
    // idempotence
    ReplicaState self = reps[0];
    self.merge(reps[0].snapshot());
    ASSERT_TRUE(self.same_state(reps[0]));
    // commutativity and associativity over every merge order
    std::vector<int> order{0, 1, 2};
    std::optional<ReplicaState> first;
    do {
      ReplicaState acc(99);
      for (int i : order) acc.merge(reps[i].snapshot());
      if (!first) first = acc;
      ASSERT_TRUE(acc.same_state(*first));
    } while (std::next_permutation(order.begin(), order.end()));
    ReplicaState grouped(98);
    ReplicaState ab = reps[0];
    ab.merge(reps[1].snapshot());
    ReplicaState bc = reps[1];
    bc.merge(reps[2].snapshot());
    grouped.merge(bc.snapshot());
    grouped.merge(reps[0].snapshot());
    ab.merge(reps[2].snapshot());
    ASSERT_TRUE(grouped.same_state(ab));
  }
}

TEST(ReplicatedSet, TagHexIsFixedWidthAndSortsLikePairs) {
  Tag t{0x1, 0xAB};
  EXPECT_EQ(t.hex(), "00000001000000AB");
  EXPECT_EQ(Tag::from_hex(t.hex()), t);
  std::mt19937 rng(5);
  for (int i = 0; i < 500; ++i) {
    Tag a{static_cast<std::uint32_t>(rng()), static_cast<std::uint32_t>(rng())};
    Tag b{static_cast<std::uint32_t>(rng() % 4), static_cast<std::uint32_t>(rng())};
    EXPECT_EQ(a < b, a.hex() < b.hex());
  }
  EXPECT_THROW(Tag::from_hex("123"), DecodeError);
  EXPECT_THROW(Tag::from_hex("00000001000000AG"), DecodeError);
}

TEST(ReplicatedSet, GossipWireFormat) {
  Snapshot s;
  s.adds.emplace(Tag{1, 2}, Bytes{0xAA, 0xBB});
  s.removes.insert(Tag{3, 4});
  Bytes wire = encode_gossip(7, s);
  Bytes expected{0, 0, 0, 7, 0, 1, 0, 1,             // header
                 0, 0, 0, 1, 0, 0, 0, 2, 0, 2, 0xAA, 0xBB,  // add
                 0, 0, 0, 3, 0, 0, 0, 4};            // rem
  EXPECT_EQ(wire, expected);
  GossipMessage m = decode_gossip(wire);
  EXPECT_EQ(m.replica_id, 7u);
  EXPECT_EQ(m.snapshot, s);
}

TEST(ReplicatedSet, GossipDecodeRejectsCorruption) {
  Snapshot s;
  s.adds.emplace(Tag{1, 2}, Bytes{1, 2, 3});
  Bytes wire = encode_gossip(1, s);
  for (std::size_t cut = 0; cut < wire.size(); ++cut) {
    EXPECT_THROW(decode_gossip(std::span(wire).first(cut)), DecodeError) << cut;
  }
  Bytes extra = wire;
  extra.push_back(0);
  EXPECT_THROW(decode_gossip(extra), DecodeError);
}
