#include <gtest/gtest.h>

#include "pohar/election.hpp"
#include "pohar/election_sim.hpp"

using namespace pohar;
using namespace pohar::election;
using sim::MessageKind;

namespace {

ElectionState node(NodeId self, std::set<NodeId> peers = {1, 2, 3, 4, 5}, std::uint64_t seed = 1) {
  return ElectionState(self, std::move(peers), ElectionTiming{}, seed);
}

// Drives a node to the given term as a follower via a heartbeat.
void at_term(ElectionState& s, std::uint32_t term) { s.on_heartbeat(99, term); }

}  // namespace

TEST(ElectionTiming, Validation) {
  EXPECT_NO_THROW(ElectionTiming{}.validate());
  EXPECT_THROW((ElectionTiming{50'000, 100'000, 300'000}.validate()), std::invalid_argument);
  EXPECT_THROW((ElectionTiming{50'000, 300'000, 200'000}.validate()), std::invalid_argument);
}

TEST(Election, TimeoutDrawnWithinRange) {
  ElectionTiming t;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    ElectionState s(1, {1, 2, 3}, t, seed);
    for (int i = 0; i < 5; ++i) {
      EXPECT_GE(s.election_timeout(), t.timeout_min);
      EXPECT_LE(s.election_timeout(), t.timeout_max);
      s.on_timeout();
    }
  }
}

TEST(Election, FollowerTimeoutBecomesCandidate) {
  auto s = node(1);
  at_term(s, 3);
  auto fx = s.on_timeout();
  EXPECT_EQ(s.role(), Role::Candidate);
  EXPECT_EQ(s.current_term(), 4u);
  EXPECT_EQ(s.votes_received(), std::set<NodeId>{1});
  EXPECT_EQ(s.voted_for(), 1u);
  ASSERT_EQ(fx.messages.size(), 4u);
  for (const auto& m : fx.messages) {
    EXPECT_EQ(m.kind, MessageKind::RequestVote);
    EXPECT_EQ(m.term, 4u);
    EXPECT_NE(m.dst, 1u);
  }
}

TEST(Election, CandidateTimeoutRetriesNextTerm) {
  auto s = node(1);
  s.on_timeout();
  s.on_timeout();
  EXPECT_EQ(s.role(), Role::Candidate);
  EXPECT_EQ(s.current_term(), 2u);
}

TEST(Election, SingleNodeLeadsImmediately) {
  ElectionState s(7, {7}, ElectionTiming{}, 3);
  auto fx = s.on_timeout();
  EXPECT_TRUE(fx.became_leader);
  EXPECT_EQ(s.role(), Role::Leader);
  EXPECT_TRUE(fx.messages.empty());
}

TEST(Election, LeaderIgnoresTimeout) {
  ElectionState s(7, {7}, ElectionTiming{}, 3);
  s.on_timeout();
  auto fx = s.on_timeout();
  EXPECT_EQ(s.current_term(), 1u);
  EXPECT_TRUE(fx.messages.empty());
}

TEST(Election, FreshFollowerGrantsVote) {
  auto s = node(2);
  auto fx = s.on_request_vote(1, 5);
  EXPECT_EQ(s.current_term(), 5u);
  EXPECT_EQ(s.voted_for(), 1u);
  ASSERT_EQ(fx.messages.size(), 1u);
  EXPECT_EQ(fx.messages[0].kind, MessageKind::VoteGrant);
  EXPECT_EQ(fx.messages[0].dst, 1u);
  EXPECT_TRUE(fx.reset_timer);
}

TEST(Election, OneVotePerTerm) {
  auto s = node(2);
  s.on_request_vote(1, 5);
  auto fx = s.on_request_vote(3, 5);
  EXPECT_TRUE(fx.messages.empty());
  EXPECT_EQ(s.voted_for(), 1u);
  // re-asking by the same candidate is answered again
  EXPECT_EQ(s.on_request_vote(1, 5).messages.size(), 1u);
}

TEST(Election, StaleRequestChangesNothing) {
  auto s = node(2);
  at_term(s, 6);
  auto fx = s.on_request_vote(1, 5);
  EXPECT_TRUE(fx.messages.empty());
  EXPECT_EQ(s.current_term(), 6u);
  EXPECT_FALSE(s.voted_for().has_value());
}

TEST(Election, ThirdGrantOfFiveWins) {
  auto s = node(1);
  s.on_timeout();
  EXPECT_FALSE(s.on_vote_grant(2, 1).became_leader);
  EXPECT_FALSE(s.on_vote_grant(2, 1).became_leader);  // duplicate grant
  EXPECT_EQ(s.votes_received().size(), 2u);
  auto fx = s.on_vote_grant(3, 1);
  EXPECT_TRUE(fx.became_leader);
  EXPECT_EQ(s.role(), Role::Leader);
  EXPECT_EQ(fx.messages.size(), 4u);
  for (const auto& m : fx.messages) EXPECT_EQ(m.kind, MessageKind::Heartbeat);
  EXPECT_FALSE(s.on_vote_grant(4, 1).became_leader);  // already leader
  EXPECT_EQ(s.votes_received().size(), 3u);
}

TEST(Election, GrantForOldTermDiscarded) {
  auto s = node(1);
  s.on_timeout();
  s.on_timeout();
  s.on_vote_grant(2, 1);
  s.on_vote_grant(3, 1);
  EXPECT_EQ(s.role(), Role::Candidate);
  EXPECT_EQ(s.votes_received().size(), 1u);
}

TEST(Election, CandidateStepsDownOnEqualTermHeartbeat) {
  auto s = node(1);
  at_term(s, 3);
  s.on_timeout();
  auto fx = s.on_heartbeat(2, 4);
  EXPECT_EQ(s.role(), Role::Follower);
  EXPECT_EQ(s.known_leader(), 2u);
  EXPECT_TRUE(fx.stepped_down);
}

TEST(Election, StaleHeartbeatIgnored) {
  auto s = node(1);
  at_term(s, 5);
  auto fx = s.on_heartbeat(2, 4);
  EXPECT_EQ(s.current_term(), 5u);
  EXPECT_FALSE(fx.reset_timer);
  EXPECT_EQ(s.known_leader(), 99u);
}

TEST(Election, PeersMustContainSelf) {
  EXPECT_THROW(ElectionState(9, {1, 2}, ElectionTiming{}, 0), std::invalid_argument);
}

TEST(Election, WireRoundTripAndRejects) {
  ElectionMessage m{MessageKind::RequestVote, 12, 4, Scope{Scope::Group, 3, 9}};
  Bytes b = encode(m);
  EXPECT_EQ(b.size(), 17u);
  EXPECT_EQ(decode(MessageKind::RequestVote, b), m);
  EXPECT_THROW(decode(MessageKind::Gossip, b), DecodeError);
  EXPECT_THROW(decode(MessageKind::RequestVote, std::span(b).first(16)), DecodeError);
  Bytes bad = b;
  bad[8] = 7;
  EXPECT_THROW(decode(MessageKind::RequestVote, bad), DecodeError);
}

TEST(ElectionCluster, ElectsAndRecoversAfterLeaderCrash) {
  sim::ChannelConfig ch{0.0, 1'000, 10'000, 0.0, 5};
  ElectionTiming t;
  ElectionCluster c({1, 2, 3, 4, 5}, ch, t, 11);
  c.run_until(10 * t.timeout_max, [&] { return c.current_leader().has_value(); });
  ASSERT_TRUE(c.current_leader());
  NodeId old = *c.current_leader();
  c.run_until(c.now() + 500'000);
  Micros kill_at = c.now();
  c.kill(old);
  c.run_until(kill_at + 2 * sim::kSeconds, [&] {
    auto l = c.current_leader();
    return l && *l != old;
  });
  ASSERT_TRUE(c.current_leader());
  EXPECT_NE(*c.current_leader(), old);
  EXPECT_LE(c.now() - kill_at, t.timeout_max + 2 * ch.delay_max + t.timeout_max);
  EXPECT_TRUE(audit_election_safety(c.leader_events()).ok);
  EXPECT_TRUE(audit_term_monotonicity(c.term_samples()));
}

TEST(ElectionCluster, RevivedNodeRejoinsAsFollower) {
  ElectionCluster c({1, 2, 3}, sim::ChannelConfig{0.0, 1'000, 5'000, 0.0, 2}, ElectionTiming{}, 3);
  c.run_until(3 * sim::kSeconds);
  NodeId leader = *c.current_leader();
  NodeId other = leader == 1 ? 2 : 1;
  c.kill(other);
  c.run_until(c.now() + sim::kSeconds);
  c.revive(other);
  c.run_until(c.now() + sim::kSeconds);
  EXPECT_EQ(c.state(other).role(), Role::Follower);
  EXPECT_EQ(c.state(other).current_term(), c.state(leader).current_term());
  EXPECT_TRUE(audit_term_monotonicity(c.term_samples()));
}

TEST(ElectionAudit, DetectsTwoLeadersInOneTerm) {
  std::vector<LeaderEvent> ev{{10, 1, 3, 0}, {20, 2, 3, 0}};
  auto a = audit_election_safety(ev);
  EXPECT_FALSE(a.ok);
  EXPECT_EQ(a.violating_term, 3u);
  std::vector<TermSample> terms{{0, 1, 0, 2}, {5, 1, 0, 1}};
  EXPECT_FALSE(audit_term_monotonicity(terms));
}
