#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "explab/sim.hpp"

namespace explab {
namespace {

WorldConfig small_world(std::uint64_t seed = 1) {
  WorldConfig c;
  c.n_users = 300;
  c.initial_corpus = 200;
  c.daily_new_content = 20;
  c.n_providers = 40;
  c.activity_mean = 1.0;
  c.horizon_days = 10;
  c.seed = seed;
  return c;
}

ArmPolicy greedy_policy(const WorldConfig& w, std::uint64_t seed = 5) {
  NetworkConfig n;
  n.user_dim = w.user_feature_dim();
  n.content_dim = w.content_feature_dim();
  n.hidden = {8, 4};
  n.seed = seed;
  ArmPolicy p;
  p.ranking.model = std::make_shared<RepresentationModel>(RepresentationModel::initialize(n));
  return p;
}

std::string log_text(const WorldState& w) {
  std::ostringstream out;
  write_log(out, w.log);
  return out.str();
}

TEST(BuildWorld, SameSeedSameWorld) {
  const WorldState a = build_world(small_world(3));
  const WorldState b = build_world(small_world(3));
  ASSERT_EQ(a.items.size(), b.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    EXPECT_EQ(a.items[i].latent_topic, b.items[i].latent_topic);
    EXPECT_EQ(a.items[i].quality, b.items[i].quality);
    EXPECT_EQ(a.items[i].lifetime_positives, b.items[i].lifetime_positives);
  }
  for (std::size_t i = 0; i < a.users.size(); ++i) {
    EXPECT_EQ(a.users[i].latent_pref, b.users[i].latent_pref);
    EXPECT_EQ(a.users[i].activity, b.users[i].activity);
  }
  std::ostringstream ca, cb;
  write_corpus(ca, a.items);
  write_corpus(cb, b.items);
  EXPECT_EQ(ca.str(), cb.str());
}

TEST(BuildWorld, NoUsersIsValidAndQuiet) {
  WorldConfig c = small_world();
  c.n_users = 0;
  WorldState w = build_world(c);
  EXPECT_TRUE(w.users.empty());
  const DayLog d = run_day(w, {{0, greedy_policy(c)}});
  EXPECT_TRUE(d.records.empty());
  EXPECT_EQ(w.day, 1);
  EXPECT_EQ(w.items.size(), c.initial_corpus + c.daily_new_content);
}

TEST(BuildWorld, LatentNormMatchesChiExpectation) {
  WorldConfig c = small_world();
  c.initial_corpus = 10000;
  c.latent_dim = 4;
  const WorldState w = build_world(c);
  double sum = 0.0;
  for (const ContentItem& item : w.items) sum += item.latent_topic.norm();
  const double k = static_cast<double>(c.latent_dim);
  // Coordinates are N(0, 1/k): the norm is chi(k) / sqrt(k).
  const double expect = std::sqrt(2.0 / k) * std::tgamma((k + 1) / 2) / std::tgamma(k / 2);
  EXPECT_NEAR(sum / static_cast<double>(w.items.size()), expect, 0.05 * expect);
}

TEST(BuildWorld, InitialGraduationFollowsPositives) {
  const WorldState w = build_world(small_world());
  for (const ContentItem& c : w.items) {
    EXPECT_LT(c.publish_day, 0);
    EXPECT_EQ(c.graduation_day.has_value(), c.lifetime_positives >= w.config.graduation_threshold);
  }
}

TEST(TrueMeanReward, HandValues) {
  WorldConfig c = small_world();
  c.reward_bias = 0.0;
  c.latent_dim = 2;
  WorldState w = build_world(c);
  UserProfile u;
  u.latent_pref = Eigen::Vector2d(1.0, 0.0);
  ContentItem a;
  a.latent_topic = Eigen::Vector2d(0.0, 1.0);
  a.quality = 0.0;
  EXPECT_EQ(true_mean_reward(w, u, a), 0.5);
  a.latent_topic = Eigen::Vector2d(1.0, 0.0);
  a.quality = 1.0;
  EXPECT_NEAR(true_mean_reward(w, u, a), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(true_mean_reward(w, u, a), 0.8808, 1e-4);
  double last = 0.0;
  for (double q = -3.0; q <= 3.0; q += 0.5) {
    a.quality = q;
    const double p = true_mean_reward(w, u, a);
    EXPECT_GT(p, last);
    last = p;
  }
}

TEST(Nominate, PopularityOrdersByLifetimePositives) {
  WorldConfig c = small_world();
  c.initial_corpus = 3;
  c.n_users = 1;
  WorldState w = build_world(c);
  w.items[0].lifetime_positives = 4;
  w.items[1].lifetime_positives = 9;
  w.items[2].lifetime_positives = 1;
  RandomStream rng(1);
  const auto got = nominate(w, w.users[0], {NominatorKind::Popularity, 10}, rng);
  EXPECT_EQ(got, (std::vector<ContentId>{1, 0, 2}));
}

TEST(Nominate, FreshTailNeverReturnsGraduatedItems) {
  WorldState w = build_world(small_world());
  w.day = 30;
  RandomStream rng(2);
  for (int t = 0; t < 200; ++t) {
    for (ContentId id : nominate(w, w.users[0], {NominatorKind::FreshTail, 15}, rng)) {
      const ContentItem& item = w.items[id];
      EXPECT_FALSE(item.graduation_day.has_value());
      EXPECT_TRUE(w.age_of(item) < w.config.fresh_age_days ||
                  item.lifetime_positives < w.config.tail_positives);
    }
  }
}

TEST(Nominate, FreshTailReturnsAllWhenFewEligible) {
  WorldState w = build_world(small_world());
  for (ContentItem& c : w.items) c.graduation_day = -1;
  w.items[3].graduation_day.reset();
  w.items[3].lifetime_positives = 0;
  RandomStream rng(3);
  EXPECT_EQ(nominate(w, w.users[0], {NominatorKind::FreshTail, 10}, rng),
            (std::vector<ContentId>{3}));
}

TEST(Nominate, NoiselessSimilarityTopOneIsExhaustiveArgmax) {
  WorldConfig c = small_world();
  c.similarity_noise = 0.0;
  WorldState w = build_world(c);
  RandomStream pick(4);
  for (int t = 0; t < 50; ++t) {
    UserProfile& u = w.users[static_cast<std::size_t>(t)];
    u.consumption_sum = Eigen::VectorXd::Zero(4);
    for (Eigen::Index i = 0; i < 4; ++i) u.consumption_sum[i] = pick.normal();
    u.consumption_count = 3;
    double best = -1e300;
    ContentId arg = 0;
    for (const ContentItem& item : w.items) {
      if (item.lifetime_positives < c.similarity_min_positives) continue;
      const double s = item.latent_topic.dot(u.consumption_sum / 3.0);
      if (s > best) {
        best = s;
        arg = item.id;
      }
    }
    RandomStream rng(5);
    EXPECT_EQ(nominate(w, u, {NominatorKind::Similarity, 1}, rng).front(), arg);
  }
}

TEST(Nominate, SkipsItemsTheUserConsumed) {
  WorldState w = build_world(small_world());
  UserProfile& u = w.users[0];
  RandomStream rng(6);
  const auto top = nominate(w, u, {NominatorKind::Popularity, 5}, rng);
  u.consumed = {top[0], top[2]};
  std::sort(u.consumed.begin(), u.consumed.end());
  for (auto kind : {NominatorKind::Popularity, NominatorKind::Similarity, NominatorKind::FreshTail}) {
    for (ContentId id : nominate(w, u, {kind, 30}, rng)) EXPECT_FALSE(u.has_consumed(id));
  }
  const auto next = nominate(w, u, {NominatorKind::Popularity, 5}, rng);
  EXPECT_EQ(next.size(), 5u);
  EXPECT_EQ(next[0], top[1]);
}

TEST(Nominate, CodiversionRestrictsToArmCorpus) {
  WorldState w = build_world(small_world());
  apply_diversion(w, DiversionPlan("iso", {{0, 0.5, 0.5}, {1, 0.5, 0.5}},
                                   DiversionMode::UserCorpusCoDiverted));
  RandomStream rng(7);
  for (std::size_t i = 0; i < 40; ++i) {
    const UserProfile& u = w.users[i];
    if (u.arm == kNoArm) continue;
    for (auto kind : {NominatorKind::Popularity, NominatorKind::Similarity, NominatorKind::FreshTail}) {
      for (ContentId id : nominate(w, u, {kind, 20}, rng)) EXPECT_EQ(w.items[id].arm, u.arm);
    }
  }
}

TEST(RunDay, ImpressionsAreRequestsTimesSlateSize) {
  const WorldConfig c = small_world();
  WorldState w = build_world(c);
  const ArmPolicy p = greedy_policy(c);
  for (int d = 0; d < 3; ++d) {
    const DayLog log = run_day(w, {{0, p}});
    EXPECT_GT(log.requests.size(), 0u);
    EXPECT_EQ(log.records.size(), log.requests.size() * p.slots.slate_size);
  }
}

TEST(RunDay, ZeroExplorationSlotsIsTheControlPipeline) {
  const WorldConfig c = small_world(9);
  ArmPolicy control = greedy_policy(c);
  ArmPolicy variant = control;
  variant.slots.exploration_slots = 0;
  variant.slots.exploration = {NominatorKind::FreshTail, 77};
  WorldState a = build_world(c), b = build_world(c);
  for (int d = 0; d < 3; ++d) {
    run_day(a, {{0, control}});
    run_day(b, {{0, variant}});
  }
  EXPECT_EQ(log_text(a), log_text(b));
}

TEST(RunDay, DedicatedSlotsServeFreshTailItems) {
  const WorldConfig c = small_world(10);
  ArmPolicy p = greedy_policy(c);
  p.slots.exploration_slots = 1;
  WorldState w = build_world(c);
  run_day(w, {{0, p}});
  const CorpusIndex index = build_index(w, kNoArm);
  const std::set<ContentId> pool(index.fresh_tail.begin(), index.fresh_tail.end());
  ASSERT_GT(pool.size(), 10u);
  const DayLog day = run_day(w, {{0, p}});
  for (const RequestRecord& r : day.requests) {
    ASSERT_EQ(r.served.size(), p.slots.slate_size);
    EXPECT_TRUE(pool.contains(r.served.back())) << "request " << r.request_id;
  }
}

TEST(RunDay, HandTracedTwoItemDay) {
  WorldConfig c = small_world();
  c.n_users = 1;
  c.initial_corpus = 2;
  c.daily_new_content = 0;
  c.activity_mean = 6.0;
  c.activity_sigma = 0.0;
  c.graduation_threshold = 12;
  WorldState w = build_world(c);
  w.items[0].lifetime_positives = 3;
  w.items[1].lifetime_positives = 10;
  for (ContentItem& item : w.items) item.graduation_day.reset();

  // Greedy head on the popularity feature only, so item 1 always outranks 0.
  RepresentationModel m = RepresentationModel::identity(c.user_feature_dim(), c.content_feature_dim());
  Eigen::VectorXd head = Eigen::VectorXd::Zero(m.embedding_dim());
  head[static_cast<Eigen::Index>(c.user_feature_dim()) + 1] = 1.0;
  m.set_head_weights(head);
  ArmPolicy p;
  p.slots.slate_size = 1;
  p.ranking.model = std::make_shared<RepresentationModel>(m);

  const DayLog day = run_day(w, {{0, p}});
  ASSERT_GT(day.requests.size(), 0u);

  // Replay: each request shows the most popular unconsumed item; a positive
  // consumes it and bumps its count; graduation at 12.
  std::set<ContentId> consumed;
  std::map<ContentId, std::uint64_t> pos{{0, 3}, {1, 10}};
  std::optional<int> grad1;
  std::size_t r = 0;
  for (const RequestRecord& req : day.requests) {
    const ContentId expect = !consumed.contains(1) ? 1 : 0;
    if (consumed.size() == 2) {
      EXPECT_TRUE(req.served.empty());
      continue;
    }
    ASSERT_EQ(req.served.size(), 1u);
    EXPECT_EQ(req.served[0], expect);
    const InteractionRecord& rec = day.records[r++];
    EXPECT_EQ(rec.content, expect);
    if (rec.reward) {
      consumed.insert(expect);
      if (++pos[expect] >= 12 && expect == 1 && !grad1) grad1 = 0;
    }
  }
  EXPECT_EQ(r, day.records.size());
  EXPECT_EQ(w.items[0].lifetime_positives, pos[0]);
  EXPECT_EQ(w.items[1].lifetime_positives, pos[1]);
  EXPECT_EQ(w.items[1].graduation_day, grad1);
}

TEST(RunDay, PositivesAreConservedAndGraduationReplays) {
  const WorldConfig c = small_world(11);
  WorldState w = build_world(c);
  ArmPolicy p = greedy_policy(c);
  p.slots.exploration_slots = 2;
  std::vector<std::uint64_t> start(w.items.size());
  for (std::size_t i = 0; i < w.items.size(); ++i) start[i] = w.items[i].lifetime_positives;
  for (int d = 0; d < 6; ++d) {
    std::vector<std::uint64_t> before(w.items.size());
    for (std::size_t i = 0; i < w.items.size(); ++i) before[i] = w.items[i].lifetime_positives;
    const DayLog log = run_day(w, {{0, p}});
    std::uint64_t increments = 0, rewards = 0;
    for (std::size_t i = 0; i < before.size(); ++i) increments += w.items[i].lifetime_positives - before[i];
    for (const auto& r : log.records) rewards += static_cast<std::uint64_t>(r.reward);
    EXPECT_EQ(increments, rewards);
  }
  start.resize(w.items.size(), 0);
  std::vector<std::uint64_t> running = start;
  std::vector<std::optional<int>> first(w.items.size());
  for (std::size_t i = 0; i < w.items.size(); ++i) {
    if (w.items[i].publish_day < 0 && w.items[i].graduation_day) first[i] = w.items[i].graduation_day;
  }
  for (const LogEntry& e : w.log) {
    if (!e.reward) continue;
    if (++running[e.content] >= c.graduation_threshold && !first[e.content]) first[e.content] = e.day;
  }
  for (std::size_t i = 0; i < w.items.size(); ++i) {
    EXPECT_EQ(running[i], w.items[i].lifetime_positives);
    EXPECT_EQ(first[i], w.items[i].graduation_day) << "item " << i;
  }
}

TEST(RunDay, ArmIsolationUnderCodiversion) {
  const WorldConfig c = small_world(12);
  WorldState w = build_world(c);
  apply_diversion(w, DiversionPlan("iso", {{0, 0.5, 0.5}, {1, 0.5, 0.5}},
                                   DiversionMode::UserCorpusCoDiverted));
  ArmPolicy a = greedy_policy(c, 1), b = greedy_policy(c, 2);
  b.slots.exploration_slots = 1;
  for (int d = 0; d < 4; ++d) run_day(w, {{0, a}, {1, b}});
  ASSERT_FALSE(w.log.empty());
  for (const LogEntry& e : w.log) {
    EXPECT_EQ(w.users[e.user].arm, e.arm);
    EXPECT_EQ(w.items[e.content].arm, e.arm);
  }
  for (const ContentItem& item : w.items) EXPECT_NE(item.arm, kNoArm);
}

TEST(RunDay, NewItemsArePublishedNextDay) {
  const WorldConfig c = small_world(13);
  WorldState w = build_world(c);
  const DayLog d = run_day(w, {{0, greedy_policy(c)}});
  ASSERT_EQ(d.new_items.size(), c.daily_new_content);
  for (ContentId id : d.new_items) {
    EXPECT_EQ(w.items[id].publish_day, 1);
    EXPECT_EQ(w.items[id].lifetime_positives, 0u);
    EXPECT_EQ(w.age_of(w.items[id]), 0);
  }
}

TEST(RunDay, DeterministicAndIndependentOfArmOrder) {
  const WorldConfig c = small_world(14);
  const DiversionPlan plan("det", {{0, 0.5, 0.5}, {1, 0.5, 0.5}}, DiversionMode::UserCorpusCoDiverted);
  auto run = [&] {
    WorldState w = build_world(c);
    apply_diversion(w, plan);
    for (int d = 0; d < 3; ++d) run_day(w, {{1, greedy_policy(c, 2)}, {0, greedy_policy(c, 1)}});
    return log_text(w);
  };
  EXPECT_EQ(run(), run());
}

TEST(RunDay, MissingPolicyIsRejected) {
  const WorldConfig c = small_world();
  WorldState w = build_world(c);
  EXPECT_THROW(run_day(w, {{1, greedy_policy(c)}}), std::invalid_argument);
}

TEST(LogIo, RoundTrip) {
  const WorldConfig c = small_world(15);
  WorldState w = build_world(c);
  for (int d = 0; d < 2; ++d) run_day(w, {{0, greedy_policy(c)}});
  std::stringstream buf;
  write_log(buf, w.log);
  const auto back = read_log(buf);
  ASSERT_EQ(back.size(), w.log.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].day, w.log[i].day);
    EXPECT_EQ(back[i].user, w.log[i].user);
    EXPECT_EQ(back[i].content, w.log[i].content);
    EXPECT_EQ(back[i].reward, w.log[i].reward);
    EXPECT_EQ(back[i].score, w.log[i].score);
    EXPECT_EQ(back[i].arm, w.log[i].arm);
  }
  std::stringstream cbuf;
  write_corpus(cbuf, w.items);
  const auto items = read_corpus(cbuf);
  ASSERT_EQ(items.size(), w.items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    EXPECT_EQ(items[i].graduation_day, w.items[i].graduation_day);
    EXPECT_EQ(items[i].lifetime_positives, w.items[i].lifetime_positives);
    EXPECT_EQ(items[i].quality, w.items[i].quality);
    EXPECT_EQ(items[i].arm, w.items[i].arm);
  }
}

TEST(LogIo, MalformedLineIsReported) {
  std::stringstream buf("# header\n1\t2\tthree\n");
  EXPECT_THROW(read_log(buf), std::runtime_error);
}

}  // namespace
}  // namespace explab
