#include "explab/sim.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace explab {
namespace {

// Age enters as 1 - exp(-age / kFreshnessDays), saturating for old items.
constexpr double kFreshnessDays = 7.0;
constexpr double kPopularityScale = 5.0;

// Substream tags.
constexpr std::uint64_t kUserTag = 1;
constexpr std::uint64_t kItemTag = 2;
constexpr std::uint64_t kNewItemTag = 3;
constexpr std::uint64_t kTrafficTag = 4;

Eigen::VectorXd spherical(std::size_t k, RandomStream& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(k));
  Eigen::VectorXd v(static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal(0.0, s);
  return v;
}

Eigen::VectorXd noisy_copy(const Eigen::VectorXd& v, double sd, RandomStream& rng) {
  Eigen::VectorXd out = v;
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += rng.normal(0.0, sd);
  return out;
}

ContentItem draw_item(const WorldConfig& cfg, ContentId id, int publish_day, RandomStream& rng) {
  ContentItem c;
  c.id = id;
  c.provider = rng.below(cfg.n_providers);
  c.publish_day = publish_day;
  c.latent_topic = spherical(cfg.latent_dim, rng);
  c.observed_topic = noisy_copy(c.latent_topic, cfg.feature_noise, rng);
  c.quality = rng.normal(cfg.quality_mean, cfg.quality_sd);
  return c;
}

bool codiverted(const WorldState& w) {
  return w.plan && w.plan->mode() == DiversionMode::UserCorpusCoDiverted;
}

ArmId corpus_arm(const WorldState& w, ProviderId provider) {
  if (!codiverted(w)) return kNoArm;
  return assign_corpus(provider, *w.plan).value_or(kNoArm);
}

}  // namespace

void WorldConfig::validate() const {
  if (latent_dim == 0) throw std::invalid_argument("latent_dim must be positive");
  if (n_providers == 0) throw std::invalid_argument("n_providers must be positive");
  if (graduation_threshold == 0) throw std::invalid_argument("graduation threshold must be positive");
  if (!(activity_mean > 0.0)) throw std::invalid_argument("activity_mean must be positive");
  if (activity_sigma < 0.0 || preference_scale < 0.0 || quality_sd < 0.0 || feature_noise < 0.0 || similarity_noise < 0.0) {
    throw std::invalid_argument("spreads must be nonnegative");
  }
  if (initial_max_age < 1) throw std::invalid_argument("initial_max_age must be at least 1");
  if (horizon_days < 0) throw std::invalid_argument("horizon must be nonnegative");
}

bool UserProfile::has_consumed(ContentId c) const {
  return std::binary_search(consumed.begin(), consumed.end(), c);
}

bool WorldState::eligible(const UserProfile& u, const ContentItem& c) const {
  if (!codiverted(*this)) return true;
  return c.arm != kNoArm && c.arm == u.arm;
}

std::vector<double> WorldState::user_features(const UserProfile& u) const {
  std::vector<double> f;
  f.reserve(config.user_feature_dim());
  f.push_back(std::log(u.activity));
  for (Eigen::Index i = 0; i < u.observed_pref.size(); ++i) f.push_back(u.observed_pref[i]);
  return f;
}

std::vector<double> WorldState::content_features(const ContentItem& c) const {
  std::vector<double> f;
  f.reserve(config.content_feature_dim());
  f.push_back(-std::expm1(-static_cast<double>(age_of(c)) / kFreshnessDays));
  f.push_back(std::log1p(static_cast<double>(c.lifetime_positives)) / kPopularityScale);
  for (Eigen::Index i = 0; i < c.observed_topic.size(); ++i) f.push_back(c.observed_topic[i]);
  return f;
}

FeatureRecord WorldState::features(const UserProfile& u, const ContentItem& c) const {
  return {user_features(u), content_features(c)};
}

WorldState build_world(const WorldConfig& cfg) {
  cfg.validate();
  WorldState w;
  w.config = cfg;
  RandomStream root(cfg.seed);

  RandomStream urng = root.derive(kUserTag);
  const double mu = std::log(cfg.activity_mean) - 0.5 * cfg.activity_sigma * cfg.activity_sigma;
  w.users.reserve(cfg.n_users);
  for (std::size_t i = 0; i < cfg.n_users; ++i) {
    UserProfile u;
    u.id = i;
    u.latent_pref = cfg.preference_scale * spherical(cfg.latent_dim, urng);
    u.observed_pref = noisy_copy(u.latent_pref, cfg.feature_noise, urng);
    u.activity = std::exp(urng.normal(mu, cfg.activity_sigma));
    u.consumption_sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cfg.latent_dim));
    w.users.push_back(std::move(u));
  }

  RandomStream irng = root.derive(kItemTag);
  w.items.reserve(cfg.initial_corpus + cfg.daily_new_content * static_cast<std::size_t>(cfg.horizon_days));
  for (std::size_t i = 0; i < cfg.initial_corpus; ++i) {
    const int publish = -1 - static_cast<int>(irng.below(static_cast<std::uint64_t>(cfg.initial_max_age)));
    ContentItem c = draw_item(cfg, i, publish, irng);
    const double rate = sigmoid(c.quality + cfg.reward_bias);
    c.lifetime_positives = irng.poisson(cfg.initial_popularity_rate * rate * static_cast<double>(-publish));
    if (c.lifetime_positives >= cfg.graduation_threshold) c.graduation_day = publish;
    w.items.push_back(std::move(c));
  }
  return w;
}

void apply_diversion(WorldState& world, const DiversionPlan& plan) {
  world.plan = plan;
  for (UserProfile& u : world.users) u.arm = assign_user(u.id, plan).value_or(kNoArm);
  for (ContentItem& c : world.items) c.arm = corpus_arm(world, c.provider);
}

double true_mean_reward(const WorldState& world, const UserProfile& user, const ContentItem& item) {
  return sigmoid(user.latent_pref.dot(item.latent_topic) + item.quality + world.config.reward_bias);
}

CorpusIndex build_index(const WorldState& world, ArmId arm) {
  CorpusIndex idx;
  idx.arm = arm;
  for (const ContentItem& c : world.items) {
    if (arm == kNoArm || c.arm == arm) idx.ids.push_back(c.id);
  }
  for (ContentId id : idx.ids) {
    if (world.items[id].lifetime_positives >= world.config.similarity_min_positives) {
      idx.similar_ids.push_back(id);
    }
  }
  const auto k = static_cast<Eigen::Index>(world.config.latent_dim);
  idx.topics.resize(k, static_cast<Eigen::Index>(idx.similar_ids.size()));
  for (std::size_t i = 0; i < idx.similar_ids.size(); ++i) {
    idx.topics.col(static_cast<Eigen::Index>(i)) = world.items[idx.similar_ids[i]].latent_topic;
  }
  idx.by_popularity = idx.ids;
  std::sort(idx.by_popularity.begin(), idx.by_popularity.end(), [&](ContentId a, ContentId b) {
    const auto pa = world.items[a].lifetime_positives;
    const auto pb = world.items[b].lifetime_positives;
    if (pa != pb) return pa > pb;
    return a < b;
  });
  const WorldConfig& cfg = world.config;
  for (ContentId id : idx.ids) {
    const ContentItem& c = world.items[id];
    if (c.graduation_day) continue;
    if (world.age_of(c) < cfg.fresh_age_days || c.lifetime_positives < cfg.tail_positives) {
      idx.fresh_tail.push_back(id);
    }
  }
  return idx;
}

namespace {

std::vector<ContentId> nominate_similar(const WorldState& world, const CorpusIndex& idx,
                                        const UserProfile& user, std::size_t n, RandomStream& rng) {
  const std::size_t total = idx.similar_ids.size();
  if (total == 0 || n == 0) return {};
  const auto k = static_cast<Eigen::Index>(world.config.latent_dim);
  Eigen::VectorXd query = Eigen::VectorXd::Zero(k);
  if (user.consumption_count > 0) {
    query = user.consumption_sum / static_cast<double>(user.consumption_count);
  }
  const double noise = world.config.similarity_noise / std::sqrt(static_cast<double>(k));
  if (noise > 0.0) {
    for (Eigen::Index i = 0; i < k; ++i) query[i] += rng.normal(0.0, noise);
  }
  const Eigen::VectorXd scores = idx.topics.transpose() * query;
  std::vector<std::uint32_t> order(total);
  std::iota(order.begin(), order.end(), 0U);
  const auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return idx.similar_ids[a] < idx.similar_ids[b];
  };
  // Over-fetch by the consumed count so that filtering still leaves n.
  const std::size_t top = std::min(n + user.consumed.size(), total);
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top - 1), order.end(),
                   better);
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), better);
  std::vector<ContentId> out;
  out.reserve(n);
  for (std::size_t i = 0; i < top && out.size() < n; ++i) {
    const ContentId id = idx.similar_ids[order[i]];
    if (!user.has_consumed(id)) out.push_back(id);
  }
  return out;
}

bool fresh_tail_eligible(const WorldState& world, const ContentItem& c) {
  if (c.graduation_day) return false;
  return world.age_of(c) < world.config.fresh_age_days ||
         c.lifetime_positives < world.config.tail_positives;
}

std::vector<ContentId> nominate_fresh_tail(const WorldState& world, const CorpusIndex& idx,
                                           const UserProfile& user, std::size_t n,
                                           RandomStream& rng) {
  const auto& pool = idx.fresh_tail;
  if (pool.empty() || n == 0) return {};
  std::vector<ContentId> out;
  out.reserve(n);
  if (pool.size() > 4 * n) {
    const std::size_t max_attempts = 8 * n + 64;
    for (std::size_t attempt = 0; attempt < max_attempts && out.size() < n; ++attempt) {
      const ContentId id = pool[rng.below(pool.size())];
      if (!fresh_tail_eligible(world, world.items[id]) || user.has_consumed(id)) continue;
      if (std::find(out.begin(), out.end(), id) != out.end()) continue;
      out.push_back(id);
    }
    if (out.size() == n) return out;
    out.clear();
  }
  std::vector<ContentId> live;
  for (ContentId id : pool) {
    if (fresh_tail_eligible(world, world.items[id]) && !user.has_consumed(id)) live.push_back(id);
  }
  const std::size_t take = std::min(n, live.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + rng.below(live.size() - i);
    std::swap(live[i], live[j]);
  }
  live.resize(take);
  return live;
}

}  // namespace

std::vector<ContentId> nominate(const WorldState& world, const CorpusIndex& index,
                                const UserProfile& user, const NominatorSpec& spec,
                                RandomStream& rng) {
  switch (spec.kind) {
    case NominatorKind::Popularity: {
      std::vector<ContentId> out;
      out.reserve(spec.count);
      for (ContentId id : index.by_popularity) {
        if (out.size() == spec.count) break;
        if (!user.has_consumed(id)) out.push_back(id);
      }
      return out;
    }
    case NominatorKind::Similarity:
      return nominate_similar(world, index, user, spec.count, rng);
    case NominatorKind::FreshTail:
      return nominate_fresh_tail(world, index, user, spec.count, rng);
  }
  return {};
}

std::vector<ContentId> nominate(const WorldState& world, const UserProfile& user,
                                const NominatorSpec& spec, RandomStream& rng) {
  const CorpusIndex index = build_index(world, codiverted(world) ? user.arm : kNoArm);
  return nominate(world, index, user, spec, rng);
}

namespace {

struct RequestContext {
  WorldState& world;
  UserProfile& user;
  const ArmPolicy& policy;
  const CorpusIndex& index;
  RandomStream& rng;
  std::vector<std::uint64_t>& stamp;  // per-item marker, == tag when already used
  DayLog& out;
};

Eigen::MatrixXd pack(const WorldState& w, const std::vector<double>& user_features,
                     const std::vector<ContentId>& ids) {
  const std::size_t u = user_features.size();
  const std::size_t c = w.config.content_feature_dim();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(u + c), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    for (std::size_t i = 0; i < u; ++i) x(static_cast<Eigen::Index>(i), col) = user_features[i];
    const std::vector<double> cf = w.content_features(w.items[ids[j]]);
    for (std::size_t i = 0; i < c; ++i) x(static_cast<Eigen::Index>(u + i), col) = cf[i];
  }
  return x;
}

std::vector<RankedItem> rank_ids(const RequestContext& ctx, const std::vector<double>& uf,
                                 const std::vector<ContentId>& ids, std::size_t k) {
  if (ids.empty() || k == 0) return {};
  const Eigen::MatrixXd x = pack(ctx.world, uf, ids);
  const std::vector<ScoreDistribution> dists = score_inputs(ctx.policy.ranking, x);
  return rank_distributions(dists, ids, k, ctx.rng);
}

void serve_request(RequestContext& ctx) {
  WorldState& w = ctx.world;
  const SlotPlan& slots = ctx.policy.slots;
  const std::uint64_t rid = w.next_request_id++;
  const std::uint64_t tag_candidate = 2 * rid + 1;
  const std::uint64_t tag_served = 2 * rid + 2;

  double ablation = 0.0;
  std::uint64_t user_seed = 0;
  if (ctx.policy.ablation && ctx.policy.ablation->fraction > 0.0) {
    ctx.policy.ablation->validate();
    ablation = ctx.policy.ablation->fraction;
    user_seed = ablation_seed(*ctx.policy.ablation, ctx.user.id);
  }
  auto gather = [&](const NominatorSpec& spec) {
    NominatorSpec s = spec;
    if (ablation > 0.0) s.count = inflated_count(spec.count, ablation);
    std::vector<ContentId> list = nominate(w, ctx.index, ctx.user, s, ctx.rng);
    if (ablation > 0.0) {
      std::erase_if(list, [&](ContentId c) { return !survives_ablation(user_seed, c, ablation); });
    }
    return list;
  };

  RequestRecord req;
  req.request_id = rid;
  req.day = w.day;
  req.user = ctx.user.id;
  req.arm = ctx.user.arm;

  std::vector<ContentId> standard;
  for (const NominatorSpec& spec : slots.standard) {
    for (ContentId c : gather(spec)) {
      if (ctx.stamp[c] == tag_candidate) continue;
      ctx.stamp[c] = tag_candidate;
      standard.push_back(c);
    }
  }
  req.candidates = standard;

  const std::vector<double> uf = w.user_features(ctx.user);
  const std::size_t k = slots.slate_size;
  const std::size_t m = std::min(slots.exploration_slots, k);
  const std::vector<RankedItem> ranked = rank_ids(ctx, uf, standard, k);

  std::vector<RankedItem> slate;
  slate.reserve(k);
  for (std::size_t i = 0; i < ranked.size() && slate.size() < k - m; ++i) {
    slate.push_back(ranked[i]);
    ctx.stamp[ranked[i].id] = tag_served;
  }
  if (m > 0) {
    std::vector<ContentId> explore;
    for (ContentId c : gather(slots.exploration)) {
      if (ctx.stamp[c] == tag_served) continue;
      if (ctx.stamp[c] != tag_candidate) req.candidates.push_back(c);
      explore.push_back(c);
    }
    for (const RankedItem& r : rank_ids(ctx, uf, explore, m)) {
      slate.push_back(r);
      ctx.stamp[r.id] = tag_served;
    }
  }
  for (std::size_t i = 0; i < ranked.size() && slate.size() < k; ++i) {
    if (ctx.stamp[ranked[i].id] == tag_served) continue;
    slate.push_back(ranked[i]);
    ctx.stamp[ranked[i].id] = tag_served;
  }

  // Features are snapshotted before any of this request's rewards land.
  std::vector<FeatureRecord> feats;
  feats.reserve(slate.size());
  for (const RankedItem& r : slate) feats.push_back({uf, w.content_features(w.items[r.id])});

  for (std::size_t s = 0; s < slate.size(); ++s) {
    ContentItem& item = w.items[slate[s].id];
    const int reward = ctx.rng.bernoulli(true_mean_reward(w, ctx.user, item)) ? 1 : 0;
    ++ctx.user.interactions;
    if (reward) {
      ++item.lifetime_positives;
      if (!item.graduation_day && item.lifetime_positives >= w.config.graduation_threshold) {
        item.graduation_day = w.day;
      }
      ctx.user.consumption_sum += item.latent_topic;
      ++ctx.user.consumption_count;
      auto& seen = ctx.user.consumed;
      seen.insert(std::upper_bound(seen.begin(), seen.end(), item.id), item.id);
    }
    InteractionRecord rec;
    rec.day = w.day;
    rec.user = ctx.user.id;
    rec.content = item.id;
    rec.reward = reward;
    rec.served_score = slate[s].score;
    rec.arm = ctx.user.arm;
    rec.request_id = rid;
    rec.slot = static_cast<std::uint32_t>(s);
    rec.features = std::move(feats[s]);
    ctx.out.records.push_back(std::move(rec));
    req.served.push_back(item.id);
  }
  ctx.out.requests.push_back(std::move(req));
}

}  // namespace

DayLog run_day(WorldState& world, const ArmPolicies& policies) {
  DayLog out;
  out.day = world.day;
  const bool split_corpus = codiverted(world);

  std::map<ArmId, CorpusIndex> indices;
  for (const auto& [arm, policy] : policies) {
    policy.ranking.validate();
    const ArmId key = split_corpus ? arm : kNoArm;
    if (!indices.contains(key)) indices.emplace(key, build_index(world, key));
  }

  std::vector<std::uint64_t> stamp(world.items.size(), 0);
  const RandomStream root(world.config.seed);
  for (UserProfile& user : world.users) {
    if (user.arm == kNoArm) continue;
    const auto it = policies.find(user.arm);
    if (it == policies.end()) {
      throw std::invalid_argument("no policy for arm " + std::to_string(user.arm));
    }
    const CorpusIndex& index = indices.at(split_corpus ? user.arm : kNoArm);
    RandomStream rng = root.derive(kTrafficTag, (static_cast<std::uint64_t>(user.arm) << 32) ^
                                                    static_cast<std::uint32_t>(world.day))
                           .derive(user.id);
    const std::uint64_t n_requests = rng.poisson(user.activity);
    RequestContext ctx{world, user, it->second, index, rng, stamp, out};
    for (std::uint64_t r = 0; r < n_requests; ++r) serve_request(ctx);
  }

  RandomStream nrng = root.derive(kNewItemTag, static_cast<std::uint64_t>(world.day));
  for (std::size_t i = 0; i < world.config.daily_new_content; ++i) {
    ContentItem c = draw_item(world.config, world.items.size(), world.day + 1, nrng);
    c.arm = corpus_arm(world, c.provider);
    out.new_items.push_back(c.id);
    world.items.push_back(std::move(c));
  }

  world.log.reserve(world.log.size() + out.records.size());
  for (const InteractionRecord& r : out.records) {
    world.log.push_back({r.day, r.user, r.content, r.reward, r.served_score, r.arm});
  }
  ++world.day;
  return out;
}

void write_log(std::ostream& out, std::span<const LogEntry> log) {
  out << "# day\tuser\tcontent\treward\tscore\tarm\n";
  char buf[64];
  for (const LogEntry& e : log) {
    std::snprintf(buf, sizeof buf, "%.17g", e.score);
    out << e.day << '\t' << e.user << '\t' << e.content << '\t' << e.reward << '\t' << buf << '\t'
        << e.arm << '\n';
  }
}

std::vector<LogEntry> read_log(std::istream& in) {
  std::vector<LogEntry> log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    LogEntry e;
    if (!(ss >> e.day >> e.user >> e.content >> e.reward >> e.score >> e.arm)) {
      throw std::runtime_error("malformed log line " + std::to_string(lineno));
    }
    log.push_back(e);
  }
  return log;
}

void write_corpus(std::ostream& out, std::span<const ContentItem> items) {
  out << "# id\tprovider\tpublish_day\tarm\tquality\tlifetime_positives\tgraduation_day\n";
  char buf[64];
  for (const ContentItem& c : items) {
    std::snprintf(buf, sizeof buf, "%.17g", c.quality);
    out << c.id << '\t' << c.provider << '\t' << c.publish_day << '\t'
        << (c.arm == kNoArm ? -1 : static_cast<long long>(c.arm)) << '\t' << buf << '\t'
        << c.lifetime_positives << '\t' << (c.graduation_day ? *c.graduation_day : -1) << '\n';
  }
}

std::vector<ContentItem> read_corpus(std::istream& in) {
  std::vector<ContentItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ContentItem c;
    long long arm = -1;
    int grad = -1;
    if (!(ss >> c.id >> c.provider >> c.publish_day >> arm >> c.quality >> c.lifetime_positives >>
          grad)) {
      throw std::runtime_error("malformed corpus line " + std::to_string(lineno));
    }
    c.arm = arm < 0 ? kNoArm : static_cast<ArmId>(arm);
    // -1 is ambiguous with a pre-horizon graduation on day -1; the exporter
    // never emits that because initial items graduate on their publish day.
    if (grad != -1) c.graduation_day = grad;
    items.push_back(std::move(c));
  }
  return items;
}

}  // namespace explab
