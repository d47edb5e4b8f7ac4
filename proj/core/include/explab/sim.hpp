#pragma once

// Synthetic closed-loop recommendation world.
//
// Users carry latent preferences, items carry latent topics and a hidden
// quality. Each simulated day every user issues Poisson(activity) requests;
// each request runs the arm's nominators, the arm's ranker, and draws one
// Bernoulli completion per served slot from
//   sigmoid(pref . topic + quality + bias).

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "explab/assignment.hpp"
#include "explab/random.hpp"
#include "explab/ranker.hpp"
#include "explab/representation.hpp"
#include "explab/types.hpp"

namespace explab {

struct WorldConfig {
  std::size_t n_users = 10000;
  std::size_t initial_corpus = 2000;
  /// New items injected at the end of every day, published the next day.
  std::size_t daily_new_content = 100;
  std::size_t latent_dim = 4;
  std::size_t n_providers = 500;
  /// Standard deviation of the query perturbation in the similarity nominator.
  double similarity_noise = 0.5;
  /// Items need this many lifetime positives at the start of a day before
  /// the similarity nominator can retrieve them; retrieval embeddings are
  /// learned from interactions.
  std::uint64_t similarity_min_positives = 1;
  /// X': lifetime positives at which an item leaves the exploration pool.
  std::uint64_t graduation_threshold = 5;
  int fresh_age_days = 3;
  std::uint64_t tail_positives = 5;
  /// Mean requests per user per day; per-user activity is log-normal.
  double activity_mean = 0.5;
  double activity_sigma = 0.75;
  /// Multiplies latent preference vectors; larger values make taste matter
  /// more relative to item quality.
  double preference_scale = 1.0;
  double quality_mean = 0.0;
  double quality_sd = 1.0;
  double reward_bias = -1.5;
  /// Noise on the observable copies of latent vectors used as features.
  double feature_noise = 0.3;
  /// Initial items are published uniformly in [-initial_max_age, -1].
  int initial_max_age = 60;
  /// Expected pre-horizon positives per day of age, scaled by the item's
  /// population-average completion rate.
  double initial_popularity_rate = 0.5;
  int horizon_days = 90;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t user_feature_dim() const { return 1 + latent_dim; }
  std::size_t content_feature_dim() const { return 2 + latent_dim; }
};

struct ContentItem {
  ContentId id = 0;
  ProviderId provider = 0;
  int publish_day = 0;
  Eigen::VectorXd latent_topic;
  Eigen::VectorXd observed_topic;
  double quality = 0.0;
  std::uint64_t lifetime_positives = 0;
  /// Day lifetime_positives first reached the graduation threshold. Items
  /// that were already graduated when the world was built carry their
  /// publish day.
  std::optional<int> graduation_day;
  ArmId arm = kNoArm;
};

struct UserProfile {
  UserId id = 0;
  Eigen::VectorXd latent_pref;
  Eigen::VectorXd observed_pref;
  double activity = 1.0;
  ArmId arm = 0;
  Eigen::VectorXd consumption_sum;
  std::uint64_t consumption_count = 0;
  std::uint64_t interactions = 0;
  /// Items this user gave a positive to, sorted. Nominators skip them.
  std::vector<ContentId> consumed;

  bool has_consumed(ContentId c) const;
};

/// Compact persistent log row; also the export format.
struct LogEntry {
  int day = 0;
  UserId user = 0;
  ContentId content = 0;
  int reward = 0;
  double score = 0.0;
  ArmId arm = 0;
};

/// Full per-impression record handed to training.
struct InteractionRecord {
  int day = 0;
  UserId user = 0;
  ContentId content = 0;
  int reward = 0;
  double served_score = 0.0;
  ArmId arm = 0;
  std::uint64_t request_id = 0;
  std::uint32_t slot = 0;
  FeatureRecord features;
};

struct RequestRecord {
  std::uint64_t request_id = 0;
  int day = 0;
  UserId user = 0;
  ArmId arm = 0;
  std::vector<ContentId> candidates;
  std::vector<ContentId> served;
};

struct DayLog {
  int day = 0;
  std::vector<InteractionRecord> records;
  std::vector<RequestRecord> requests;
  /// Content ids injected at the end of the day.
  std::vector<ContentId> new_items;
};

enum class NominatorKind { Popularity, Similarity, FreshTail };

struct NominatorSpec {
  NominatorKind kind = NominatorKind::Popularity;
  std::size_t count = 10;
};

/// K slots per request; the last m of them come from the exploration
/// nominator, ranked by the same policy. m = 0 is the plain pipeline.
struct SlotPlan {
  std::size_t slate_size = 4;
  std::size_t exploration_slots = 0;
  std::vector<NominatorSpec> standard{{NominatorKind::Popularity, 10},
                                      {NominatorKind::Similarity, 20}};
  NominatorSpec exploration{NominatorKind::FreshTail, 10};
};

struct ArmPolicy {
  SlotPlan slots;
  PolicySpec ranking;
  std::optional<AblationSpec> ablation;
};

using ArmPolicies = std::map<ArmId, ArmPolicy>;

class WorldState {
 public:
  WorldConfig config;
  int day = 0;
  std::vector<UserProfile> users;
  std::vector<ContentItem> items;
  std::vector<LogEntry> log;
  std::optional<DiversionPlan> plan;

  const UserProfile& user(UserId id) const { return users.at(id); }
  const ContentItem& item(ContentId id) const { return items.at(id); }
  /// True when the user's arm may be served this item.
  bool eligible(const UserProfile& u, const ContentItem& c) const;
  int age_of(const ContentItem& c) const { return day - c.publish_day; }

  std::vector<double> user_features(const UserProfile& u) const;
  std::vector<double> content_features(const ContentItem& c) const;
  FeatureRecord features(const UserProfile& u, const ContentItem& c) const;

  std::uint64_t next_request_id = 0;
};

WorldState build_world(const WorldConfig& cfg);

/// Tags users (and, when codiverted, the corpus by provider) and keeps the
/// plan so that items injected later are tagged the same way. Users outside
/// every bucket get kNoArm and issue no requests.
void apply_diversion(WorldState& world, const DiversionPlan& plan);

double true_mean_reward(const WorldState& world, const UserProfile& user, const ContentItem& item);

/// Arm-restricted view of the corpus taken at the start of a day.
struct CorpusIndex {
  ArmId arm = kNoArm;
  std::vector<ContentId> ids;
  /// Subset retrievable by the similarity nominator, and its topics.
  std::vector<ContentId> similar_ids;
  Eigen::MatrixXd topics;  // latent_dim x similar_ids.size()
  std::vector<ContentId> by_popularity;
  std::vector<ContentId> fresh_tail;
};

/// arm == kNoArm indexes the whole corpus.
CorpusIndex build_index(const WorldState& world, ArmId arm);

std::vector<ContentId> nominate(const WorldState& world, const CorpusIndex& index,
                                const UserProfile& user, const NominatorSpec& spec,
                                RandomStream& rng);
std::vector<ContentId> nominate(const WorldState& world, const UserProfile& user,
                                const NominatorSpec& spec, RandomStream& rng);

/// Advances the world by one day. Randomness comes from substreams of
/// (world seed, arm, day, user), so results do not depend on the order arms
/// are listed in. Throws std::invalid_argument if an active user's arm has no
/// policy.
DayLog run_day(WorldState& world, const ArmPolicies& policies);

/// Tab-separated export, one impression per line, after a '#' header:
///   day  user  content  reward  score  arm
void write_log(std::ostream& out, std::span<const LogEntry> log);
std::vector<LogEntry> read_log(std::istream& in);

/// Tab-separated corpus snapshot after a '#' header:
///   id  provider  publish_day  arm  quality  lifetime_positives  graduation_day
/// arm and graduation_day are -1 when unset. Latent vectors are not exported.
void write_corpus(std::ostream& out, std::span<const ContentItem> items);
std::vector<ContentItem> read_corpus(std::istream& in);

}  // namespace explab
