#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "explab/scenario.hpp"

namespace explab {
namespace {

Scenario parse(const std::string& text) {
  std::istringstream in(text);
  return parse_scenario(in);
}

const char* kBasic = R"(# two arms
scenario.name = basic
scenario.kind = codiverted
seeds = 3, 4
horizon = 12
plan.salt = s1
world.n_users = 50      # small
world.initial_corpus = 40
world.reward_bias = -2.5
metrics.corpus_thresholds = 10,40
arm.control.fraction = 0.4
arm.treatment.fraction = 0.4
arm.treatment.kind = nlb
arm.treatment.exploration_slots = 1
arm.treatment.exploration_count = 12
arm.treatment.fresh_tail = 5
arm.treatment.similarity = 0
arm.treatment.hidden = 16,8
arm.treatment.strategy = cholesky
aa.band.discoverable_x10_y7 = -0.2,0.25
)";

TEST(ParseScenario, ReadsEveryKeyFamily) {
  const Scenario s = parse(kBasic);
  EXPECT_EQ(s.name, "basic");
  EXPECT_EQ(s.kind, ScenarioKind::Codiverted);
  EXPECT_EQ(s.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(s.horizon, 12);
  EXPECT_EQ(s.world.horizon_days, 12);
  EXPECT_EQ(s.salt, "s1");
  EXPECT_EQ(s.world.n_users, 50u);
  EXPECT_EQ(s.world.reward_bias, -2.5);
  EXPECT_EQ(s.report.corpus_thresholds, (std::vector<std::uint64_t>{10, 40}));
  ASSERT_EQ(s.arms.size(), 2u);
  EXPECT_EQ(s.arms[0].label, "control");
  EXPECT_EQ(s.arms[0].id, 0);
  EXPECT_EQ(s.arms[1].id, 1);
  const ArmSetup& t = s.arm("treatment");
  EXPECT_EQ(t.kind, PolicyKind::NeuralLinearTS);
  EXPECT_EQ(t.slots.exploration_slots, 1u);
  EXPECT_EQ(t.slots.exploration.count, 12u);
  ASSERT_EQ(t.slots.standard.size(), 2u);
  EXPECT_EQ(t.slots.standard[0].kind, NominatorKind::Popularity);
  EXPECT_EQ(t.slots.standard[1].kind, NominatorKind::FreshTail);
  EXPECT_EQ(t.slots.standard[1].count, 5u);
  EXPECT_EQ(t.network.hidden, (std::vector<std::size_t>{16, 8}));
  EXPECT_EQ(t.train.strategy, InverseStrategy::Cholesky);
  ASSERT_NE(s.band("discoverable_x10_y7"), nullptr);
  EXPECT_EQ(s.band("discoverable_x10_y7")->hi, 0.25);
  EXPECT_EQ(s.band("other"), nullptr);
}

TEST(ParseScenario, ErrorsNameTheLine) {
  try {
    parse("scenario.name = x\nworld.n_userz = 3\n");
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse("world.n_users = many\n"), std::runtime_error);
  EXPECT_THROW(parse("arm.a.kind = bandit\narm.a.fraction = 1\n"), std::runtime_error);
  EXPECT_THROW(parse("no equals sign\n"), std::runtime_error);
  EXPECT_THROW(parse("arm.fraction = 0.5\n"), std::runtime_error);
  EXPECT_THROW(parse("aa.band.m = 1,0\narm.a.fraction = 1\n"), std::runtime_error);
}

TEST(ParseScenario, KindSpecificChecks) {
  EXPECT_THROW(parse("scenario.kind = codiverted\n"), std::runtime_error);
  EXPECT_THROW(parse("scenario.kind = ablation\narm.a.fraction = 1\narm.b.fraction = 0\n"),
               std::runtime_error);
  EXPECT_THROW(parse("scenario.kind = data_diverted\narm.control.kind = greedy\n"), std::runtime_error);
  EXPECT_NO_THROW(parse("scenario.kind = linear_bandit\nlb.arms = 5\n"));
  const Scenario dd = parse(
      "scenario.kind = data_diverted\narm.control.greedy_on_ensemble = true\n"
      "arm.treatment.kind = ensemble_ts\ndd.train_steps = 50\n");
  EXPECT_EQ(dd.data_diverted.treatment.kind, PolicyKind::EnsembleTS);
  EXPECT_TRUE(dd.data_diverted.control.greedy_on_ensemble);
  EXPECT_EQ(dd.data_diverted.train_steps, 50u);
}

TEST(UpdateScenarioKeys, RewritesInPlaceAndAppends) {
  const auto path = std::filesystem::temp_directory_path() / "explab_update_keys.cfg";
  {
    std::ofstream out(path);
    out << kBasic;
  }
  update_scenario_keys(path, {{"aa.band.discoverable_x10_y7", "-0.1,0.1"},
                              {"aa.band.discoverable_x40_y7", "-0.3,0.3"}});
  std::ifstream in(path);
  std::stringstream text;
  text << in.rdbuf();
  EXPECT_NE(text.str().find("# two arms"), std::string::npos);
  EXPECT_NE(text.str().find("world.n_users = 50      # small"), std::string::npos);
  const Scenario s = load_scenario(path);
  ASSERT_EQ(s.aa_bands.size(), 2u);
  EXPECT_EQ(s.band("discoverable_x10_y7")->lo, -0.1);
  EXPECT_EQ(s.band("discoverable_x40_y7")->hi, 0.3);
  std::filesystem::remove(path);
}

TEST(Seeded, MixesSeedIntoNetworks) {
  const Scenario s = parse(kBasic);
  const SeededScenario a = seeded(s, 3), b = seeded(s, 4);
  EXPECT_EQ(a.world.seed, 3u);
  EXPECT_NE(a.arms[0].network.seed, b.arms[0].network.seed);
  EXPECT_EQ(a.arms[0].network.seed, seeded(s, 3).arms[0].network.seed);
}

TEST(RunScenario, LinearBanditReport) {
  const Scenario s = parse("scenario.kind = linear_bandit\nlb.horizon = 500\nlb.arms = 5\n");
  const ScenarioRun r = run_scenario(s, 2);
  EXPECT_EQ(r.report.series(0, "cumulative_regret").size(), 500u);
  EXPECT_EQ(r.report.series(1, "cumulative_regret").size(), 500u);
  EXPECT_TRUE(r.report.has_value(0, "sublinear"));
  EXPECT_FALSE(r.world.has_value());
}

}  // namespace
}  // namespace explab
