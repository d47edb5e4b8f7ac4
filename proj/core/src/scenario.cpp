#include "explab/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace explab {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("not a number: '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("not a boolean: '" + v + "'");
}

template <typename T>
std::vector<T> parse_numbers(const std::string& v) {
  std::vector<T> out;
  for (const std::string& s : split_list(v)) out.push_back(parse_number<T>(s));
  return out;
}

InverseStrategy parse_strategy(const std::string& v) {
  if (v == "pinv") return InverseStrategy::PseudoInverse;
  if (v == "cholesky") return InverseStrategy::Cholesky;
  throw std::invalid_argument("unknown strategy '" + v + "'");
}

ScenarioKind parse_kind(const std::string& v) {
  if (v == "codiverted") return ScenarioKind::Codiverted;
  if (v == "user_diverted") return ScenarioKind::UserDiverted;
  if (v == "ablation") return ScenarioKind::Ablation;
  if (v == "data_diverted") return ScenarioKind::DataDiverted;
  if (v == "linear_bandit") return ScenarioKind::LinearBandit;
  throw std::invalid_argument("unknown scenario kind '" + v + "'");
}

using Setter = std::function<void(const std::string&)>;

template <typename T>
Setter num(T& field) {
  return [&field](const std::string& v) { field = parse_number<T>(v); };
}

Setter flag(bool& field) {
  return [&field](const std::string& v) { field = parse_bool(v); };
}

std::map<std::string, Setter> world_setters(WorldConfig& w) {
  return {
      {"n_users", num(w.n_users)},
      {"initial_corpus", num(w.initial_corpus)},
      {"daily_new_content", num(w.daily_new_content)},
      {"latent_dim", num(w.latent_dim)},
      {"n_providers", num(w.n_providers)},
      {"similarity_noise", num(w.similarity_noise)},
      {"similarity_min_positives", num(w.similarity_min_positives)},
      {"graduation_threshold", num(w.graduation_threshold)},
      {"fresh_age_days", num(w.fresh_age_days)},
      {"tail_positives", num(w.tail_positives)},
      {"activity_mean", num(w.activity_mean)},
      {"activity_sigma", num(w.activity_sigma)},
      {"quality_mean", num(w.quality_mean)},
      {"quality_sd", num(w.quality_sd)},
      {"reward_bias", num(w.reward_bias)},
      {"feature_noise", num(w.feature_noise)},
      {"initial_max_age", num(w.initial_max_age)},
      {"initial_popularity_rate", num(w.initial_popularity_rate)},
      {"preference_scale", num(w.preference_scale)},
      {"horizon_days", num(w.horizon_days)},
      {"seed", num(w.seed)},
  };
}

void set_nominator(SlotPlan& slots, NominatorKind kind, std::size_t count) {
  std::erase_if(slots.standard, [&](const NominatorSpec& s) { return s.kind == kind; });
  if (count > 0) slots.standard.push_back({kind, count});
}

std::map<std::string, Setter> arm_setters(ArmSetup& a) {
  return {
      {"id", num(a.id)},
      {"fraction", num(a.fraction)},
      {"kind",
       [&a](const std::string& v) {
         const auto k = parse_policy_kind(v);
         if (!k) throw std::invalid_argument("unknown policy kind '" + v + "'");
         a.kind = *k;
       }},
      {"greedy_on_ensemble", flag(a.greedy_on_ensemble)},
      {"slate_size", num(a.slots.slate_size)},
      {"exploration_slots", num(a.slots.exploration_slots)},
      {"popularity",
       [&a](const std::string& v) {
         set_nominator(a.slots, NominatorKind::Popularity, parse_number<std::size_t>(v));
       }},
      {"similarity",
       [&a](const std::string& v) {
         set_nominator(a.slots, NominatorKind::Similarity, parse_number<std::size_t>(v));
       }},
      {"fresh_tail",
       [&a](const std::string& v) {
         set_nominator(a.slots, NominatorKind::FreshTail, parse_number<std::size_t>(v));
       }},
      {"exploration_count",
       [&a](const std::string& v) {
         a.slots.exploration = {NominatorKind::FreshTail, parse_number<std::size_t>(v)};
       }},
      {"hidden", [&a](const std::string& v) { a.network.hidden = parse_numbers<std::size_t>(v); }},
      {"activation",
       [&a](const std::string& v) {
         if (v == "tanh") {
           a.network.activation = Activation::Tanh;
         } else if (v == "identity") {
           a.network.activation = Activation::Identity;
         } else {
           throw std::invalid_argument("unknown activation '" + v + "'");
         }
       }},
      {"learning_rate", num(a.network.learning_rate)},
      {"network_seed", num(a.network.seed)},
      {"ensemble_size", num(a.ensemble_size)},
      {"shared_bottom", flag(a.shared_bottom)},
      {"batches_per_run", num(a.train.batches_per_run)},
      {"bootstrap_keep", num(a.train.bootstrap_keep)},
      {"batch_size", num(a.train.batch_size)},
      {"strategy", [&a](const std::string& v) { a.train.strategy = parse_strategy(v); }},
      {"epsilon", num(a.epsilon)},
      {"sigma_sq", num(a.sigma_sq)},
      {"mean_source",
       [&a](const std::string& v) {
         if (v == "logit") {
           a.mean_source = MeanSource::NetworkLogit;
         } else if (v == "posterior") {
           a.mean_source = MeanSource::PosteriorMean;
         } else {
           throw std::invalid_argument("unknown mean source '" + v + "'");
         }
       }},
      {"train_daily", flag(a.train_daily)},
      {"ablation",
       [&a](const std::string& v) {
         const double x = parse_number<double>(v);
         if (x > 0.0) {
           a.ablation = AblationSpec{x};
         } else {
           a.ablation.reset();
         }
       }},
  };
}

std::map<std::string, Setter> report_setters(ReportConfig& r) {
  return {
      {"corpus_thresholds",
       [&r](const std::string& v) { r.corpus_thresholds = parse_numbers<std::uint64_t>(v); }},
      {"corpus_window", num(r.corpus_window)},
      {"graduation", num(r.graduation)},
      {"histogram_thresholds",
       [&r](const std::string& v) { r.histogram_thresholds = parse_numbers<std::uint64_t>(v); }},
      {"histogram_window", num(r.histogram_window)},
      {"satisfied_threshold", num(r.satisfied_threshold)},
      {"freshness_edges", [&r](const std::string& v) { r.freshness_edges = parse_numbers<int>(v); }},
  };
}

std::map<std::string, Setter> dd_setters(DataDivertedPlan& p) {
  return {
      {"collection_days", num(p.collection_days)},
      {"train_steps", num(p.train_steps)},
      {"checkpoints", num(p.checkpoints)},
      {"batch_size", num(p.batch_size)},
      {"eval_pairs", num(p.eval_pairs)},
      {"eval_days", num(p.eval_days)},
  };
}

std::map<std::string, Setter> lb_setters(LinearBanditConfig& c) {
  return {
      {"arms", num(c.arms)},
      {"dim", num(c.dim)},
      {"horizon", num(c.horizon)},
      {"noise_sd", num(c.noise_sd)},
      {"sigma_sq", num(c.sigma_sq)},
      {"epsilon", num(c.epsilon)},
      {"finalize_every", num(c.finalize_every)},
      {"misspecification", num(c.misspecification)},
      {"strategy", [&c](const std::string& v) { c.strategy = parse_strategy(v); }},
  };
}

void apply(std::map<std::string, Setter> setters, const std::string& field,
           const std::string& value) {
  const auto it = setters.find(field);
  if (it == setters.end()) throw std::invalid_argument("unknown key");
  it->second(value);
}

class Parser {
 public:
  explicit Parser(Scenario& s) : s_(s) {}

  void set(const std::string& key, const std::string& value) {
    const auto dot = key.find('.');
    const std::string head = key.substr(0, dot);
    const std::string rest = dot == std::string::npos ? "" : key.substr(dot + 1);
    if (key == "scenario.name") {
      s_.name = value;
    } else if (key == "scenario.kind") {
      s_.kind = parse_kind(value);
    } else if (key == "seeds") {
      s_.seeds = parse_numbers<std::uint64_t>(value);
      if (s_.seeds.empty()) throw std::invalid_argument("empty seed list");
    } else if (key == "horizon") {
      s_.horizon = parse_number<int>(value);
      s_.world.horizon_days = s_.horizon;
    } else if (key == "plan.salt") {
      s_.salt = value;
    } else if (head == "world") {
      apply(world_setters(s_.world), rest, value);
    } else if (head == "metrics") {
      apply(report_setters(s_.report), rest, value);
    } else if (head == "arm") {
      const auto d2 = rest.find('.');
      if (d2 == std::string::npos || d2 == 0) throw std::invalid_argument("expected arm.<label>.<field>");
      apply(arm_setters(arm(rest.substr(0, d2))), rest.substr(d2 + 1), value);
    } else if (key.rfind("aa.band.", 0) == 0) {
      const std::string metric = key.substr(8);
      const auto bounds = parse_numbers<double>(value);
      if (metric.empty() || bounds.size() != 2 || bounds[0] > bounds[1]) {
        throw std::invalid_argument("expected aa.band.<metric> = lo,hi");
      }
      std::erase_if(s_.aa_bands, [&](const AABand& b) { return b.metric == metric; });
      s_.aa_bands.push_back({metric, bounds[0], bounds[1]});
    } else if (key == "aa.metrics") {
      s_.aa_metrics = split_list(value);
    } else if (key == "aa.seeds") {
      s_.aa_seeds = parse_number<std::size_t>(value);
    } else if (key == "aa.z") {
      s_.aa_z = parse_number<double>(value);
    } else if (key == "ablation.levels") {
      s_.ablation.levels = parse_numbers<double>(value);
    } else if (key == "ablation.tail_days") {
      s_.ablation.tail_days = parse_number<int>(value);
    } else if (key == "ablation.salt") {
      s_.ablation.salt = value;
    } else if (head == "dd") {
      apply(dd_setters(s_.data_diverted), rest, value);
    } else if (head == "lb") {
      apply(lb_setters(s_.linear_bandit), rest, value);
    } else {
      throw std::invalid_argument("unknown key");
    }
  }

 private:
  ArmSetup& arm(const std::string& label) {
    for (ArmSetup& a : s_.arms) {
      if (a.label == label) return a;
    }
    ArmSetup a;
    a.label = label;
    a.id = static_cast<ArmId>(s_.arms.size());
    s_.arms.push_back(std::move(a));
    return s_.arms.back();
  }

  Scenario& s_;
};

std::optional<std::pair<std::string, std::string>> split_line(const std::string& raw) {
  std::string line = raw;
  if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
  line = trim(line);
  if (line.empty()) return std::nullopt;
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("expected key = value");
  std::string key = trim(std::string_view(line).substr(0, eq));
  std::string value = trim(std::string_view(line).substr(eq + 1));
  if (key.empty()) throw std::invalid_argument("empty key");
  return std::make_pair(std::move(key), std::move(value));
}

void check(const Scenario& s) {
  if (s.horizon < 0) throw std::invalid_argument("negative horizon");
  s.world.validate();
  switch (s.kind) {
    case ScenarioKind::Codiverted:
    case ScenarioKind::UserDiverted:
      if (s.arms.empty()) throw std::invalid_argument("scenario defines no arms");
      break;
    case ScenarioKind::Ablation:
      if (s.arms.size() != 1) throw std::invalid_argument("ablation takes exactly one arm");
      break;
    case ScenarioKind::DataDiverted:
      s.arm("control");
      s.arm("treatment");
      break;
    case ScenarioKind::LinearBandit:
      break;
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

const char* to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::Codiverted:
      return "codiverted";
    case ScenarioKind::UserDiverted:
      return "user_diverted";
    case ScenarioKind::Ablation:
      return "ablation";
    case ScenarioKind::DataDiverted:
      return "data_diverted";
    case ScenarioKind::LinearBandit:
      return "linear_bandit";
  }
  return "unknown";
}

const ArmSetup& Scenario::arm(const std::string& label) const {
  for (const ArmSetup& a : arms) {
    if (a.label == label) return a;
  }
  throw std::invalid_argument("scenario has no arm '" + label + "'");
}

const AABand* Scenario::band(const std::string& metric) const {
  for (const AABand& b : aa_bands) {
    if (b.metric == metric) return &b;
  }
  return nullptr;
}

Scenario parse_scenario(std::istream& in) {
  Scenario s;
  Parser parser(s);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    try {
      const auto kv = split_line(raw);
      if (kv) parser.set(kv->first, kv->second);
    } catch (const std::exception& e) {
      throw std::runtime_error("scenario line " + std::to_string(lineno) + ": " + e.what() +
                               " in '" + trim(raw) + "'");
    }
  }
  if (s.kind == ScenarioKind::DataDiverted) {
    for (const ArmSetup& a : s.arms) {
      if (a.label == "control") s.data_diverted.control = a;
      if (a.label == "treatment") s.data_diverted.treatment = a;
    }
  }
  try {
    check(s);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("scenario: ") + e.what());
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario " + path.string());
  return parse_scenario(in);
}

void update_scenario_keys(const std::filesystem::path& path,
                          const std::map<std::string, std::string>& values) {
  std::vector<std::string> lines;
  {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario " + path.string());
    std::string raw;
    while (std::getline(in, raw)) lines.push_back(raw);
  }
  std::map<std::string, bool> written;
  for (std::string& line : lines) {
    const auto kv = split_line(line);
    if (!kv) continue;
    const auto it = values.find(kv->first);
    if (it == values.end()) continue;
    line = it->first + " = " + it->second;
    written[it->first] = true;
  }
  for (const auto& [key, value] : values) {
    if (!written[key]) lines.push_back(key + " = " + value);
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    for (const std::string& line : lines) out << line << '\n';
  }
  std::filesystem::rename(tmp, path);
}

SeededScenario seeded(const Scenario& s, std::uint64_t seed) {
  SeededScenario out{s.world, s.arms};
  out.world.seed = seed;
  for (ArmSetup& a : out.arms) a.network.seed = RandomStream(a.network.seed).derive(seed).seed();
  return out;
}

ScenarioRun run_scenario(const Scenario& s, std::uint64_t seed) {
  const SeededScenario ss = seeded(s, seed);
  ScenarioRun out;
  switch (s.kind) {
    case ScenarioKind::Codiverted:
    case ScenarioKind::UserDiverted: {
      const DiversionMode mode = s.kind == ScenarioKind::Codiverted
                                     ? DiversionMode::UserCorpusCoDiverted
                                     : DiversionMode::UserOnly;
      RunResult r = run_experiment(ss.world, s.salt, mode, ss.arms, s.horizon, s.report);
      out.report = std::move(r.report);
      out.world = std::move(r.world);
      out.policies = std::move(r.final_policies);
      out.last_requests = std::move(r.last_requests);
      break;
    }
    case ScenarioKind::Ablation: {
      AblationResult r = run_ablation(ss.world, ss.arms.front(), s.ablation, s.horizon, s.report);
      out.report = std::move(r.run.report);
      out.world = std::move(r.run.world);
      out.policies = std::move(r.run.final_policies);
      out.last_requests = std::move(r.run.last_requests);
      break;
    }
    case ScenarioKind::DataDiverted: {
      DataDivertedPlan plan = s.data_diverted;
      for (const ArmSetup& a : ss.arms) {
        if (a.label == "control") plan.control = a;
        if (a.label == "treatment") plan.treatment = a;
      }
      DataDivertedResult r = run_data_diverted(plan, ss.world, s.salt, s.report);
      out.report = std::move(r.eval_report);
      out.report.set_series(plan.control.id, "uncertainty_at_checkpoint", r.uncertainty_control);
      out.report.set_series(plan.treatment.id, "uncertainty_at_checkpoint",
                            r.uncertainty_treatment);
      out.report.set_value(plan.control.id, "training_impressions",
                           static_cast<double>(r.log_size_control));
      out.report.set_value(plan.treatment.id, "training_impressions",
                           static_cast<double>(r.log_size_treatment));
      out.world = std::move(r.collection.world);
      out.policies = std::move(r.collection.final_policies);
      out.last_requests = std::move(r.collection.last_requests);
      break;
    }
    case ScenarioKind::LinearBandit: {
      LinearBanditConfig cfg = s.linear_bandit;
      cfg.seed = seed;
      const LinearBanditResult r = run_linear_bandit(cfg);
      out.report.horizon = static_cast<int>(cfg.horizon);
      out.report.arms = {0, 1};
      out.report.arm_labels = {"nlb", "greedy"};
      const auto cumulative = [](const std::vector<double>& v) {
        std::vector<double> c(v.size());
        double run = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) c[i] = run += v[i];
        return c;
      };
      out.report.set_series(0, "cumulative_regret", cumulative(r.nlb_regret));
      out.report.set_series(1, "cumulative_regret", cumulative(r.greedy_regret));
      out.report.set_value(0, "first_decile_regret", r.first_decile);
      out.report.set_value(0, "last_decile_regret", r.last_decile);
      out.report.set_value(0, "sublinear", r.sublinear() ? 1.0 : 0.0);
      break;
    }
  }
  return out;
}

}  // namespace explab
