// explab: run scenarios, rebuild reports from exported logs, calibrate A/A
// bands and inspect model snapshots.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "explab/bayes_linear.hpp"
#include "explab/metrics.hpp"
#include "explab/representation.hpp"
#include "explab/scenario.hpp"
#include "explab/sim.hpp"

namespace fs = std::filesystem;
using namespace explab;

namespace {

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(p, mode);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

void export_run(const ScenarioRun& run, const fs::path& dir) {
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "report.csv");
    run.report.write_csv(out);
  }
  {
    auto out = open_out(dir / "report.txt");
    run.report.write_table(out);
  }
  if (run.world) {
    auto log = open_out(dir / "log.tsv");
    write_log(log, run.world->log);
    auto corpus = open_out(dir / "corpus.tsv");
    write_corpus(corpus, run.world->items);
  }
  for (const auto& [arm, policy] : run.policies) {
    const std::string stem = "arm" + std::to_string(arm);
    if (policy.model) {
      auto out = open_out(dir / (stem + ".model.bin"), std::ios::binary);
      policy.model->write(out);
    }
    if (policy.bandit) {
      auto out = open_out(dir / (stem + ".posterior.bin"), std::ios::binary);
      policy.bandit->write(out);
    }
  }
}

std::string format_band(double lo, double hi) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f", lo, hi);
  return buf;
}

void snapshot_info(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  in.seekg(0);
  const std::string m(magic, 4);
  if (m == "EXPS") {
    const PosteriorState s = PosteriorState::read(in);
    std::cout << "posterior snapshot\n"
              << "  dim          " << s.dim() << '\n'
              << "  strategy     " << to_string(s.strategy()) << '\n'
              << "  sigma_sq     " << s.sigma_sq() << '\n'
              << "  epsilon      " << s.epsilon() << '\n'
              << "  samples      " << s.source_count() << '\n'
              << "  |beta_hat|   " << s.beta_hat().norm() << '\n';
  } else if (m == "EXRM") {
    const RepresentationModel model = RepresentationModel::read(in);
    const NetworkConfig& c = model.config();
    std::cout << "representation snapshot\n"
              << "  user_dim     " << c.user_dim << '\n'
              << "  content_dim  " << c.content_dim << '\n'
              << "  hidden      ";
    for (std::size_t w : c.hidden) std::cout << ' ' << w;
    std::cout << '\n'
              << "  activation   " << (c.activation == Activation::Tanh ? "tanh" : "identity") << '\n'
              << "  parameters   " << model.parameter_count() << '\n';
  } else {
    throw std::runtime_error(path.string() + " is not an explab snapshot");
  }
}

std::vector<std::uint64_t> calibration_seeds(std::size_t n) {
  // Kept apart from the evaluation seeds used by scenario files.
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < n; ++i) seeds.push_back(1001 + i);
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"explab: exploration experiments in a simulated recommender"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a scenario and print its report");
  std::string run_cfg;
  std::vector<std::uint64_t> run_seeds;
  std::string run_out;
  bool run_csv = false;
  run->add_option("scenario", run_cfg, "Scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", run_seeds, "Override the scenario's seed list");
  run->add_option("--out", run_out, "Directory for report, log, corpus and snapshots");
  run->add_flag("--csv", run_csv, "Print the long-format report instead of the table");

  auto* report = app.add_subcommand("report", "Rebuild a report from an exported log and corpus");
  std::string rep_log, rep_corpus;
  std::vector<ArmId> rep_arms{0, 1};
  int rep_horizon = 0;
  ReportConfig rep_cfg;
  bool rep_csv = false;
  report->add_option("--log", rep_log, "Log file")->required()->check(CLI::ExistingFile);
  report->add_option("--corpus", rep_corpus, "Corpus snapshot")->required()->check(CLI::ExistingFile);
  report->add_option("--arms", rep_arms, "Arm ids")->delimiter(',');
  report->add_option("--horizon", rep_horizon, "Days covered; 0 infers it from the log");
  report->add_option("--thresholds", rep_cfg.corpus_thresholds, "Discoverable corpus X values")
      ->delimiter(',');
  report->add_option("--window", rep_cfg.corpus_window, "Discoverable corpus window Y");
  report->add_option("--graduation", rep_cfg.graduation, "Graduation threshold X'");
  report->add_flag("--csv", rep_csv, "Long-format output");

  auto* calib = app.add_subcommand("calibrate-aa", "Calibrate A/A noise bands for a scenario");
  std::string cal_cfg;
  std::size_t cal_seeds = 0;
  bool cal_write = false;
  calib->add_option("scenario", cal_cfg, "A/A scenario file")->required()->check(CLI::ExistingFile);
  calib->add_option("--seeds", cal_seeds, "Number of calibration seeds (default: aa.seeds)");
  calib->add_flag("--write", cal_write, "Store the bands back into the scenario file");

  auto* snap = app.add_subcommand("snapshot-info", "Describe a model or posterior snapshot");
  std::string snap_path;
  snap->add_option("file", snap_path, "Snapshot file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const Scenario s = load_scenario(run_cfg);
      const auto seeds = run_seeds.empty() ? s.seeds : run_seeds;
      for (std::uint64_t seed : seeds) {
        const ScenarioRun r = run_scenario(s, seed);
        std::cout << "# " << s.name << " (" << to_string(s.kind) << ") seed " << seed << '\n';
        if (run_csv) {
          r.report.write_csv(std::cout);
        } else {
          r.report.write_table(std::cout);
        }
        for (const AABand& b : s.aa_bands) {
          const double v = aa_statistic(r.report, s.arms.at(0).id, s.arms.at(1).id, b.metric);
          std::cout << "aa " << b.metric << ' ' << v << (b.contains(v) ? " inside" : " OUTSIDE")
                    << " [" << b.lo << ", " << b.hi << "]\n";
        }
        if (!run_out.empty()) {
          const fs::path dir = seeds.size() > 1 ? fs::path(run_out) / ("seed" + std::to_string(seed))
                                                : fs::path(run_out);
          export_run(r, dir);
        }
      }
    } else if (*report) {
      std::ifstream lin(rep_log);
      std::ifstream cin_(rep_corpus);
      const std::vector<LogEntry> log = read_log(lin);
      const std::vector<ContentItem> corpus = read_corpus(cin_);
      int horizon = rep_horizon;
      if (horizon == 0) {
        for (const LogEntry& e : log) horizon = std::max(horizon, e.day + 1);
      }
      const MetricsReport r = build_report(log, corpus, horizon, rep_arms, rep_cfg);
      if (rep_csv) {
        r.write_csv(std::cout);
      } else {
        r.write_table(std::cout);
      }
    } else if (*calib) {
      const Scenario s = load_scenario(cal_cfg);
      if (s.arms.size() != 2) throw std::runtime_error("A/A calibration needs exactly two arms");
      if (s.aa_metrics.empty()) throw std::runtime_error("scenario lists no aa.metrics");
      const std::size_t n = cal_seeds > 0 ? cal_seeds : s.aa_seeds;
      std::vector<MetricsReport> reports;
      for (std::uint64_t seed : calibration_seeds(n)) {
        reports.push_back(run_scenario(s, seed).report);
        std::cerr << "calibration seed " << seed << " done\n";
      }
      const auto bands = calibrate_aa_bands(reports, s.arms[0].id, s.arms[1].id, s.aa_metrics, s.aa_z);
      std::map<std::string, std::string> keys;
      for (const AABand& b : bands) {
        std::cout << "aa.band." << b.metric << " = " << format_band(b.lo, b.hi) << '\n';
        keys["aa.band." + b.metric] = format_band(b.lo, b.hi);
      }
      if (cal_write) update_scenario_keys(cal_cfg, keys);
    } else if (*snap) {
      snapshot_info(snap_path);
    }
  } catch (const std::exception& e) {
    std::cerr << "explab: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
