// Command-line front end: synth, train, tto, eval, report, benchmark.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ttoreg/benchmark.hpp"
#include "ttoreg/commands.hpp"
#include "ttoreg/config.hpp"
#include "ttoreg/error.hpp"

namespace {

using namespace ttoreg;

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--workers", f.workers, "concurrent subjects")->check(CLI::PositiveNumber);
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (!f.out.empty()) cfg.out = f.out;
  if (f.seed) cfg.seed = *f.seed;
  if (f.workers) cfg.workers = *f.workers;
  cfg.validate();
  return cfg;
}

int fail(const std::string& kind, const std::string& message) {
  std::cerr << Json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ttoreg: deformable registration with test-time optimization"};
  app.require_subcommand(1);
  CommandLog log{&std::cout};

  CommonFlags synth_f, train_f, tto_f, eval_f, report_f, bench_f;

  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  add_common(synth, synth_f);

  auto* train = app.add_subcommand("train", "train the population model");
  add_common(train, train_f);
  std::string train_cohort;
  std::optional<int> epochs;
  bool resume = false;
  train->add_option("--cohort", train_cohort, "cohort directory (overrides config)");
  train->add_option("--epochs", epochs, "training epochs")->check(CLI::NonNegativeNumber);
  train->add_flag("--resume", resume, "continue from the state in --out");

  auto* tto = app.add_subcommand("tto", "test-time optimization over the test subjects");
  add_common(tto, tto_f);
  std::string tto_cohort, mode_text, start;
  std::optional<double> lr;
  tto->add_option("--cohort", tto_cohort, "cohort directory (overrides config)");
  tto->add_option("--mode", mode_text, "scratch, inter or intra")
      ->required()
      ->check(CLI::IsMember({"scratch", "inter", "intra"}));
  tto->add_option("--start", start, "population checkpoint (inter) or earlier run directory (intra)");
  tto->add_option("--lr", lr, "learning-rate override")->check(CLI::NonNegativeNumber);

  auto* eval = app.add_subcommand("eval", "score run fields against ground-truth structures");
  add_common(eval, eval_f);
  std::string eval_cohort, runs, baseline_ckpt, baseline_runs;
  eval->add_option("--cohort", eval_cohort, "cohort directory (overrides config)");
  eval->add_option("--runs", runs, "run directory from tto")->required();
  auto* bc = eval->add_option("--baseline-checkpoint", baseline_ckpt, "score this model's prediction too");
  auto* br = eval->add_option("--baseline-runs", baseline_runs, "score each subject's model from these runs too");
  bc->excludes(br);

  auto* report = app.add_subcommand("report", "montages, histograms and a summary document");
  add_common(report, report_f);
  std::string report_cohort;
  std::vector<std::string> report_runs;
  report->add_option("--cohort", report_cohort, "cohort directory (overrides config)");
  report->add_option("--runs", report_runs, "run directories from tto");

  auto* bench = app.add_subcommand("benchmark", "run experiments 1-3 and check their assertions");
  std::string bench_config, bench_out;
  std::optional<int> bench_workers;
  bench->add_option("--config", bench_config, "benchmark configuration")->required()->check(CLI::ExistingFile);
  bench->add_option("--out", bench_out, "output directory")->required();
  bench->add_option("--workers", bench_workers, "concurrent subjects")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what());
  }

  try {
    if (*synth) {
      RunConfig cfg = resolve(synth_f);
      if (synth_f.seed) cfg.synth.seed = *synth_f.seed;
      cmd_synth(cfg, synth_f.out.empty() ? cfg.cohort : cfg.out, log);
    } else if (*train) {
      RunConfig cfg = resolve(train_f);
      if (!train_cohort.empty()) cfg.cohort = train_cohort;
      if (epochs) cfg.epochs = *epochs;
      const Cohort cohort = read_cohort(cfg.cohort);
      const TrainOutcome t = cmd_train(cfg, cohort, cfg.out, resume, log);
      std::cout << "checkpoint " << t.checkpoint.string() << "\n";
    } else if (*tto) {
      RunConfig cfg = resolve(tto_f);
      if (!tto_cohort.empty()) cfg.cohort = tto_cohort;
      if (lr) cfg.adam.learning_rate = *lr;
      const TtoMode mode = parse_tto_mode(mode_text);
      if (mode != TtoMode::Scratch && start.empty()) throw ConfigError("--start is required for inter and intra");
      const Cohort cohort = read_cohort(cfg.cohort);
      const auto rows = cmd_tto(cfg, cohort, mode, start, cfg.out, log);
      int failed = 0;
      for (const auto& r : rows) failed += r.status == "failed" || r.status == "diverged";
      std::cout << rows.size() << " runs, " << failed << " failed -> " << cfg.out << "/summary.csv\n";
      return failed ? 3 : 0;
    } else if (*eval) {
      RunConfig cfg = resolve(eval_f);
      if (!eval_cohort.empty()) cfg.cohort = eval_cohort;
      EvalOptions opts;
      opts.runs = runs;
      opts.workers = cfg.workers;
      if (!baseline_ckpt.empty()) opts.baseline_checkpoint = baseline_ckpt;
      if (!baseline_runs.empty()) opts.baseline_runs = baseline_runs;
      cmd_eval(opts, read_cohort(cfg.cohort), cfg.out, log);
    } else if (*report) {
      RunConfig cfg = resolve(report_f);
      if (!report_cohort.empty()) cfg.cohort = report_cohort;
      std::vector<fs::path> sets(report_runs.begin(), report_runs.end());
      cmd_report(sets, read_cohort(cfg.cohort), cfg.out, log);
    } else if (*bench) {
      BenchmarkConfig cfg = load_benchmark_config(bench_config);
      if (bench_workers) cfg.base.workers = *bench_workers;
      const BenchmarkReport r = run_benchmark(cfg, bench_out, log);
      return r.passed() ? 0 : 4;
    }
  } catch (const ttoreg::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
