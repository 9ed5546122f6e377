#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ttoreg/config.hpp"
#include "ttoreg/metrics.hpp"
#include "ttoreg/tto.hpp"

namespace ttoreg {

namespace fs = std::filesystem;

/// Progress sink for commands; nullptr silences them.
struct CommandLog {
  std::ostream* out = nullptr;
  template <typename T>
  CommandLog& operator<<(const T& v) {
    if (out) *out << v;
    return *this;
  }
};

/// Generates the cohort described by cfg.synth into `dir`.
Cohort cmd_synth(const RunConfig& cfg, const fs::path& dir, CommandLog log = {});

struct TrainOutcome {
  TrainingResult training;
  fs::path checkpoint;
};

/// Trains on (planning, fraction 1) of every training subject. Writes
/// population.ckpt.*, epochs.csv and train_state.* (Adam moments) under
/// `out`. With `resume`, continues from the state found there.
TrainOutcome cmd_train(const RunConfig& cfg, const Cohort& cohort, const fs::path& out, bool resume = false,
                       CommandLog log = {});

struct RunSummaryRow {
  std::string subject;
  int fraction = 1;
  bool ood = false;
  std::string mode;
  std::string status;  // "failed" when the subject errored outside the run
  int iterations = 0;
  double wall_ms = 0.0;
  double initial_loss = 0.0;
  double best_loss = 0.0;
  double final_loss = 0.0;
  std::string error;
};

/// TTO over every test subject, one run directory per subject under `out`
/// plus summary.csv. scratch: fresh model seeded cfg.seed + subject index,
/// fraction 1. inter: `start` is a population checkpoint, fraction 1.
/// intra: `start` is a directory of earlier runs; each subject continues
/// from its own result on the next fraction. Per-subject failures are
/// recorded, not thrown.
std::vector<RunSummaryRow> cmd_tto(const RunConfig& cfg, const Cohort& cohort, TtoMode mode, const fs::path& start,
                                   const fs::path& out, CommandLog log = {});

std::vector<RunSummaryRow> read_run_summary(const fs::path& csv);

struct SubjectEvaluation {
  std::string subject;
  int fraction = 1;
  bool ood = false;
  std::vector<StructureScore> scores;
  std::vector<StructureScore> baseline;  // empty without a baseline
};

struct EvalOptions {
  fs::path runs;                                  // cmd_tto output
  std::optional<fs::path> baseline_checkpoint;    // one model for every subject
  std::optional<fs::path> baseline_runs;          // per-subject models
  int workers = 1;
};

/// Warps each subject's planning masks by its run field and scores them
/// against the truth of the run's fraction. With a baseline, the baseline
/// model's prediction for the same pair is scored too. Writes metrics.csv,
/// baseline_metrics.csv, comparison.csv, subject_deltas.csv and eval.json.
std::vector<SubjectEvaluation> cmd_eval(const EvalOptions& opts, const Cohort& cohort, const fs::path& out,
                                        CommandLog log = {});

struct ReportOutcome {
  int montages = 0;
  int runs = 0;
};

/// Mid-slice PNG montages per run, iteration/time histograms and summary.md.
ReportOutcome cmd_report(const std::vector<fs::path>& run_sets, const Cohort& cohort, const fs::path& out,
                         CommandLog log = {});

/// Equal-width bins over [min, max]; counts sum to values.size().
struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<int> counts;
};
Histogram make_histogram(const std::vector<double>& values, int bins);

void write_metrics_csv(const std::vector<SubjectEvaluation>& evals, bool baseline, const fs::path& path);

}  // namespace ttoreg
