#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ttoreg/commands.hpp"
#include "ttoreg/config.hpp"

namespace ttoreg {

/// Experiment-1 architectures plus the shared run settings. Experiments 2
/// and 3 use architectures[efficiency_architecture]. `epochs`, when set,
/// holds one training length per architecture in place of base.epochs.
struct BenchmarkConfig {
  RunConfig base;
  std::vector<ArchitectureSpec> architectures;
  std::vector<int> epochs;
  int efficiency_architecture = 0;

  void validate() const;
  RunConfig run_config(std::size_t architecture) const;
};

void to_json(Json& j, const BenchmarkConfig& c);
void from_json(const Json& j, BenchmarkConfig& c);
BenchmarkConfig load_benchmark_config(const fs::path& path);

struct Assertion {
  int criterion = 0;
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct ArchitectureOutcome {
  std::string label;
  double population_dsc = 0.0;
  double individualized_dsc = 0.0;
  double population_hd95 = 0.0;
  double individualized_hd95 = 0.0;
  double ood_population_dsc = 0.0;
  double ood_individualized_dsc = 0.0;
  double train_seconds = 0.0;
  std::vector<double> epoch_loss;
  std::vector<std::string> flagged_subjects;  // >= 0.05 DSC or >= 2 mm HD95 gain
  std::vector<RunSummaryRow> inter_runs;

  double dsc_delta() const { return individualized_dsc - population_dsc; }
  double ood_dsc_delta() const { return ood_individualized_dsc - ood_population_dsc; }
};

struct EfficiencyRow {
  std::string subject;
  bool ood = false;
  int scratch_iterations = 0;
  int inter_iterations = 0;
  double scratch_ms = 0.0;
  double inter_ms = 0.0;
  std::string scratch_status;
  std::string inter_status;
};

struct FractionRow {
  std::string subject;
  bool ood = false;
  int inter_iterations = 0;  // fraction 1
  int intra_iterations = 0;  // fraction 2
  double dsc_before = 0.0;   // individualized model on fraction 2
  double dsc_after = 0.0;    // fractional model
  std::string intra_status;
};

struct BenchmarkReport {
  std::vector<ArchitectureOutcome> experiment1;
  std::string efficiency_label;
  std::vector<EfficiencyRow> experiment2;
  double median_scratch = 0.0;
  double median_inter = 0.0;
  std::vector<FractionRow> experiment3;
  double median_intra = 0.0;
  double median_inter_fraction1 = 0.0;
  double mean_dsc_before = 0.0;
  double mean_dsc_after = 0.0;
  std::vector<Assertion> assertions;

  bool passed() const;
};

/// Median of a non-empty sample (mean of the middle pair for even n).
double median(std::vector<double> values);

/// Synthesizes (or reuses) the cohort under out/cohort, then runs the three
/// experiments. Stages whose outputs already exist under `out` are reused,
/// so an interrupted benchmark can be restarted. Writes benchmark.json and
/// summary.txt.
BenchmarkReport run_benchmark(const BenchmarkConfig& cfg, const fs::path& out, CommandLog log = {});

ArchitectureOutcome run_experiment_1(const BenchmarkConfig& cfg, std::size_t architecture, const Cohort& cohort,
                                     const fs::path& out, CommandLog log = {});
std::vector<EfficiencyRow> run_experiment_2(const BenchmarkConfig& cfg, const Cohort& cohort, const fs::path& arch_dir,
                                            CommandLog log = {});
std::vector<FractionRow> run_experiment_3(const BenchmarkConfig& cfg, const Cohort& cohort, const fs::path& arch_dir,
                                          CommandLog log = {});

/// Directory name for an architecture, e.g. "encoder-decoder_x3".
std::string architecture_dir(const ArchitectureSpec& arch);

Json report_to_json(const BenchmarkReport& r);
std::string report_summary(const BenchmarkReport& r);

}  // namespace ttoreg
