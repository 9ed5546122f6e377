#include "ttoreg/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ttoreg/error.hpp"
#include "ttoreg/io.hpp"

namespace ttoreg {

void BenchmarkConfig::validate() const {
  base.validate();
  if (architectures.empty()) throw ConfigError("benchmark needs at least one architecture");
  for (const auto& a : architectures) a.validate();
  if (efficiency_architecture < 0 || efficiency_architecture >= static_cast<int>(architectures.size())) {
    throw ConfigError("efficiency_architecture is out of range");
  }
  if (!epochs.empty() && epochs.size() != architectures.size()) {
    throw ConfigError("epochs needs one entry per architecture");
  }
  for (int e : epochs)
    if (e < 0) throw ConfigError("epochs must be >= 0");
  if (base.synth.n_fractions < 2) throw ConfigError("benchmark cohort needs two fractions");
  if (base.synth.n_test < 1 || base.synth.n_train < 1) throw ConfigError("benchmark needs train and test subjects");
}

void to_json(Json& j, const BenchmarkConfig& c) {
  j = Json{{"base", c.base}, {"architectures", c.architectures}, {"efficiency_architecture", c.efficiency_architecture}};
  if (!c.epochs.empty()) j["epochs"] = c.epochs;
}

void from_json(const Json& j, BenchmarkConfig& c) {
  require_known_keys(j, {"base", "architectures", "epochs", "efficiency_architecture"}, "benchmark");
  if (j.contains("base")) from_json(j.at("base"), c.base);
  if (j.contains("architectures")) {
    if (!j.at("architectures").is_array()) throw ConfigError("architectures must be an array");
    c.architectures.clear();
    for (const Json& a : j.at("architectures")) {
      ArchitectureSpec spec;
      from_json(a, spec);
      c.architectures.push_back(spec);
    }
  }
  if (j.contains("epochs")) {
    try {
      c.epochs = j.at("epochs").get<std::vector<int>>();
    } catch (const Json::exception& e) {
      throw ConfigError(std::string("benchmark.epochs: ") + e.what());
    }
  }
  if (j.contains("efficiency_architecture")) c.efficiency_architecture = j.at("efficiency_architecture").get<int>();
  c.validate();
}

RunConfig BenchmarkConfig::run_config(std::size_t architecture) const {
  RunConfig rc = base;
  rc.arch = architectures.at(architecture);
  if (!epochs.empty()) rc.epochs = epochs.at(architecture);
  return rc;
}

BenchmarkConfig load_benchmark_config(const fs::path& path) {
  BenchmarkConfig c;
  from_json(read_json_file(path), c);
  return c;
}

bool BenchmarkReport::passed() const {
  return !assertions.empty() && std::all_of(assertions.begin(), assertions.end(), [](const auto& a) { return a.pass; });
}

double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string architecture_dir(const ArchitectureSpec& arch) {
  return std::string(to_string(arch.kind)) + "_x" + std::to_string(arch.cascade_stages);
}

namespace {

double mean_dsc(const std::vector<SubjectEvaluation>& evals, bool baseline, bool ood_only) {
  std::vector<std::optional<double>> v;
  for (const auto& e : evals) {
    if (ood_only && !e.ood) continue;
    for (const auto& s : baseline ? e.baseline : e.scores) v.push_back(s.dsc);
  }
  return mean_defined(v).mean;
}

double mean_hd95(const std::vector<SubjectEvaluation>& evals, bool baseline) {
  std::vector<std::optional<double>> v;
  for (const auto& e : evals) {
    for (const auto& s : baseline ? e.baseline : e.scores) v.push_back(s.hd95);
  }
  return mean_defined(v).mean;
}

double subject_mean(const std::vector<StructureScore>& scores, bool hd) {
  std::vector<std::optional<double>> v;
  for (const auto& s : scores) v.push_back(hd ? s.hd95 : s.dsc);
  return mean_defined(v).mean;
}

std::vector<RunSummaryRow> tto_stage(const RunConfig& rc, const Cohort& cohort, TtoMode mode, const fs::path& start,
                                     const fs::path& dir, CommandLog log) {
  if (fs::exists(dir / "summary.csv")) return read_run_summary(dir / "summary.csv");
  return cmd_tto(rc, cohort, mode, start, dir, log);
}

}  // namespace

ArchitectureOutcome run_experiment_1(const BenchmarkConfig& cfg, std::size_t architecture, const Cohort& cohort,
                                     const fs::path& out, CommandLog log) {
  const RunConfig rc = cfg.run_config(architecture);
  const fs::path dir = out / architecture_dir(rc.arch);
  ArchitectureOutcome o;
  o.label = rc.arch.label();
  log << "== experiment 1: " << o.label << "\n";

  const fs::path train_dir = dir / "train";
  auto read_epochs = [&] {
    o.epoch_loss.clear();
    std::ifstream in(train_dir / "epochs.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto c1 = line.find(','), c2 = line.rfind(',');
      if (c1 == std::string::npos || c2 == c1) continue;
      o.epoch_loss.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
    }
  };
  read_epochs();
  if (!fs::exists(train_dir / "population.ckpt.json") || static_cast<int>(o.epoch_loss.size()) < rc.epochs) {
    const auto t0 = std::chrono::steady_clock::now();
    cmd_train(rc, cohort, train_dir, true, log);
    o.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    read_epochs();
  }
  o.inter_runs = tto_stage(rc, cohort, TtoMode::Inter, train_dir / "population.ckpt.json", dir / "inter", log);

  EvalOptions eo;
  eo.runs = dir / "inter";
  eo.baseline_checkpoint = train_dir / "population.ckpt.json";
  eo.workers = rc.workers;
  const auto evals = cmd_eval(eo, cohort, dir / "eval_inter", log);
  o.population_dsc = mean_dsc(evals, true, false);
  o.individualized_dsc = mean_dsc(evals, false, false);
  o.ood_population_dsc = mean_dsc(evals, true, true);
  o.ood_individualized_dsc = mean_dsc(evals, false, true);
  o.population_hd95 = mean_hd95(evals, true);
  o.individualized_hd95 = mean_hd95(evals, false);
  for (const auto& e : evals) {
    const double dd = subject_mean(e.scores, false) - subject_mean(e.baseline, false);
    const double dh = subject_mean(e.baseline, true) - subject_mean(e.scores, true);
    if ((std::isfinite(dd) && dd >= 0.05) || (std::isfinite(dh) && dh >= 2.0)) o.flagged_subjects.push_back(e.subject);
  }
  return o;
}

std::vector<EfficiencyRow> run_experiment_2(const BenchmarkConfig& cfg, const Cohort& cohort, const fs::path& arch_dir,
                                            CommandLog log) {
  const RunConfig rc = cfg.run_config(cfg.efficiency_architecture);
  log << "== experiment 2: scratch vs inter, " << rc.arch.label() << "\n";
  const auto inter = read_run_summary(arch_dir / "inter" / "summary.csv");
  const auto scratch = tto_stage(rc, cohort, TtoMode::Scratch, {}, arch_dir / "scratch", log);
  std::vector<EfficiencyRow> rows;
  for (const auto& s : scratch) {
    const auto it = std::find_if(inter.begin(), inter.end(), [&](const auto& r) { return r.subject == s.subject; });
    if (it == inter.end()) throw FormatError("no inter run for " + s.subject);
    rows.push_back({s.subject, s.ood, s.iterations, it->iterations, s.wall_ms, it->wall_ms, s.status, it->status});
  }
  return rows;
}

std::vector<FractionRow> run_experiment_3(const BenchmarkConfig& cfg, const Cohort& cohort, const fs::path& arch_dir,
                                          CommandLog log) {
  const RunConfig rc = cfg.run_config(cfg.efficiency_architecture);
  log << "== experiment 3: intra-subject TTO, " << rc.arch.label() << "\n";
  const auto inter = read_run_summary(arch_dir / "inter" / "summary.csv");
  const auto intra = tto_stage(rc, cohort, TtoMode::Intra, arch_dir / "inter", arch_dir / "intra", log);
  EvalOptions eo;
  eo.runs = arch_dir / "intra";
  eo.baseline_runs = arch_dir / "inter";
  eo.workers = rc.workers;
  const auto evals = cmd_eval(eo, cohort, arch_dir / "eval_intra", log);

  std::vector<FractionRow> rows;
  for (const auto& r : intra) {
    FractionRow row;
    row.subject = r.subject;
    row.ood = r.ood;
    row.intra_iterations = r.iterations;
    row.intra_status = r.status;
    const auto it = std::find_if(inter.begin(), inter.end(), [&](const auto& x) { return x.subject == r.subject; });
    if (it != inter.end()) row.inter_iterations = it->iterations;
    const auto ev = std::find_if(evals.begin(), evals.end(), [&](const auto& e) { return e.subject == r.subject; });
    if (ev != evals.end()) {
      row.dsc_before = subject_mean(ev->baseline, false);
      row.dsc_after = subject_mean(ev->scores, false);
    }
    rows.push_back(row);
  }
  return rows;
}

BenchmarkReport run_benchmark(const BenchmarkConfig& cfg, const fs::path& out, CommandLog log) {
  cfg.validate();
  fs::create_directories(out);
  write_json_file(Json(cfg), out / "config.json");

  Cohort cohort;
  const fs::path cohort_dir = out / "cohort";
  if (fs::exists(cohort_dir / "cohort.json")) {
    cohort = read_cohort(cohort_dir);
    if (!(cohort.spec == cfg.base.synth)) throw ConfigError(cohort_dir.string() + " was generated from another spec");
  } else {
    cohort = cmd_synth(cfg.base, cohort_dir, log);
  }

  BenchmarkReport r;
  for (std::size_t i = 0; i < cfg.architectures.size(); ++i)
    r.experiment1.push_back(run_experiment_1(cfg, i, cohort, out, log));

  const ArchitectureSpec& eff = cfg.architectures[cfg.efficiency_architecture];
  const fs::path eff_dir = out / architecture_dir(eff);
  r.efficiency_label = eff.label();
  r.experiment2 = run_experiment_2(cfg, cohort, eff_dir, log);
  r.experiment3 = run_experiment_3(cfg, cohort, eff_dir, log);

  // Criterion 6.
  {
    bool direction = true;
    double worst_delta = INFINITY, worst_ood = INFINITY;
    std::ostringstream detail;
    for (const auto& a : r.experiment1) {
      direction = direction && a.individualized_dsc >= a.population_dsc;
      worst_delta = std::min(worst_delta, a.dsc_delta());
      worst_ood = std::min(worst_ood, a.ood_dsc_delta());
      detail << a.label << ": " << a.population_dsc << " -> " << a.individualized_dsc << " (ood "
             << a.ood_population_dsc << " -> " << a.ood_individualized_dsc << "); ";
    }
    r.assertions.push_back({6, "individualized mean DSC >= population, every architecture", direction, worst_delta,
                            0.0, detail.str()});
    r.assertions.push_back({6, "OOD mean DSC gain >= 0.01, every architecture", worst_ood >= 0.01, worst_ood, 0.01,
                            "smallest OOD gain over architectures"});
  }
  // Criterion 7.
  {
    std::vector<double> scratch, inter;
    bool all_converged = true;
    for (const auto& e : r.experiment2) {
      scratch.push_back(e.scratch_iterations);
      inter.push_back(e.inter_iterations);
      all_converged = all_converged && e.inter_status == "converged" && e.inter_iterations < cfg.base.warm_rule.max_iters;
    }
    r.median_scratch = median(scratch);
    r.median_inter = median(inter);
    r.assertions.push_back({7, "median scratch iterations >= 3 x median inter", r.median_scratch >= 3.0 * r.median_inter,
                            r.median_scratch / r.median_inter, 3.0, "ratio of medians"});
    r.assertions.push_back({7, "every inter run converges before its cap", all_converged,
                            *std::max_element(inter.begin(), inter.end()), double(cfg.base.warm_rule.max_iters),
                            "largest inter iteration count"});
  }
  // Criterion 8.
  {
    std::vector<double> intra, inter;
    double before = 0.0, after = 0.0;
    for (const auto& f : r.experiment3) {
      intra.push_back(f.intra_iterations);
      inter.push_back(f.inter_iterations);
      before += f.dsc_before;
      after += f.dsc_after;
    }
    r.median_intra = median(intra);
    r.median_inter_fraction1 = median(inter);
    r.mean_dsc_before = before / r.experiment3.size();
    r.mean_dsc_after = after / r.experiment3.size();
    r.assertions.push_back({8, "median intra iterations <= median inter iterations",
                            r.median_intra <= r.median_inter_fraction1, r.median_intra, r.median_inter_fraction1,
                            "fraction 2 vs fraction 1"});
    r.assertions.push_back({8, "mean DSC after intra >= before - 0.002", r.mean_dsc_after >= r.mean_dsc_before - 0.002,
                            r.mean_dsc_after - r.mean_dsc_before, -0.002, "after minus before"});
  }

  write_json_file(report_to_json(r), out / "benchmark.json");
  std::ofstream summary(out / "summary.txt", std::ios::trunc);
  summary << report_summary(r);
  log << report_summary(r);
  return r;
}

Json report_to_json(const BenchmarkReport& r) {
  Json exp1 = Json::array();
  for (const auto& a : r.experiment1) {
    exp1.push_back({{"architecture", a.label},
                    {"population_dsc", a.population_dsc},
                    {"individualized_dsc", a.individualized_dsc},
                    {"delta_dsc", a.dsc_delta()},
                    {"population_hd95_mm", a.population_hd95},
                    {"individualized_hd95_mm", a.individualized_hd95},
                    {"delta_hd95_mm", a.population_hd95 - a.individualized_hd95},
                    {"ood_population_dsc", a.ood_population_dsc},
                    {"ood_individualized_dsc", a.ood_individualized_dsc},
                    {"ood_delta_dsc", a.ood_dsc_delta()},
                    {"epoch_loss", a.epoch_loss},
                    {"flagged_subjects", a.flagged_subjects}});
  }
  Json exp2 = Json::array();
  for (const auto& e : r.experiment2) {
    exp2.push_back({{"subject", e.subject},
                    {"ood", e.ood},
                    {"scratch_iterations", e.scratch_iterations},
                    {"inter_iterations", e.inter_iterations},
                    {"scratch_ms", e.scratch_ms},
                    {"inter_ms", e.inter_ms},
                    {"scratch_status", e.scratch_status},
                    {"inter_status", e.inter_status}});
  }
  Json exp3 = Json::array();
  for (const auto& f : r.experiment3) {
    exp3.push_back({{"subject", f.subject},
                    {"ood", f.ood},
                    {"inter_iterations", f.inter_iterations},
                    {"intra_iterations", f.intra_iterations},
                    {"dsc_before", f.dsc_before},
                    {"dsc_after", f.dsc_after},
                    {"intra_status", f.intra_status}});
  }
  Json assertions = Json::array();
  for (const auto& a : r.assertions) {
    assertions.push_back({{"criterion", a.criterion},
                          {"name", a.name},
                          {"pass", a.pass},
                          {"measured", a.measured},
                          {"threshold", a.threshold},
                          {"detail", a.detail}});
  }
  return Json{{"experiment_1", exp1},
              {"experiment_2",
               {{"architecture", r.efficiency_label},
                {"runs", exp2},
                {"median_scratch_iterations", r.median_scratch},
                {"median_inter_iterations", r.median_inter},
                {"ratio", r.median_inter > 0 ? r.median_scratch / r.median_inter : 0.0}}},
              {"experiment_3",
               {{"architecture", r.efficiency_label},
                {"runs", exp3},
                {"median_inter_iterations", r.median_inter_fraction1},
                {"median_intra_iterations", r.median_intra},
                {"mean_dsc_before", r.mean_dsc_before},
                {"mean_dsc_after", r.mean_dsc_after}}},
              {"assertions", assertions},
              {"passed", r.passed()}};
}

std::string report_summary(const BenchmarkReport& r) {
  std::ostringstream s;
  char buf[256];
  s << "Experiment 1: population vs individualized (test cohort means)\n";
  std::snprintf(buf, sizeof buf, "  %-22s %8s %8s %8s %9s %9s %8s %8s\n", "architecture", "pop DSC", "ind DSC", "delta",
                "pop HD95", "ind HD95", "OOD pop", "OOD ind");
  s << buf;
  for (const auto& a : r.experiment1) {
    std::snprintf(buf, sizeof buf, "  %-22s %8.4f %8.4f %+8.4f %9.3f %9.3f %8.4f %8.4f\n", a.label.c_str(),
                  a.population_dsc, a.individualized_dsc, a.dsc_delta(), a.population_hd95, a.individualized_hd95,
                  a.ood_population_dsc, a.ood_individualized_dsc);
    s << buf;
    if (!a.flagged_subjects.empty()) {
      s << "    flagged:";
      for (const auto& f : a.flagged_subjects) s << ' ' << f;
      s << '\n';
    }
  }
  s << "\nExperiment 2: scratch vs inter (" << r.efficiency_label << ")\n";
  for (const auto& e : r.experiment2) {
    std::snprintf(buf, sizeof buf, "  %s%s scratch %4d it %8.1f s | inter %4d it %8.1f s\n", e.subject.c_str(),
                  e.ood ? "*" : " ", e.scratch_iterations, e.scratch_ms / 1000, e.inter_iterations, e.inter_ms / 1000);
    s << buf;
  }
  std::snprintf(buf, sizeof buf, "  median scratch %.1f, median inter %.1f, ratio %.2f\n", r.median_scratch,
                r.median_inter, r.median_inter > 0 ? r.median_scratch / r.median_inter : 0.0);
  s << buf;
  s << "\nExperiment 3: inter (fraction 1) vs intra (fraction 2) (" << r.efficiency_label << ")\n";
  for (const auto& f : r.experiment3) {
    std::snprintf(buf, sizeof buf, "  %s%s inter %4d it | intra %4d it | DSC %.4f -> %.4f\n", f.subject.c_str(),
                  f.ood ? "*" : " ", f.inter_iterations, f.intra_iterations, f.dsc_before, f.dsc_after);
    s << buf;
  }
  std::snprintf(buf, sizeof buf, "  median inter %.1f, median intra %.1f, mean DSC %.4f -> %.4f\n",
                r.median_inter_fraction1, r.median_intra, r.mean_dsc_before, r.mean_dsc_after);
  s << buf << "\nAssertions\n";
  for (const auto& a : r.assertions) {
    std::snprintf(buf, sizeof buf, "  [%s] criterion %d: %s (measured %.4g, threshold %.4g)\n", a.pass ? "PASS" : "FAIL",
                  a.criterion, a.name.c_str(), a.measured, a.threshold);
    s << buf;
  }
  s << "(* = out-of-distribution subject)\n";
  return s.str();
}

}  // namespace ttoreg
